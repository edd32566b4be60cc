#include "captioner/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cap {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a) + " vs " + shape_str(b));
}

Tape* joint_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->defined() || t->tape() == nullptr) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw std::invalid_argument("op mixes tensors from two different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

std::vector<int> taped_inputs(std::initializer_list<const Tensor*> ts) {
  std::vector<int> ids;
  for (const Tensor* t : ts) {
    if (t->defined() && t->node() >= 0) ids.push_back(t->node());
  }
  return ids;
}

}  // namespace

Tensor make_op_result(Shape shape, std::vector<double> values, Tape* tape) {
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->tape = tape;
  return Tensor(std::move(d));
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor: data length " +
                                std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  d_ = std::make_shared<detail::TensorData>();
  d_->shape = std::move(shape);
  d_->values = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  std::vector<double> vals(shape_numel(shape), v);
  return Tensor(std::move(shape), std::move(vals));
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) +
                                " is not a scalar");
  }
  return d_->values[0];
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Tensor t = make_op_result(std::move(shape), std::move(values), this);
  record(t.ptr(), {}, BackwardFn{}, /*leaf=*/true);
  return t;
}

Tensor Tape::variable(const Tensor& init) {
  return variable(init.shape(), init.values());
}

int Tape::record(const std::shared_ptr<detail::TensorData>& out,
                 std::vector<int> inputs, BackwardFn back, bool leaf) {
  Node node;
  node.inputs = std::move(inputs);
  node.back = std::move(back);
  node.shape = out->shape;
  node.leaf = leaf;
  nodes_.push_back(std::move(node));
  out->tape = this;
  out->node = static_cast<int>(nodes_.size()) - 1;
  return out->node;
}

std::vector<double>& Tape::grad_slot(int node) {
  auto& g = grads_[static_cast<std::size_t>(node)];
  if (g.empty()) {
    g.assign(shape_numel(nodes_[static_cast<std::size_t>(node)].shape), 0.0);
  }
  return g;
}

GradientMap Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.tape() != this || loss.node() < 0) {
    throw std::invalid_argument("backward: loss is not on this tape");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss of shape " +
                                shape_str(loss.shape()) + " is not a scalar");
  }
  grads_.assign(nodes_.size(), {});
  grad_slot(loss.node())[0] = 1.0;
  for (int i = loss.node(); i >= 0; --i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    const auto& g = grads_[static_cast<std::size_t>(i)];
    if (g.empty() || node.leaf || !node.back) continue;
    node.back(g, *this);
  }
  GradientMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf) continue;
    auto& g = grads_[i];
    if (g.empty()) g.assign(shape_numel(nodes_[i].shape), 0.0);
    out.emplace(static_cast<int>(i), Tensor(nodes_[i].shape, std::move(g)));
  }
  grads_.clear();
  return out;
}

namespace {

void accum(Tape& tape, int node, const std::vector<double>& contrib) {
  if (node < 0) return;
  auto& g = tape.grad_slot(node);
  for (std::size_t i = 0; i < contrib.size(); ++i) g[i] += contrib[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] + b.values()[i];
  Tape* tp = joint_tape({&a, &b});
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node(), bn = b.node();
    tp->record(r.ptr(), taped_inputs({&a, &b}),
               [an, bn](const std::vector<double>& og, Tape& t) {
                 accum(t, an, og);
                 accum(t, bn, og);
               });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] - b.values()[i];
  Tape* tp = joint_tape({&a, &b});
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node(), bn = b.node();
    tp->record(r.ptr(), taped_inputs({&a, &b}),
               [an, bn](const std::vector<double>& og, Tape& t) {
                 accum(t, an, og);
                 if (bn >= 0) {
                   auto& g = t.grad_slot(bn);
                   for (std::size_t i = 0; i < og.size(); ++i) g[i] -= og[i];
                 }
               });
  }
  return r;
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.dim(0))
    shape_error("add_rowvec", m.shape(), v.shape());
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = m.at(i, j) + v.at(j);
  Tape* tp = joint_tape({&m, &v});
  Tensor r = make_op_result(m.shape(), std::move(out), tp);
  if (tp) {
    int mn = m.node(), vn = v.node();
    tp->record(r.ptr(), taped_inputs({&m, &v}),
               [mn, vn, rows, cols](const std::vector<double>& og, Tape& t) {
                 accum(t, mn, og);
                 if (vn >= 0) {
                   auto& g = t.grad_slot(vn);
                   for (std::size_t i = 0; i < rows; ++i)
                     for (std::size_t j = 0; j < cols; ++j)
                       g[j] += og[i * cols + j];
                 }
               });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  Tape* tp = joint_tape({&a, &b});
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node(), bn = b.node();
    auto ad = a.ptr(), bd = b.ptr();
    tp->record(r.ptr(), taped_inputs({&a, &b}),
               [an, bn, ad, bd](const std::vector<double>& og, Tape& t) {
                 if (an >= 0) {
                   auto& g = t.grad_slot(an);
                   for (std::size_t i = 0; i < og.size(); ++i)
                     g[i] += og[i] * bd->values[i];
                 }
                 if (bn >= 0) {
                   auto& g = t.grad_slot(bn);
                   for (std::size_t i = 0; i < og.size(); ++i)
                     g[i] += og[i] * ad->values[i];
                 }
               });
  }
  return r;
}

Tensor scale(const Tensor& a, double k) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * k;
  Tape* tp = a.tape();
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node();
    tp->record(r.ptr(), taped_inputs({&a}),
               [an, k](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(an);
                 for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * k;
               });
  }
  return r;
}

Tensor add_scalar(const Tensor& a, double k) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + k;
  Tape* tp = a.tape();
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node();
    tp->record(r.ptr(), taped_inputs({&a}),
               [an](const std::vector<double>& og, Tape& t) {
                 accum(t, an, og);
               });
  }
  return r;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.at(p, j);
    }
  Tape* tp = joint_tape({&a, &b});
  Tensor r = make_op_result({m, n}, std::move(out), tp);
  if (tp) {
    int an = a.node(), bn = b.node();
    auto ad = a.ptr(), bd = b.ptr();
    tp->record(
        r.ptr(), taped_inputs({&a, &b}),
        [an, bn, ad, bd, m, k, n](const std::vector<double>& og, Tape& t) {
          if (an >= 0) {
            auto& g = t.grad_slot(an);  // og * b^T
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                  s += og[i * n + j] * bd->values[p * n + j];
                g[i * k + p] += s;
              }
          }
          if (bn >= 0) {
            auto& g = t.grad_slot(bn);  // a^T * og
            for (std::size_t p = 0; p < k; ++p)
              for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                  s += ad->values[i * k + p] * og[i * n + j];
                g[p * n + j] += s;
              }
          }
        });
  }
  return r;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    shape_error("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
      out[i * n + j] = s;
    }
  Tape* tp = joint_tape({&a, &b});
  Tensor r = make_op_result({m, n}, std::move(out), tp);
  if (tp) {
    int an = a.node(), bn = b.node();
    auto ad = a.ptr(), bd = b.ptr();
    tp->record(
        r.ptr(), taped_inputs({&a, &b}),
        [an, bn, ad, bd, m, k, n](const std::vector<double>& og, Tape& t) {
          if (an >= 0) {
            auto& g = t.grad_slot(an);  // og * b
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                  s += og[i * n + j] * bd->values[j * k + p];
                g[i * k + p] += s;
              }
          }
          if (bn >= 0) {
            auto& g = t.grad_slot(bn);  // og^T * a
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                  s += og[i * n + j] * ad->values[i * k + p];
                g[j * k + p] += s;
              }
          }
        });
  }
  return r;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.dim(1) != x.dim(0))
    shape_error("matvec", a.shape(), x.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.at(i, j) * x.at(j);
    out[i] = s;
  }
  Tape* tp = joint_tape({&a, &x});
  Tensor r = make_op_result({m}, std::move(out), tp);
  if (tp) {
    int an = a.node(), xn = x.node();
    auto ad = a.ptr(), xd = x.ptr();
    tp->record(r.ptr(), taped_inputs({&a, &x}),
               [an, xn, ad, xd, m, n](const std::vector<double>& og, Tape& t) {
                 if (an >= 0) {
                   auto& g = t.grad_slot(an);
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j)
                       g[i * n + j] += og[i] * xd->values[j];
                 }
                 if (xn >= 0) {
                   auto& g = t.grad_slot(xn);
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j)
                       g[j] += ad->values[i * n + j] * og[i];
                 }
               });
  }
  return r;
}

Tensor vecmat(const Tensor& x, const Tensor& a) {
  if (x.rank() != 1 || a.rank() != 2 || x.dim(0) != a.dim(0))
    shape_error("vecmat", x.shape(), a.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double xv = x.at(i);
    for (std::size_t j = 0; j < n; ++j) out[j] += xv * a.at(i, j);
  }
  Tape* tp = joint_tape({&x, &a});
  Tensor r = make_op_result({n}, std::move(out), tp);
  if (tp) {
    int xn = x.node(), an = a.node();
    auto xd = x.ptr(), ad = a.ptr();
    tp->record(r.ptr(), taped_inputs({&x, &a}),
               [xn, an, xd, ad, m, n](const std::vector<double>& og, Tape& t) {
                 if (xn >= 0) {
                   auto& g = t.grad_slot(xn);
                   for (std::size_t i = 0; i < m; ++i) {
                     double s = 0.0;
                     for (std::size_t j = 0; j < n; ++j)
                       s += ad->values[i * n + j] * og[j];
                     g[i] += s;
                   }
                 }
                 if (an >= 0) {
                   auto& g = t.grad_slot(an);
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j)
                       g[i * n + j] += xd->values[i] * og[j];
                 }
               });
  }
  return r;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
  Tape* tp = a.tape();
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node();
    auto rd = r.ptr();
    tp->record(r.ptr(), {an},
               [an, rd, bwd](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(an);
                 for (std::size_t i = 0; i < og.size(); ++i)
                   g[i] += og[i] * bwd(rd->values[i]);
               });
  }
  return r;
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y) { return y * (1.0 - y); });
}

namespace {

void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

}  // namespace

Tensor softmax(const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw std::invalid_argument("softmax: expected vector or matrix, got " +
                                shape_str(a.shape()));
  }
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t cols = a.rank() == 2 ? a.dim(1) : a.dim(0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < rows; ++i)
    softmax_row(a.values().data() + i * cols, out.data() + i * cols, cols);
  Tape* tp = a.tape();
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node();
    auto rd = r.ptr();
    tp->record(r.ptr(), {an},
               [an, rd, rows, cols](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(an);
                 for (std::size_t i = 0; i < rows; ++i) {
                   const double* y = rd->values.data() + i * cols;
                   const double* go = og.data() + i * cols;
                   double dot = 0.0;
                   for (std::size_t j = 0; j < cols; ++j) dot += go[j] * y[j];
                   for (std::size_t j = 0; j < cols; ++j)
                     g[i * cols + j] += y[j] * (go[j] - dot);
                 }
               });
  }
  return r;
}

Tensor log_softmax(const Tensor& a) {
  if (a.rank() != 1) {
    throw std::invalid_argument("log_softmax: expected vector, got " +
                                shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0);
  double mx = a.values()[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, a.values()[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(a.values()[i] - mx);
  const double logz = std::log(z) + mx;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] - logz;
  Tape* tp = a.tape();
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node();
    auto rd = r.ptr();
    tp->record(r.ptr(), {an},
               [an, rd, n](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(an);
                 double total = 0.0;
                 for (std::size_t i = 0; i < n; ++i) total += og[i];
                 for (std::size_t i = 0; i < n; ++i)
                   g[i] += og[i] - std::exp(rd->values[i]) * total;
               });
  }
  return r;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embed_rows: table must be a matrix, got " +
                                shape_str(table.shape()));
  }
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw std::invalid_argument("embed_rows: id " + std::to_string(id) +
                                  " out of range for table " +
                                  shape_str(table.shape()));
    }
  }
  std::vector<double> out(ids.size() * cols);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = table.at(static_cast<std::size_t>(ids[i]), j);
  Tape* tp = table.tape();
  Tensor r = make_op_result({ids.size(), cols}, std::move(out), tp);
  if (tp) {
    int tn = table.node();
    tp->record(r.ptr(), {tn},
               [tn, ids, cols](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(tn);
                 for (std::size_t i = 0; i < ids.size(); ++i)
                   for (std::size_t j = 0; j < cols; ++j)
                     g[static_cast<std::size_t>(ids[i]) * cols + j] +=
                         og[i * cols + j];
               });
  }
  return r;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1)
    shape_error("concat", a.shape(), b.shape());
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  Tape* tp = joint_tape({&a, &b});
  Tensor r = make_op_result({a.size() + b.size()}, std::move(out), tp);
  if (tp) {
    int an = a.node(), bn = b.node();
    const std::size_t na = a.size(), nb = b.size();
    tp->record(r.ptr(), taped_inputs({&a, &b}),
               [an, bn, na, nb](const std::vector<double>& og, Tape& t) {
                 if (an >= 0) {
                   auto& g = t.grad_slot(an);
                   for (std::size_t i = 0; i < na; ++i) g[i] += og[i];
                 }
                 if (bn >= 0) {
                   auto& g = t.grad_slot(bn);
                   for (std::size_t i = 0; i < nb; ++i) g[i] += og[na + i];
                 }
               });
  }
  return r;
}

Tensor mean_rows(const Tensor& m) {
  if (m.rank() != 2) {
    throw std::invalid_argument("mean_rows: expected matrix, got " +
                                shape_str(m.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += m.at(i, j);
  for (std::size_t j = 0; j < cols; ++j) out[j] /= static_cast<double>(rows);
  Tape* tp = m.tape();
  Tensor r = make_op_result({cols}, std::move(out), tp);
  if (tp) {
    int mn = m.node();
    tp->record(r.ptr(), {mn},
               [mn, rows, cols](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(mn);
                 for (std::size_t i = 0; i < rows; ++i)
                   for (std::size_t j = 0; j < cols; ++j)
                     g[i * cols + j] += og[j] / static_cast<double>(rows);
               });
  }
  return r;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tape* tp = a.tape();
  Tensor r = make_op_result({}, {s}, tp);
  if (tp) {
    int an = a.node();
    const std::size_t n = a.size();
    tp->record(r.ptr(), {an},
               [an, n](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(an);
                 for (std::size_t i = 0; i < n; ++i) g[i] += og[0];
               });
  }
  return r;
}

Tensor pick(const Tensor& v, std::size_t index) {
  if (v.rank() != 1 || index >= v.size()) {
    throw std::invalid_argument("pick: index " + std::to_string(index) +
                                " out of range for " + shape_str(v.shape()));
  }
  Tape* tp = v.tape();
  Tensor r = make_op_result({}, {v.at(index)}, tp);
  if (tp) {
    int vn = v.node();
    tp->record(r.ptr(), {vn},
               [vn, index](const std::vector<double>& og, Tape& t) {
                 t.grad_slot(vn)[index] += og[0];
               });
  }
  return r;
}

Tensor dropout(const Tensor& a, double keep, std::mt19937& rng) {
  if (keep <= 0.0 || keep > 1.0) {
    throw std::invalid_argument("dropout: keep probability " +
                                std::to_string(keep) + " not in (0,1]");
  }
  if (keep == 1.0) return a;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto mask = std::make_shared<std::vector<double>>(a.size());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    (*mask)[i] = unif(rng) < keep ? 1.0 / keep : 0.0;
    out[i] = a.values()[i] * (*mask)[i];
  }
  Tape* tp = a.tape();
  Tensor r = make_op_result(a.shape(), std::move(out), tp);
  if (tp) {
    int an = a.node();
    tp->record(r.ptr(), {an},
               [an, mask](const std::vector<double>& og, Tape& t) {
                 auto& g = t.grad_slot(an);
                 for (std::size_t i = 0; i < og.size(); ++i)
                   g[i] += og[i] * (*mask)[i];
               });
  }
  return r;
}

GradCheckReport grad_check(const TensorFn& fn, const Tensor& point,
                           double step) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be > 0");
  GradCheckReport report;

  Tape tape;
  Tensor x = tape.variable(point);
  Tensor loss = fn(tape, x);
  GradientMap grads = tape.backward(loss);
  const std::vector<double>& analytic = grads.at(x.node()).values();

  std::vector<double> vals = point.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double saved = vals[i];
    double f[2];
    for (int s = 0; s < 2; ++s) {
      vals[i] = saved + (s == 0 ? step : -step);
      Tape t2;
      Tensor x2 = t2.variable(point.shape(), vals);
      f[s] = fn(t2, x2).item();
    }
    vals[i] = saved;
    const double numeric = (f[0] - f[1]) / (2.0 * step);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      report.finite = false;
      report.worst_index = i;
      report.message = "non-finite value at coordinate " + std::to_string(i);
      return report;
    }
    const double denom =
        std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace cap
