#ifndef CAPTIONER_TENSOR_HPP_
#define CAPTIONER_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace cap {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

class Tape;

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  Tape* tape = nullptr;
  int node = -1;
};
}  // namespace detail

// Dense row-major tensor handle (rank 0/1/2). Copies share storage.
// A tensor participates in autodiff iff it was created through a Tape
// (directly via Tape::variable or as the result of an op with a taped input).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }

  const std::vector<double>& values() const { return d_->values; }
  double item() const;
  double at(std::size_t i) const { return d_->values[i]; }
  double at(std::size_t i, std::size_t j) const {
    return d_->values[i * d_->shape[1] + j];
  }

  Tape* tape() const { return d_ ? d_->tape : nullptr; }
  int node() const { return d_ ? d_->node : -1; }

  const std::shared_ptr<detail::TensorData>& ptr() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
  friend class Tape;
  friend Tensor make_op_result(Shape, std::vector<double>, Tape*);
};

using GradientMap = std::unordered_map<int, Tensor>;

// Records primitive ops in topological order and replays them in reverse.
class Tape {
 public:
  using BackwardFn =
      std::function<void(const std::vector<double>& out_grad, Tape& tape)>;

  // Leaf tensor whose gradient is materialized by backward().
  Tensor variable(Shape shape, std::vector<double> values);
  Tensor variable(const Tensor& init);

  // Gradient of a scalar loss w.r.t. every variable on this tape,
  // keyed by node id. Unreachable variables get zero gradients.
  GradientMap backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  int record(const std::shared_ptr<detail::TensorData>& out,
             std::vector<int> inputs, BackwardFn back, bool leaf = false);
  std::vector<double>& grad_slot(int node);

 private:
  struct Node {
    std::vector<int> inputs;
    BackwardFn back;
    Shape shape;
    bool leaf = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// Primitive ops. Every op validates operand shapes and throws
// std::invalid_argument naming the op and both shapes on mismatch.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor add_scalar(const Tensor& a, double k);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matvec(const Tensor& a, const Tensor& x);
Tensor vecmat(const Tensor& x, const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a);      // vector, or row-wise on a matrix
Tensor log_softmax(const Tensor& a);  // vector only
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);
Tensor concat(const Tensor& a, const Tensor& b);  // vectors
Tensor mean_rows(const Tensor& m);
Tensor sum(const Tensor& a);
Tensor pick(const Tensor& v, std::size_t index);
// Inverted dropout: mask entries are 0 or 1/keep. keep == 1 is the identity.
Tensor dropout(const Tensor& a, double keep, std::mt19937& rng);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;
  std::string message;
};

// fn maps a fresh tape and a variable at `point` to a scalar loss.
// Compares the taped gradient against central differences per coordinate.
using TensorFn = std::function<Tensor(Tape&, const Tensor&)>;
GradCheckReport grad_check(const TensorFn& fn, const Tensor& point,
                           double step);

}  // namespace cap

#endif  // CAPTIONER_TENSOR_HPP_
