#pragma once

// Dense 2-D tensors with a reverse-mode gradient tape.
//
// A Tape owns every value produced during one forward pass. Tensors are
// cheap handles (tape pointer + node index); nodes are appended in creation
// order, so that order is already a topological sort and backward() simply
// walks the node list from the end.
//
// Shapes are always (rows, cols). Scalars are 1x1, column vectors n x 1.
// Binary elementwise ops broadcast an operand along any axis of extent 1,
// which covers scalar-vs-matrix, row-vs-matrix, column-vs-matrix and the
// column (+) row outer form.

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mmkgl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Trainable storage that outlives a tape. Gradients accumulate into `grad`
/// when a tape holding this parameter runs backward.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Adjoint from the last backward pass; zero-sized if never reached.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  /// Convenience for 1x1 tensors.
  double item() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// out_value, out_grad; the closure pushes contributions via accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor scalar(double value);
  /// Leaf whose adjoint is kept on the tape (read it with Tensor::grad()).
  Tensor variable(Matrix value);
  /// Leaf bound to a Parameter; backward adds the adjoint into p.grad.
  Tensor parameter(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1. The loss must be 1x1.
  void backward(Tensor loss);
  /// Seeds an arbitrary adjoint for `output` (shape must match).
  void backward(Tensor output, const Matrix& seed);

  /// Clears adjoints so backward may run again over the same values.
  /// Parameter sinks are not touched.
  void zero_grad();
  /// Drops every node.
  void reset();

  std::size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  Tensor record(Matrix value, bool requires_grad, BackwardFn backward);
  void accumulate(const Tensor& target, const Matrix& contribution);
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* sink = nullptr;
  };

  void run_backward(std::size_t from);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// matmul whose entries are each summed in a fixed order from one row of `a`
/// and one column of `b`, so reordering rows of `a` reorders the result
/// exactly. Slower than matmul; meant for similarity graphs.
Tensor matmul_ordered(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Hadamard product (with broadcasting).
Tensor mul(const Tensor& a, const Tensor& b);
/// a / b elementwise; b must be nonzero.
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);

Tensor leaky_relu(const Tensor& a, double slope);
Tensor exp(const Tensor& a);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& a);
/// Gradient passes where lo <= a <= hi, zero elsewhere.
Tensor clamp(const Tensor& a, double lo, double hi);
/// Elementwise x^-1/2 with the convention 0 -> 0 (zero-degree nodes).
Tensor rsqrt_or_zero(const Tensor& a);

/// Row-wise softmax. Each row sums to one.
Tensor softmax_rows(const Tensor& a);
/// Row-wise softmax over the entries where mask is true; others are exactly
/// 0. Every row must keep at least one entry.
Tensor masked_softmax_rows(const Tensor& a, const Mask& mask);

/// Sum of all entries (1x1).
Tensor sum(const Tensor& a);
/// Row sums (n x 1).
Tensor row_sum(const Tensor& a);
/// Rows scaled to unit L2 norm; rows with norm < eps become zero (and
/// receive zero gradient).
Tensor normalize_rows(const Tensor& a, double eps = 1e-12);

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor hconcat(const std::vector<Tensor>& parts);

/// Per-row outer product flattened row-major: out(i, p*b.cols()+q) =
/// a(i,p) * b(i,q). `a` indexes the slow axis.
Tensor row_outer(const Tensor& a, const Tensor& b);

/// Largest eigenvalue of a symmetric matrix by power iteration (1x1).
/// The start vector is built from the matrix rows, so relabeling the matrix
/// relabels every iterate and leaves the estimate unchanged.
/// The gradient is that of the truncated iteration (it tends to v v^T as
/// the iterate converges). The estimate is floored at `floor`; below it the
/// gradient is zero.
Tensor lambda_max(const Tensor& symmetric, int max_iterations = 100, double rel_tol = 1e-8,
                  double floor = 1e-6);

/// Power iteration on a symmetric matrix. Returns the Rayleigh-quotient
/// estimate and writes the unit iterate to `vector` when non-null.
double power_iteration(const Matrix& symmetric, int max_iterations, double rel_tol,
                       Vector* vector = nullptr);

}  // namespace mmkgl
