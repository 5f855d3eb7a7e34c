#include "mmkgl/tensor.h"

#include <cmath>
#include <limits>
#include <sstream>

namespace mmkgl {
namespace {

Tape& tape_of(const Tensor& a) {
  if (!a.valid()) throw ContractError("operation on an empty tensor handle");
  return *a.tape();
}

Tape& common_tape(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a);
  if (&t != &tape_of(b)) throw ContractError("operands live on different tapes");
  return t;
}

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y, const char* what, const Matrix& a,
                           const Matrix& b) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  throw DimensionError(std::string(what) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sums a broadcast gradient back down to the operand's shape.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

const Matrix& Tensor::value() const { return tape_of(*this).value_of(id_); }
const Matrix& Tensor::grad() const { return tape_of(*this).grad_of(id_); }
bool Tensor::requires_grad() const { return tape_of(*this).requires_grad(id_); }

double Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionError("item() on a " + shape_str(v) + " tensor");
  return v(0, 0);
}

// ---- Tape -----------------------------------------------------------------

Tensor Tape::record(Matrix value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Tensor Tape::scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Tensor Tape::variable(Matrix value) { return record(std::move(value), true, nullptr); }

Tensor Tape::parameter(Parameter& p) {
  Tensor t = record(p.value, true, nullptr);
  nodes_.back().sink = &p;
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
  return t;
}

void Tape::accumulate(const Tensor& target, const Matrix& contribution) {
  Node& n = nodes_[target.id()];
  if (!n.requires_grad) return;
  if (contribution.rows() != n.value.rows() || contribution.cols() != n.value.cols())
    throw DimensionError("gradient shape " + shape_str(contribution) + " does not match value " +
                         shape_str(n.value));
  if (n.grad.size() == 0)
    n.grad = contribution;
  else
    n.grad += contribution;
}

void Tape::backward(Tensor loss) {
  if (loss.tape() != this) throw ContractError("loss is not recorded on this tape");
  if (loss.value().size() != 1)
    throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.value()));
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(Tensor output, const Matrix& seed) {
  if (output.tape() != this) throw ContractError("output is not recorded on this tape");
  if (nodes_.empty()) throw ContractError("backward() on an empty tape");
  if (consumed_) throw ContractError("backward() called twice without zero_grad() or reset()");
  consumed_ = true;
  accumulate(output, seed);
  run_backward(output.id());
}

void Tape::run_backward(std::size_t from) {
  for (std::size_t i = from + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (n.sink != nullptr) n.sink->grad += n.grad;
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
  consumed_ = false;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions differ (" + shape_str(av) + " * " +
                         shape_str(bv) + ")");
  Matrix out(av.rows(), bv.cols());
  out.noalias() = av * bv;
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    if (a.requires_grad()) {
                      Matrix ga(g.rows(), b.rows());
                      ga.noalias() = g * b.value().transpose();
                      tp.accumulate(a, ga);
                    }
                    if (b.requires_grad()) {
                      Matrix gb(a.cols(), g.cols());
                      gb.noalias() = a.value().transpose() * g;
                      tp.accumulate(b, gb);
                    }
                  });
}

Tensor matmul_ordered(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions differ (" + shape_str(av) + " * " +
                         shape_str(bv) + ")");
  // Blocked kernels treat row tails differently, so sum each entry directly.
  Matrix out(av.rows(), bv.cols());
  for (Eigen::Index j = 0; j < bv.cols(); ++j) {
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < av.cols(); ++k) s += av(i, k) * bv(k, j);
      out(i, j) = s;
    }
  }
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    if (a.requires_grad()) {
                      Matrix ga(g.rows(), b.rows());
                      ga.noalias() = g * b.value().transpose();
                      tp.accumulate(a, ga);
                    }
                    if (b.requires_grad()) {
                      Matrix gb(a.cols(), g.cols());
                      gb.noalias() = a.value().transpose() * g;
                      tp.accumulate(b, gb);
                    }
                  });
}

Tensor transpose(const Tensor& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().transpose(), a.requires_grad(),
                  [a](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g.transpose());
                  });
}

// ---- broadcasting binary ops ----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "add", av, bv);
  Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "add", av, bv);
  Matrix out = expand(av, r, c) + expand(bv, r, c);
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    if (a.requires_grad()) tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
                    if (b.requires_grad()) tp.accumulate(b, reduce_to(g, b.rows(), b.cols()));
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "sub", av, bv);
  Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "sub", av, bv);
  Matrix out = expand(av, r, c) - expand(bv, r, c);
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    if (a.requires_grad()) tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
                    if (b.requires_grad()) tp.accumulate(b, -reduce_to(g, b.rows(), b.cols()));
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "mul", av, bv);
  Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "mul", av, bv);
  Matrix out = expand(av, r, c).cwiseProduct(expand(bv, r, c));
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [a, b, r, c](Tape& tp, const Matrix&, const Matrix& g) {
                    if (a.requires_grad())
                      tp.accumulate(a, reduce_to(g.cwiseProduct(expand(b.value(), r, c)),
                                                 a.rows(), a.cols()));
                    if (b.requires_grad())
                      tp.accumulate(b, reduce_to(g.cwiseProduct(expand(a.value(), r, c)),
                                                 b.rows(), b.cols()));
                  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if ((bv.array() == 0.0).any()) throw DomainError("div: zero divisor");
  Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "div", av, bv);
  Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "div", av, bv);
  Matrix out = expand(av, r, c).cwiseQuotient(expand(bv, r, c));
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [a, b, r, c](Tape& tp, const Matrix& out, const Matrix& g) {
                    Matrix bb = expand(b.value(), r, c);
                    if (a.requires_grad())
                      tp.accumulate(a, reduce_to(g.cwiseQuotient(bb), a.rows(), a.cols()));
                    if (b.requires_grad())
                      tp.accumulate(b, reduce_to(-g.cwiseProduct(out).cwiseQuotient(bb), b.rows(),
                                                 b.cols()));
                  });
}

// ---- unary ops ------------------------------------------------------------

Tensor scale(const Tensor& a, double factor) {
  Tape& t = tape_of(a);
  return t.record(a.value() * factor, a.requires_grad(),
                  [a, factor](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g * factor);
                  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  Tape& t = tape_of(a);
  return t.record(a.value().array() + offset, a.requires_grad(),
                  [a](Tape& tp, const Matrix&, const Matrix& g) { tp.accumulate(a, g); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor leaky_relu(const Tensor& a, double slope) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return t.record(std::move(out), a.requires_grad(),
                  [a, slope](Tape& tp, const Matrix&, const Matrix& g) {
                    Matrix d = a.value().unaryExpr(
                        [slope](double x) { return x > 0.0 ? 1.0 : slope; });
                    tp.accumulate(a, g.cwiseProduct(d));
                  });
}

Tensor exp(const Tensor& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().array().exp().matrix(), a.requires_grad(),
                  [a](Tape& tp, const Matrix& out, const Matrix& g) {
                    tp.accumulate(a, g.cwiseProduct(out));
                  });
}

Tensor log(const Tensor& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (!(av.array() > 0.0).all())
    throw DomainError("log of a non-positive value (clamp probabilities to [eps, 1-eps] first)");
  return t.record(av.array().log().matrix(), a.requires_grad(),
                  [a](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g.cwiseQuotient(a.value()));
                  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(out), a.requires_grad(),
                  [a, lo, hi](Tape& tp, const Matrix&, const Matrix& g) {
                    Matrix d = a.value().unaryExpr(
                        [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
                    tp.accumulate(a, g.cwiseProduct(d));
                  });
}

Tensor rsqrt_or_zero(const Tensor& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if ((av.array() < 0.0).any()) throw DomainError("rsqrt of a negative value");
  Matrix out = av.unaryExpr([](double x) { return x > 0.0 ? 1.0 / std::sqrt(x) : 0.0; });
  return t.record(std::move(out), a.requires_grad(),
                  [a](Tape& tp, const Matrix& out, const Matrix& g) {
                    // d/dx x^-1/2 = -1/2 x^-3/2 = -1/2 out^3
                    Matrix d = out.unaryExpr([](double y) { return -0.5 * y * y * y; });
                    tp.accumulate(a, g.cwiseProduct(d));
                  });
}

// ---- softmax --------------------------------------------------------------

namespace {

Matrix softmax_backward(const Matrix& out, const Matrix& g) {
  // dx_ij = y_ij (g_ij - sum_k g_ik y_ik)
  Vector dot = g.cwiseProduct(out).rowwise().sum();
  Matrix dx = g;
  dx.colwise() -= dot;
  return dx.cwiseProduct(out);
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    double m = av.row(i).maxCoeff();
    out.row(i) = (av.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return t.record(std::move(out), a.requires_grad(),
                  [a](Tape& tp, const Matrix& out, const Matrix& g) {
                    tp.accumulate(a, softmax_backward(out, g));
                  });
}

Tensor masked_softmax_rows(const Tensor& a, const Mask& mask) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (mask.rows() != av.rows() || mask.cols() != av.cols())
    throw DimensionError("masked_softmax_rows: mask shape differs from input " + shape_str(av));
  Matrix out = Matrix::Zero(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < av.cols(); ++j)
      if (mask(i, j)) m = std::max(m, av(i, j));
    if (!std::isfinite(m))
      throw ContractError("masked_softmax_rows: row " + std::to_string(i) + " has no entries");
    double total = 0.0;
    for (Eigen::Index j = 0; j < av.cols(); ++j) {
      if (!mask(i, j)) continue;
      out(i, j) = std::exp(av(i, j) - m);
      total += out(i, j);
    }
    out.row(i) /= total;
  }
  // Off-mask outputs are exactly zero, so the unmasked backward formula
  // already yields zero gradient there.
  return t.record(std::move(out), a.requires_grad(),
                  [a](Tape& tp, const Matrix& out, const Matrix& g) {
                    tp.accumulate(a, softmax_backward(out, g));
                  });
}

// ---- reductions and reshaping --------------------------------------------

Tensor sum(const Tensor& a) {
  Tape& t = tape_of(a);
  return t.record(Matrix::Constant(1, 1, a.value().sum()), a.requires_grad(),
                  [a](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                  });
}

Tensor row_sum(const Tensor& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().rowwise().sum(), a.requires_grad(),
                  [a](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g.replicate(1, a.cols()));
                  });
}

Tensor normalize_rows(const Tensor& a, double eps) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Vector inv(av.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    double n = av.row(i).norm();
    inv(i) = n < eps ? 0.0 : 1.0 / n;
  }
  Matrix out = inv.asDiagonal() * av;
  return t.record(std::move(out), a.requires_grad(),
                  [a, inv](Tape& tp, const Matrix& out, const Matrix& g) {
                    // d(x/|x|) = (g - y (y.g)) / |x|
                    Vector dot = g.cwiseProduct(out).rowwise().sum();
                    Matrix d = g;
                    d -= dot.asDiagonal() * out;
                    tp.accumulate(a, inv.asDiagonal() * d);
                  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows())
    throw DimensionError("slice_rows out of range");
  return t.record(a.value().middleRows(start, count), a.requires_grad(),
                  [a, start, count](Tape& tp, const Matrix&, const Matrix& g) {
                    Matrix full = Matrix::Zero(a.rows(), a.cols());
                    full.middleRows(start, count) = g;
                    tp.accumulate(a, full);
                  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols())
    throw DimensionError("slice_cols out of range");
  return t.record(a.value().middleCols(start, count), a.requires_grad(),
                  [a, start, count](Tape& tp, const Matrix&, const Matrix& g) {
                    Matrix full = Matrix::Zero(a.rows(), a.cols());
                    full.middleCols(start, count) = g;
                    tp.accumulate(a, full);
                  });
}

Tensor hconcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("hconcat of nothing");
  Tape& t = tape_of(parts.front());
  Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (&tape_of(p) != &t) throw ContractError("operands live on different tapes");
    if (p.rows() != rows) throw DimensionError("hconcat: row counts differ");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Tensor& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return t.record(std::move(out), rg, [parts](Tape& tp, const Matrix&, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Tensor& p : parts) {
      if (p.requires_grad()) tp.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Tensor row_outer(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) throw DimensionError("row_outer: row counts differ");
  const Eigen::Index p = av.cols();
  const Eigen::Index q = bv.cols();
  Matrix out(av.rows(), p * q);
  for (Eigen::Index i = 0; i < av.rows(); ++i)
    for (Eigen::Index x = 0; x < p; ++x)
      for (Eigen::Index y = 0; y < q; ++y) out(i, x * q + y) = av(i, x) * bv(i, y);
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [a, b, p, q](Tape& tp, const Matrix&, const Matrix& g) {
                    const Matrix& av = a.value();
                    const Matrix& bv = b.value();
                    Matrix ga = Matrix::Zero(av.rows(), p);
                    Matrix gb = Matrix::Zero(bv.rows(), q);
                    for (Eigen::Index i = 0; i < av.rows(); ++i)
                      for (Eigen::Index x = 0; x < p; ++x)
                        for (Eigen::Index y = 0; y < q; ++y) {
                          ga(i, x) += g(i, x * q + y) * bv(i, y);
                          gb(i, y) += g(i, x * q + y) * av(i, x);
                        }
                    if (a.requires_grad()) tp.accumulate(a, ga);
                    if (b.requires_grad()) tp.accumulate(b, gb);
                  });
}

// ---- spectral helpers -----------------------------------------------------

namespace {

// Power iteration that keeps every unit iterate u_0..u_m and the norms n_k
// with u_k = M u_{k-1} / n_k, for differentiating the estimate.
struct PowerTrace {
  std::vector<Vector> iterates;
  std::vector<double> norms;
  double start_norm = 0.0;  // ||w|| of the derived start, 0 for the fixed one
};

double power_iterate(const Matrix& m, int max_iterations, double rel_tol, PowerTrace& trace) {
  const Eigen::Index n = m.rows();
  if (n == 0 || m.cols() != n) throw DimensionError("power_iteration needs a square matrix");
  // Start from w_i = 1 + sum_j M_ij^2, which relabels with the matrix, so the
  // estimate commutes with permutations. When that start is already an
  // eigenvector (regular graphs, where it is constant) fall back to a fixed,
  // uneven start so the top eigenvector is not missed.
  Vector v = Vector::Ones(n) + m.rowwise().squaredNorm();
  trace.start_norm = v.norm();
  v /= trace.start_norm;
  const Vector mv = m * v;
  const double scale = std::max(mv.norm(), 1e-300);
  if ((mv - v.dot(mv) * v).norm() <= 1e-10 * scale) {
    for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.5 * std::sin(1.0 + 2.0 * static_cast<double>(i));
    v.normalize();
    trace.start_norm = 0.0;
  }
  trace.iterates.push_back(v);
  double lambda = v.dot(m * v);
  Vector w(n);
  for (int it = 0; it < max_iterations; ++it) {
    w.noalias() = m * v;
    double norm = w.norm();
    if (norm == 0.0) {
      lambda = 0.0;
      break;
    }
    v = w / norm;
    trace.iterates.push_back(v);
    trace.norms.push_back(norm);
    double next = v.dot(m * v);
    double change = std::abs(next - lambda);
    lambda = next;
    if (change <= rel_tol * std::max(std::abs(lambda), 1e-300)) break;
  }
  return lambda;
}

}  // namespace

double power_iteration(const Matrix& m, int max_iterations, double rel_tol, Vector* vector) {
  PowerTrace trace;
  double lambda = power_iterate(m, max_iterations, rel_tol, trace);
  if (vector != nullptr) *vector = trace.iterates.back();
  return lambda;
}

Tensor lambda_max(const Tensor& a, int max_iterations, double rel_tol, double floor) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows() != av.cols()) throw DimensionError("lambda_max needs a square matrix");
  PowerTrace trace;
  double lambda = power_iterate(av, max_iterations, rel_tol, trace);
  bool floored = !(lambda > floor);
  if (floored) lambda = floor;
  // Differentiates the truncated iteration itself, start vector included.
  // Every stage feeds a scale-invariant Rayleigh quotient, so the norms act
  // as constants; v v^T is only the limit of this gradient and is off by
  // the eigenvector's residual error.
  return t.record(Matrix::Constant(1, 1, lambda), a.requires_grad() && !floored,
                  [a, lambda, trace = std::move(trace)](Tape& tp, const Matrix&, const Matrix& g) {
                    const Matrix& m = a.value();
                    const auto& iterates = trace.iterates;
                    const Vector& u = iterates.back();
                    Matrix dm = u * u.transpose();
                    Vector gu = (m + m.transpose()) * u - 2.0 * lambda * u;
                    for (std::size_t k = trace.norms.size(); k > 0; --k) {
                      gu /= trace.norms[k - 1];
                      dm.noalias() += gu * iterates[k - 1].transpose();
                      gu = m.transpose() * gu;
                    }
                    if (trace.start_norm > 0.0)  // w_i = 1 + sum_j M_ij^2
                      dm += (2.0 / trace.start_norm) * gu.asDiagonal() * m;
                    tp.accumulate(a, g(0, 0) * dm);
                  });
}

}  // namespace mmkgl
