#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is an immutable value (shape + shared data). Tensors created with
// Tape::variable() carry a handle into that tape; every operation with at
// least one such operand is recorded on the same tape, in topological order.
// Tape::backward() walks the record in reverse and returns gradients for every
// node. Tensors without a tape are constants and cost nothing to record.
//
// The tape must outlive every tensor bound to it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lnn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

class Tensor {
 public:
  /// Rank-0 zero.
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<double>>(std::move(data))) {
    if (data_->size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                       " does not match shape " + to_string(shape_));
    }
    for (double v : *data_) {
      if (!std::isfinite(v)) throw NumericError("non-finite tensor element");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor filled(Shape shape, double v) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return filled(std::move(shape), 1.0); }
  static Tensor eye(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(d));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(d));
  }
  static Tensor row(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  bool empty() const { return data_->empty(); }
  bool is_scalar() const { return data_->size() == 1; }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

  std::span<const double> data() const { return *data_; }
  const std::vector<double>& vec() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  double item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::optional<std::size_t> node_id() const {
    return tape_ ? std::optional<std::size_t>(node_) : std::nullopt;
  }

  /// Same value, no tape handle.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  bool same_values(const Tensor& o) const { return shape_ == o.shape_ && *data_ == *o.data_; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  sub,
  mul,
  div,
  sigmoid,
  tanh,
  exp,
  neg,
  log,
  abs,
  square,
  sum,
  mean,
  transpose,
  reshape,
  concat_rows,
  concat_cols,
  slice_rows,
  slice_cols,
  logdet_spd,
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_matrix(const std::vector<double>& d, std::size_t r, std::size_t c) {
  return ConstMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MutMap as_matrix(std::vector<double>& d, std::size_t r, std::size_t c) {
  return MutMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

struct Operand {
  std::optional<std::size_t> node;
  Tensor value;  // detached
};

struct Record {
  Op op = Op::leaf;
  Shape shape;
  std::vector<Operand> inputs;
  Tensor output;  // detached copy of the result value
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<double> aux;
};

}  // namespace detail

/// Gradients produced by one reverse pass, indexed by node id.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<std::vector<double>> g, std::vector<Shape> shapes)
      : grads_(std::move(g)), shapes_(std::move(shapes)) {}

  /// Gradient with respect to `t`; exact zeros when `t` did not influence the loss.
  Tensor of(const Tensor& t) const {
    const auto id = t.node_id();
    if (!id || *id >= grads_.size() || grads_[*id].empty()) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), grads_[*id]);
  }

  Tensor at_node(std::size_t id) const {
    if (id >= shapes_.size()) throw std::out_of_range("gradient node id out of range");
    if (grads_[id].empty()) return Tensor::zeros(shapes_[id]);
    return Tensor(shapes_[id], grads_[id]);
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable leaf holding `value`'s data.
  Tensor variable(const Tensor& value) {
    detail::Record r;
    r.op = Op::leaf;
    r.shape = value.shape();
    return push(std::move(r), value.detach());
  }

  std::size_t size() const { return records_.size(); }
  Op op_at(std::size_t i) const { return records_.at(i).op; }
  /// Node ids of a record's differentiable operands (absent for constants).
  std::vector<std::optional<std::size_t>> parents_of(std::size_t i) const {
    std::vector<std::optional<std::size_t>> out;
    for (const auto& in : records_.at(i).inputs) out.push_back(in.node);
    return out;
  }

  Gradients backward(const Tensor& loss) const;

  // Used by the op implementations.
  Tensor record(Op op, Tensor result, std::vector<detail::Operand> inputs, std::size_t begin = 0,
                std::size_t end = 0, std::vector<double> aux = {}) {
    detail::Record r;
    r.op = op;
    r.shape = result.shape();
    r.inputs = std::move(inputs);
    r.begin = begin;
    r.end = end;
    r.aux = std::move(aux);
    r.output = result.detach();
    return push(std::move(r), std::move(result));
  }

 private:
  Tensor push(detail::Record r, Tensor value) {
    records_.push_back(std::move(r));
    value.tape_ = this;
    value.node_ = records_.size() - 1;
    return value;
  }

  std::vector<detail::Record> records_;
};

namespace detail {

inline Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tape()) continue;
    if (tape && tape != t->tape()) throw std::invalid_argument("operands live on different tapes");
    tape = t->tape();
  }
  return tape;
}

inline Tape* common_tape(std::span<const Tensor> ts) {
  Tape* tape = nullptr;
  for (const Tensor& t : ts) {
    if (!t.tape()) continue;
    if (tape && tape != t.tape()) throw std::invalid_argument("operands live on different tapes");
    tape = t.tape();
  }
  return tape;
}

inline Operand operand(const Tensor& t) { return Operand{t.node_id(), t.detach()}; }

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " expects a matrix, got " + to_string(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul inner extents differ: " + to_string(a.shape()) + " * " +
                     to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  if (m && n && k) {
    detail::as_matrix(out, m, n).noalias() =
        detail::as_matrix(a.vec(), m, k) * detail::as_matrix(b.vec(), k, n);
  }
  Tensor result({m, n}, std::move(out));
  if (Tape* tape = detail::common_tape({&a, &b})) {
    return tape->record(Op::matmul, std::move(result), {detail::operand(a), detail::operand(b)});
  }
  return result;
}

enum class BinaryOp { add, sub, mul, div };

inline Tensor ew_binary(BinaryOp kind, const Tensor& a, const Tensor& b) {
  Shape shape;
  if (a.shape() == b.shape()) {
    shape = a.shape();
  } else if (a.is_scalar() && b.is_scalar()) {
    shape = a.rank() >= b.rank() ? a.shape() : b.shape();
  } else if (b.is_scalar()) {
    shape = a.shape();
  } else if (a.is_scalar()) {
    shape = b.shape();
  } else {
    throw ShapeError("elementwise shape mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t n = numel(shape);
  const bool sa = a.size() != n;  // a broadcast
  const bool sb = b.size() != n;
  const auto& av = a.vec();
  const auto& bv = b.vec();
  if (kind == BinaryOp::div) {
    for (double v : bv) {
      if (v == 0.0) throw DomainError("division by zero element");
    }
  }
  std::vector<double> out(n);
  auto apply = [&](auto f) {
    if (!sa && !sb) {
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[sa ? 0 : i], bv[sb ? 0 : i]);
    }
  };
  switch (kind) {
    case BinaryOp::add: apply([](double x, double y) { return x + y; }); break;
    case BinaryOp::sub: apply([](double x, double y) { return x - y; }); break;
    case BinaryOp::mul: apply([](double x, double y) { return x * y; }); break;
    case BinaryOp::div: apply([](double x, double y) { return x / y; }); break;
  }
  Tensor result(std::move(shape), std::move(out));
  if (Tape* tape = detail::common_tape({&a, &b})) {
    static constexpr Op ops[] = {Op::add, Op::sub, Op::mul, Op::div};
    return tape->record(ops[static_cast<int>(kind)], std::move(result),
                        {detail::operand(a), detail::operand(b)});
  }
  return result;
}

enum class UnaryOp { sigmoid, tanh, exp, neg, log, abs, square };

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor ew_unary(UnaryOp kind, const Tensor& x) {
  const auto& xv = x.vec();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    switch (kind) {
      case UnaryOp::sigmoid: out[i] = sigmoid_value(v); break;
      case UnaryOp::tanh: out[i] = std::tanh(v); break;
      case UnaryOp::exp: out[i] = std::exp(v); break;
      case UnaryOp::neg: out[i] = -v; break;
      case UnaryOp::log:
        if (!(v > 0.0)) throw DomainError("log of non-positive element");
        out[i] = std::log(v);
        break;
      case UnaryOp::abs: out[i] = std::abs(v); break;
      case UnaryOp::square: out[i] = v * v; break;
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = x.tape()) {
    static constexpr Op ops[] = {Op::sigmoid, Op::tanh, Op::exp,   Op::neg,
                                 Op::log,     Op::abs,  Op::square};
    return tape->record(ops[static_cast<int>(kind)], std::move(result), {detail::operand(x)});
  }
  return result;
}

enum class ReduceOp { sum, mean };

inline Tensor reduce(ReduceOp kind, const Tensor& x) {
  if (kind == ReduceOp::mean && x.empty()) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : x.vec()) s += v;
  if (kind == ReduceOp::mean) s /= static_cast<double>(x.size());
  Tensor result = Tensor::scalar(s);
  if (Tape* tape = x.tape()) {
    return tape->record(kind == ReduceOp::sum ? Op::sum : Op::mean, std::move(result),
                        {detail::operand(x)});
  }
  return result;
}

inline Tensor transpose(const Tensor& x) {
  detail::require_matrix(x, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.vec()[i * c + j];
  Tensor result({c, r}, std::move(out));
  if (Tape* tape = x.tape()) return tape->record(Op::transpose, std::move(result), {detail::operand(x)});
  return result;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor result(std::move(shape), x.vec());
  if (Tape* tape = x.tape()) return tape->record(Op::reshape, std::move(result), {detail::operand(x)});
  return result;
}

/// Stacks matrices vertically (equal column counts).
inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows column mismatch");
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.vec().begin(), p.vec().end());
  Tensor result({r, c}, std::move(out));
  if (Tape* tape = detail::common_tape(parts)) {
    std::vector<detail::Operand> ins;
    for (const auto& p : parts) ins.push_back(detail::operand(p));
    return tape->record(Op::concat_rows, std::move(result), std::move(ins));
  }
  return result;
}

/// Places matrices side by side (equal row counts).
inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols row mismatch");
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.vec().begin() + static_cast<std::ptrdiff_t>(i * pc), pc,
                  out.begin() + static_cast<std::ptrdiff_t>(i * c + off));
    off += pc;
  }
  Tensor result({r, c}, std::move(out));
  if (Tape* tape = detail::common_tape(parts)) {
    std::vector<detail::Operand> ins;
    for (const auto& p : parts) ins.push_back(detail::operand(p));
    return tape->record(Op::concat_cols, std::move(result), std::move(ins));
  }
  return result;
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}
inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

/// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_rows");
  if (begin > end || end > x.rows()) throw ShapeError("slice_rows out of range");
  const std::size_t c = x.cols();
  std::vector<double> out(x.vec().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          x.vec().begin() + static_cast<std::ptrdiff_t>(end * c));
  Tensor result({end - begin, c}, std::move(out));
  if (Tape* tape = x.tape())
    return tape->record(Op::slice_rows, std::move(result), {detail::operand(x)}, begin, end);
  return result;
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_cols");
  if (begin > end || end > x.cols()) throw ShapeError("slice_cols out of range");
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.vec()[i * c + begin + j];
  Tensor result({r, w}, std::move(out));
  if (Tape* tape = x.tape())
    return tape->record(Op::slice_cols, std::move(result), {detail::operand(x)}, begin, end);
  return result;
}

/// log det of a symmetric positive-definite matrix (Cholesky).
inline Tensor logdet_spd(const Tensor& x) {
  detail::require_matrix(x, "logdet_spd");
  const std::size_t n = x.rows();
  if (x.cols() != n) throw ShapeError("logdet_spd needs a square matrix");
  const detail::RowMat m = detail::as_matrix(x.vec(), n, n);
  Eigen::LLT<detail::RowMat> llt(m);
  if (llt.info() != Eigen::Success) throw DomainError("logdet_spd: matrix not positive definite");
  double ld = 0.0;
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) ld += 2.0 * std::log(l(i, i));
  Tensor result = Tensor::scalar(ld);
  if (Tape* tape = x.tape()) {
    detail::RowMat inv_t = llt.solve(detail::RowMat::Identity(n, n)).transpose();
    std::vector<double> aux(inv_t.data(), inv_t.data() + n * n);
    return tape->record(Op::logdet_spd, std::move(result), {detail::operand(x)}, 0, 0,
                        std::move(aux));
  }
  return result;
}

// Convenience spellings.
inline Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(BinaryOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return ew_binary(BinaryOp::div, a, b); }
inline Tensor sigmoid(const Tensor& x) { return ew_unary(UnaryOp::sigmoid, x); }
inline Tensor tanh(const Tensor& x) { return ew_unary(UnaryOp::tanh, x); }
inline Tensor exp(const Tensor& x) { return ew_unary(UnaryOp::exp, x); }
inline Tensor neg(const Tensor& x) { return ew_unary(UnaryOp::neg, x); }
inline Tensor log(const Tensor& x) { return ew_unary(UnaryOp::log, x); }
inline Tensor abs(const Tensor& x) { return ew_unary(UnaryOp::abs, x); }
inline Tensor square(const Tensor& x) { return ew_unary(UnaryOp::square, x); }
inline Tensor sum(const Tensor& x) { return reduce(ReduceOp::sum, x); }
inline Tensor mean(const Tensor& x) { return reduce(ReduceOp::mean, x); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double c, const Tensor& a) { return mul(Tensor::scalar(c), a); }
inline Tensor operator+(double c, const Tensor& a) { return add(Tensor::scalar(c), a); }
inline Tensor operator-(double c, const Tensor& a) { return sub(Tensor::scalar(c), a); }

/// sqrt through exp/log so it stays on the primitive set.
inline Tensor sqrt(const Tensor& x) { return exp(0.5 * log(x)); }

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss shape mismatch: " + to_string(pred.shape()) + " vs " +
                     to_string(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

/// Repeats a 1 x n row `rows` times (as ones(rows x 1) * v).
inline Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  detail::require_matrix(v, "broadcast_rows");
  if (v.rows() != 1) throw ShapeError("broadcast_rows expects a single row");
  if (rows == 1) return v;
  return matmul(Tensor::ones({rows, 1}), v);
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

inline Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not recorded on this tape");
  if (!loss.is_scalar()) throw ShapeError("backward: loss must be a scalar, got " + to_string(loss.shape()));

  const std::size_t n_nodes = records_.size();
  std::vector<std::vector<double>> g(n_nodes);
  std::vector<Shape> shapes(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) shapes[i] = records_[i].shape;

  auto accumulate = [&g](const detail::Operand& in, std::size_t idx, double v) {
    auto& dst = g[*in.node];
    if (dst.empty()) dst.assign(in.value.size(), 0.0);
    dst[idx] += v;
  };
  auto accumulate_all = [&g](const detail::Operand& in, std::vector<double> v) {
    auto& dst = g[*in.node];
    if (dst.empty()) {
      dst = std::move(v);
      return;
    }
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
  };

  g[*loss.node_id()] = {1.0};
  for (std::size_t id = *loss.node_id() + 1; id-- > 0;) {
    if (g[id].empty()) continue;
    const detail::Record& r = records_[id];
    const std::vector<double>& up = g[id];
    const std::size_t n = up.size();

    switch (r.op) {
      case Op::leaf:
        break;

      case Op::matmul: {
        const auto& a = r.inputs[0];
        const auto& b = r.inputs[1];
        const std::size_t m = a.value.shape()[0], k = a.value.shape()[1], nn = b.value.shape()[1];
        const auto gm = detail::as_matrix(up, m, nn);
        if (a.node) {
          std::vector<double> ga(m * k, 0.0);
          if (nn) detail::as_matrix(ga, m, k).noalias() = gm * detail::as_matrix(b.value.vec(), k, nn).transpose();
          accumulate_all(a, std::move(ga));
        }
        if (b.node) {
          std::vector<double> gb(k * nn, 0.0);
          if (m) detail::as_matrix(gb, k, nn).noalias() = detail::as_matrix(a.value.vec(), m, k).transpose() * gm;
          accumulate_all(b, std::move(gb));
        }
        break;
      }

      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div: {
        const auto& a = r.inputs[0];
        const auto& b = r.inputs[1];
        const bool sa = a.value.size() != n;
        const bool sb = b.value.size() != n;
        const auto& av = a.value.vec();
        const auto& bv = b.value.vec();
        auto x = [&](std::size_t i) { return av[sa ? 0 : i]; };
        auto y = [&](std::size_t i) { return bv[sb ? 0 : i]; };
        auto side = [&](const detail::Operand& in, bool scalar, auto deriv) {
          if (!in.node) return;
          if (scalar) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += deriv(i);
            accumulate(in, 0, acc);
            return;
          }
          std::vector<double> gd(n);
          for (std::size_t i = 0; i < n; ++i) gd[i] = deriv(i);
          accumulate_all(in, std::move(gd));
        };
        switch (r.op) {
          case Op::add:
            side(a, sa, [&](std::size_t i) { return up[i]; });
            side(b, sb, [&](std::size_t i) { return up[i]; });
            break;
          case Op::sub:
            side(a, sa, [&](std::size_t i) { return up[i]; });
            side(b, sb, [&](std::size_t i) { return -up[i]; });
            break;
          case Op::mul:
            side(a, sa, [&](std::size_t i) { return up[i] * y(i); });
            side(b, sb, [&](std::size_t i) { return up[i] * x(i); });
            break;
          default:
            side(a, sa, [&](std::size_t i) { return up[i] / y(i); });
            side(b, sb, [&](std::size_t i) { return -up[i] * x(i) / (y(i) * y(i)); });
            break;
        }
        break;
      }

      case Op::sigmoid:
      case Op::tanh:
      case Op::exp:
      case Op::neg:
      case Op::log:
      case Op::abs:
      case Op::square: {
        const auto& x = r.inputs[0];
        if (!x.node) break;
        const auto& xv = x.value.vec();
        const auto& yv = r.output.vec();
        std::vector<double> gx(n);
        for (std::size_t i = 0; i < n; ++i) {
          double d = 0.0;
          switch (r.op) {
            case Op::sigmoid: d = yv[i] * (1.0 - yv[i]); break;
            case Op::tanh: d = 1.0 - yv[i] * yv[i]; break;
            case Op::exp: d = yv[i]; break;
            case Op::neg: d = -1.0; break;
            case Op::log: d = 1.0 / xv[i]; break;
            case Op::abs: d = xv[i] > 0 ? 1.0 : (xv[i] < 0 ? -1.0 : 0.0); break;
            default: d = 2.0 * xv[i]; break;
          }
          gx[i] = up[i] * d;
        }
        accumulate_all(x, std::move(gx));
        break;
      }

      case Op::sum:
      case Op::mean: {
        const auto& x = r.inputs[0];
        if (!x.node) break;
        const double s = r.op == Op::sum ? up[0] : up[0] / static_cast<double>(x.value.size());
        accumulate_all(x, std::vector<double>(x.value.size(), s));
        break;
      }

      case Op::transpose: {
        const auto& x = r.inputs[0];
        if (!x.node) break;
        const std::size_t rr = x.value.shape()[0], cc = x.value.shape()[1];
        std::vector<double> gx(rr * cc);
        for (std::size_t i = 0; i < rr; ++i)
          for (std::size_t j = 0; j < cc; ++j) gx[i * cc + j] = up[j * rr + i];
        accumulate_all(x, std::move(gx));
        break;
      }

      case Op::reshape: {
        if (r.inputs[0].node) accumulate_all(r.inputs[0], up);
        break;
      }

      case Op::concat_rows: {
        std::size_t off = 0;
        for (const auto& in : r.inputs) {
          const std::size_t len = in.value.size();
          if (in.node) {
            accumulate_all(in, std::vector<double>(up.begin() + static_cast<std::ptrdiff_t>(off),
                                                   up.begin() + static_cast<std::ptrdiff_t>(off + len)));
          }
          off += len;
        }
        break;
      }

      case Op::concat_cols: {
        const std::size_t rows = r.shape[0], cols = r.shape[1];
        std::size_t off = 0;
        for (const auto& in : r.inputs) {
          const std::size_t pc = in.value.cols();
          if (in.node) {
            std::vector<double> gx(rows * pc);
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < pc; ++j) gx[i * pc + j] = up[i * cols + off + j];
            accumulate_all(in, std::move(gx));
          }
          off += pc;
        }
        break;
      }

      case Op::slice_rows: {
        const auto& x = r.inputs[0];
        if (!x.node) break;
        const std::size_t c = x.value.cols();
        for (std::size_t i = 0; i < n; ++i) accumulate(x, r.begin * c + i, up[i]);
        break;
      }

      case Op::slice_cols: {
        const auto& x = r.inputs[0];
        if (!x.node) break;
        const std::size_t c = x.value.cols(), w = r.end - r.begin;
        for (std::size_t i = 0; i < x.value.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) accumulate(x, i * c + r.begin + j, up[i * w + j]);
        break;
      }

      case Op::logdet_spd: {
        const auto& x = r.inputs[0];
        if (!x.node) break;
        std::vector<double> gx(r.aux.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = up[0] * r.aux[i];
        accumulate_all(x, std::move(gx));
        break;
      }
    }
  }
  return Gradients(std::move(g), std::move(shapes));
}

}  // namespace lnn
