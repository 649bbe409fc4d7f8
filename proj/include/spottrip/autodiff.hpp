#pragma once

// Tape-based reverse-mode automatic differentiation over dense double
// matrices. Every forward op records its value and a closure that pushes the
// incoming gradient to its parents; Tape::backward replays them in reverse.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spottrip {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// A named trainable tensor. Gradients accumulate over backward passes until
/// zero_grad() is called.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const { return value()(0, 0); }
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, false, nullptr, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  /// Leaf bound to a parameter. Repeated calls within one tape share a node.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    nodes_.push_back(Node{p.value, Matrix(), p.trainable, false, nullptr, &p});
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
  }

  Var record(Matrix value, std::span<const Var> parents, Backprop fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p);
    nodes_.push_back(Node{std::move(value), Matrix(), needs, false, needs ? std::move(fn) : nullptr, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  Var record(Matrix value, std::initializer_list<Var> parents, Backprop fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }

  [[nodiscard]] bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  void accumulate(const Var& v, const Matrix& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Gradient of a node after backward(); zero if nothing reached it.
  [[nodiscard]] Matrix grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Parameter leaves add their
  /// gradient into Parameter::grad.
  void backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    accumulate(loss, Matrix::Constant(1, 1, 1.0));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.backprop) n.backprop(*this, n.grad);
      if (n.param != nullptr && n.param->trainable) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad;
    bool has_grad;
    Backprop backprop;
    Parameter* param;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

namespace detail {
inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}
}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var operator-(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var operator-(const Var& a) {
  return a.tape().record(-a.value(), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, -g); });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(const Var& a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

inline Var operator*(double s, const Var& a) { return scale(a, s); }

inline Var add_scalar(const Var& a, double s) {
  return a.tape().record((a.value().array() + s).matrix(), {a},
                         [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  return a.tape().record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

inline Var transpose(const Var& a) {
  return a.tape().record(a.value().transpose(), {a},
                         [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

/// a (n x c) plus a 1 x c row added to every row.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bias shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

/// Row i of a (n x c) multiplied by w(i, 0).
inline Var scale_rows(const Var& a, const Var& w) {
  if (w.cols() != 1 || w.rows() != a.rows()) throw std::invalid_argument("scale_rows: weight shape mismatch");
  Matrix out = a.value().array().colwise() * w.value().col(0).array();
  return a.tape().record(std::move(out), {a, w}, [a, w](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, (g.array().colwise() * w.value().col(0).array()).matrix());
    if (t.requires_grad(w)) t.accumulate(w, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

/// Weighted sum of equally shaped terms with constant coefficients.
inline Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) throw std::invalid_argument("lincomb: bad arguments");
  Matrix out = Matrix::Zero(terms[0].rows(), terms[0].cols());
  std::vector<Var> used;
  std::vector<double> used_coeffs;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    detail::check_same_shape(terms[0], terms[i], "lincomb");
    if (coeffs[i] == 0.0) continue;
    out += coeffs[i] * terms[i].value();
    used.push_back(terms[i]);
    used_coeffs.push_back(coeffs[i]);
  }
  Tape& tape = terms[0].tape();
  return tape.record(std::move(out), std::span<const Var>(used), [used, used_coeffs](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < used.size(); ++i) t.accumulate(used[i], used_coeffs[i] * g);
  });
}

// ---- elementwise nonlinearities ------------------------------------------

inline Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  Matrix saved = out;
  return a.tape().record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(saved));
  });
}

inline Var log(const Var& a) {
  return a.tape().record(a.value().array().log().matrix(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() / a.value().array()).matrix());
  });
}

inline Var sqrt(const Var& a) {
  Matrix out = a.value().array().sqrt().matrix();
  Matrix saved = out;
  return a.tape().record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Matrix& g) {
    t.accumulate(a, (0.5 * g.array() / saved.array()).matrix());
  });
}

inline Var square(const Var& a) {
  return a.tape().record(a.value().array().square().matrix(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

inline Var abs(const Var& a) {
  return a.tape().record(a.value().cwiseAbs(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); })));
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return sigmoid_value(x); });
  Matrix saved = out;
  return a.tape().record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * saved.array() * (1.0 - saved.array())).matrix());
  });
}

/// x * sigmoid(x)
inline Var silu(const Var& a) {
  Matrix s = a.value().unaryExpr([](double x) { return sigmoid_value(x); });
  Matrix out = a.value().cwiseProduct(s);
  return a.tape().record(std::move(out), {a}, [a, s = std::move(s)](Tape& t, const Matrix& g) {
    const auto& x = a.value().array();
    t.accumulate(a, (g.array() * (s.array() + x * s.array() * (1.0 - s.array()))).matrix());
  });
}

inline Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  Matrix saved = out;
  return a.tape().record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * (1.0 - saved.array().square())).matrix());
  });
}

inline Var relu(const Var& a) {
  return a.tape().record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

inline Var leaky_relu(const Var& a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
  return a.tape().record(std::move(out), {a}, [a, slope](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g.array(), slope * g.array()).matrix());
  });
}

// ---- reductions -----------------------------------------------------------

inline Var sum(const Var& a) {
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a},
                         [a, r, c](Tape& t, const Matrix& g) { t.accumulate(a, Matrix::Constant(r, c, g(0, 0))); });
}

/// Column-wise mean over rows: (n x c) -> (1 x c).
inline Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  const Index n = a.rows();
  return a.tape().record(a.value().colwise().mean(), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, g.replicate(n, 1) / static_cast<double>(n));
  });
}

/// Per-row sum: (n x c) -> (n x 1).
inline Var row_sum(const Var& a) {
  const Index c = a.cols();
  return a.tape().record(a.value().rowwise().sum(), {a},
                         [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g.replicate(1, c)); });
}

/// Per-row inner product of two equally shaped matrices: (n x c) -> (n x 1).
inline Var rowwise_dot(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "rowwise_dot");
  return a.tape().record(a.value().cwiseProduct(b.value()).rowwise().sum(), {a, b},
                         [a, b](Tape& t, const Matrix& g) {
                           const Index c = a.cols();
                           if (t.requires_grad(a)) t.accumulate(a, b.value().cwiseProduct(g.replicate(1, c)));
                           if (t.requires_grad(b)) t.accumulate(b, a.value().cwiseProduct(g.replicate(1, c)));
                         });
}

// ---- structural -----------------------------------------------------------

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [kept](Tape& t, const Matrix& g) {
    Index off = 0;
    for (const auto& p : kept) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [kept](Tape& t, const Matrix& g) {
    Index off = 0;
    for (const auto& p : kept) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows");
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().record(a.value().middleRows(start, count), {a},
                         [a, start, count, r, c](Tape& t, const Matrix& g) {
                           Matrix full = Matrix::Zero(r, c);
                           full.middleRows(start, count) = g;
                           t.accumulate(a, full);
                         });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols");
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().record(a.value().middleCols(start, count), {a},
                         [a, start, count, r, c](Tape& t, const Matrix& g) {
                           Matrix full = Matrix::Zero(r, c);
                           full.middleCols(start, count) = g;
                           t.accumulate(a, full);
                         });
}

/// Rows of `table` selected by index (embedding lookup); gradients scatter-add.
inline Var gather_rows(const Var& table, std::span<const Index> indices) {
  Matrix out(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = table.value().row(indices[i]);
  }
  std::vector<Index> idx(indices.begin(), indices.end());
  const Index r = table.rows();
  const Index c = table.cols();
  return table.tape().record(std::move(out), {table}, [table, idx = std::move(idx), r, c](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(table, full);
  });
}

inline Var repeat_rows(const Var& row, Index n) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: expects a single row");
  return row.tape().record(row.value().replicate(n, 1), {row},
                           [row](Tape& t, const Matrix& g) { t.accumulate(row, g.colwise().sum()); });
}

/// Selected entries (row, col) gathered into a k x 1 column.
inline Var pick(const Var& a, std::span<const std::pair<Index, Index>> cells) {
  Matrix out(static_cast<Index>(cells.size()), 1);
  for (std::size_t i = 0; i < cells.size(); ++i) out(static_cast<Index>(i), 0) = a.value()(cells[i].first, cells[i].second);
  std::vector<std::pair<Index, Index>> kept(cells.begin(), cells.end());
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().record(std::move(out), {a}, [a, kept = std::move(kept), r, c](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < kept.size(); ++i) full(kept[i].first, kept[i].second) += g(static_cast<Index>(i), 0);
    t.accumulate(a, full);
  });
}

// ---- normalizers ----------------------------------------------------------

inline Matrix softmax_rows_value(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Var softmax_rows(const Var& a) {
  Matrix out = softmax_rows_value(a.value());
  Matrix saved = out;
  return a.tape().record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& t, const Matrix& g) {
    Matrix dot = g.cwiseProduct(saved).rowwise().sum();
    t.accumulate(a, saved.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

inline Var log_softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = (x.row(i).array() - lse).matrix();
  }
  Matrix probs = out.array().exp().matrix();
  return a.tape().record(std::move(out), {a}, [a, probs = std::move(probs)](Tape& t, const Matrix& g) {
    Matrix gsum = g.rowwise().sum();
    t.accumulate(a, g - probs.cwiseProduct(gsum.replicate(1, g.cols())));
  });
}

/// Row-wise layer normalization with affine gamma/beta (each 1 x c).
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const Index n = x.rows();
  const Index c = x.cols();
  Matrix xhat(n, c);
  Matrix inv_std(n, 1);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i, 0) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = ((x.value().row(i).array() - mu) * inv_std(i, 0)).matrix();
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, c](Tape& t, const Matrix& g) {
                           if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                           if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                           if (!t.requires_grad(x)) return;
                           Matrix gx = g.array().rowwise() * gamma.value().row(0).array();
                           Matrix dx(gx.rows(), c);
                           for (Index i = 0; i < gx.rows(); ++i) {
                             const double mean_g = gx.row(i).mean();
                             const double mean_gx = gx.row(i).cwiseProduct(xhat.row(i)).mean();
                             dx.row(i) = inv_std(i, 0) *
                                         (gx.row(i).array() - mean_g - xhat.row(i).array() * mean_gx).matrix();
                           }
                           t.accumulate(x, dx);
                         });
}

// ---- segment ops (ragged neighbor lists) ----------------------------------

/// Softmax of a k x 1 score column within each segment.
inline Var segment_softmax(const Var& scores, std::span<const Index> segment, Index n_segments) {
  if (scores.cols() != 1 || static_cast<std::size_t>(scores.rows()) != segment.size()) {
    throw std::invalid_argument("segment_softmax: shape mismatch");
  }
  const Index k = scores.rows();
  std::vector<double> seg_max(static_cast<std::size_t>(n_segments), -std::numeric_limits<double>::infinity());
  for (Index i = 0; i < k; ++i) {
    auto& m = seg_max[static_cast<std::size_t>(segment[i])];
    m = std::max(m, scores.value()(i, 0));
  }
  Matrix out(k, 1);
  std::vector<double> seg_sum(static_cast<std::size_t>(n_segments), 0.0);
  for (Index i = 0; i < k; ++i) {
    out(i, 0) = std::exp(scores.value()(i, 0) - seg_max[static_cast<std::size_t>(segment[i])]);
    seg_sum[static_cast<std::size_t>(segment[i])] += out(i, 0);
  }
  for (Index i = 0; i < k; ++i) out(i, 0) /= seg_sum[static_cast<std::size_t>(segment[i])];
  Matrix saved = out;
  std::vector<Index> seg(segment.begin(), segment.end());
  return scores.tape().record(std::move(out), {scores},
                              [scores, saved = std::move(saved), seg = std::move(seg), n_segments](Tape& t, const Matrix& g) {
                                std::vector<double> dot(static_cast<std::size_t>(n_segments), 0.0);
                                for (std::size_t i = 0; i < seg.size(); ++i) {
                                  dot[static_cast<std::size_t>(seg[i])] += g(static_cast<Index>(i), 0) * saved(static_cast<Index>(i), 0);
                                }
                                Matrix d(saved.rows(), 1);
                                for (std::size_t i = 0; i < seg.size(); ++i) {
                                  const auto ii = static_cast<Index>(i);
                                  d(ii, 0) = saved(ii, 0) * (g(ii, 0) - dot[static_cast<std::size_t>(seg[i])]);
                                }
                                t.accumulate(scores, d);
                              });
}

/// Sums rows into n_segments buckets: (k x c) -> (n_segments x c).
inline Var segment_sum(const Var& rows, std::span<const Index> segment, Index n_segments) {
  if (static_cast<std::size_t>(rows.rows()) != segment.size()) throw std::invalid_argument("segment_sum: shape mismatch");
  Matrix out = Matrix::Zero(n_segments, rows.cols());
  for (Index i = 0; i < rows.rows(); ++i) out.row(segment[i]) += rows.value().row(i);
  std::vector<Index> seg(segment.begin(), segment.end());
  return rows.tape().record(std::move(out), {rows}, [rows, seg = std::move(seg)](Tape& t, const Matrix& g) {
    Matrix d(static_cast<Index>(seg.size()), g.cols());
    for (std::size_t i = 0; i < seg.size(); ++i) d.row(static_cast<Index>(i)) = g.row(seg[i]);
    t.accumulate(rows, d);
  });
}

}  // namespace ad
}  // namespace spottrip
