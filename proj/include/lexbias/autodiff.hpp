#pragma once

// Reverse-mode automatic differentiation over Eigen matrices. A Tape records
// a fresh graph per optimization step (define-by-run); backward() walks the
// nodes in reverse creation order, which is a valid reverse topological order
// because every op's parents are created before it.

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "lexbias/common.hpp"

namespace lexbias::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Tape() { nodes_.reserve(4096); }

  // Backward closures capture the tape pointer; moving would dangle them.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Mat value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  Var constant(Mat value) { return input(std::move(value), false); }

  const Mat& value(Var v) const { return nodes_[check(v)].value; }

  // Gradient of the last backward() root w.r.t. v; empty if the node was
  // never reached.
  Mat grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // ---- elementwise & linear algebra ----

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Var out = push(value(a) + value(b), needs(a) || needs(b), nullptr);
    if (needs(a) || needs(b)) {
      set_back(out, [this, a, b, out]() {
        const Mat& g = nodes_[out.id].grad;
        if (needs(a)) grad_ref(a) += g;
        if (needs(b)) grad_ref(b) += g;
      });
    }
    return out;
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Var out = push(value(a) - value(b), needs(a) || needs(b), nullptr);
    if (needs(a) || needs(b)) {
      set_back(out, [this, a, b, out]() {
        const Mat& g = nodes_[out.id].grad;
        if (needs(a)) grad_ref(a) += g;
        if (needs(b)) grad_ref(b) -= g;
      });
    }
    return out;
  }

  Var mul(Var a, Var b) {  // Hadamard
    require_same_shape(a, b, "mul");
    Var out = push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), nullptr);
    if (needs(a) || needs(b)) {
      set_back(out, [this, a, b, out]() {
        const Mat& g = nodes_[out.id].grad;
        if (needs(a)) grad_ref(a) += g.cwiseProduct(nodes_[b.id].value);
        if (needs(b)) grad_ref(b) += g.cwiseProduct(nodes_[a.id].value);
      });
    }
    return out;
  }

  Var scale(Var a, double s) {
    Var out = push(value(a) * s, needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out, s]() { grad_ref(a) += nodes_[out.id].grad * s; });
    }
    return out;
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw ModelError("matmul: inner dimensions differ");
    Var out = push(value(a) * value(b), needs(a) || needs(b), nullptr);
    if (needs(a) || needs(b)) {
      set_back(out, [this, a, b, out]() {
        const Mat& g = nodes_[out.id].grad;
        if (needs(a)) grad_ref(a).noalias() += g * nodes_[b.id].value.transpose();
        if (needs(b)) grad_ref(b).noalias() += nodes_[a.id].value.transpose() * g;
      });
    }
    return out;
  }

  Var transpose(Var a) {
    Var out = push(value(a).transpose(), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out]() { grad_ref(a) += nodes_[out.id].grad.transpose(); });
    }
    return out;
  }

  // a: m x n, row: 1 x n broadcast over rows.
  Var add_rowvec(Var a, Var row) {
    if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
      throw ModelError("add_rowvec: bias must be 1 x cols(a)");
    }
    Mat v = value(a);
    v.rowwise() += Eigen::RowVectorXd(value(row).row(0));
    Var out = push(std::move(v), needs(a) || needs(row), nullptr);
    if (needs(a) || needs(row)) {
      set_back(out, [this, a, row, out]() {
        const Mat& g = nodes_[out.id].grad;
        if (needs(a)) grad_ref(a) += g;
        if (needs(row)) grad_ref(row) += g.colwise().sum();
      });
    }
    return out;
  }

  // Inverse of a small square matrix; d(A^-1) = -A^-1 dA A^-1.
  Var inverse(Var a) {
    if (value(a).rows() != value(a).cols()) throw ModelError("inverse: matrix must be square");
    Var out = push(value(a).inverse(), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out]() {
        const Mat& y = nodes_[out.id].value;
        const Mat& g = nodes_[out.id].grad;
        grad_ref(a).noalias() -= y.transpose() * g * y.transpose();
      });
    }
    return out;
  }

  // ---- activations ----

  Var tanh_(Var a) {
    Var out = push(value(a).array().tanh().matrix(), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out]() {
        const Mat& y = nodes_[out.id].value;
        grad_ref(a).array() += nodes_[out.id].grad.array() * (1.0 - y.array().square());
      });
    }
    return out;
  }

  Var sigmoid_(Var a) {
    Mat y = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    Var out = push(std::move(y), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out]() {
        const auto& y2 = nodes_[out.id].value.array();
        grad_ref(a).array() += nodes_[out.id].grad.array() * y2 * (1.0 - y2);
      });
    }
    return out;
  }

  Var relu_(Var a) {
    Var out = push(value(a).cwiseMax(0.0), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out]() {
        grad_ref(a).array() +=
            nodes_[out.id].grad.array() * (nodes_[a.id].value.array() > 0.0).cast<double>();
      });
    }
    return out;
  }

  Var softmax_rows(Var a) {
    Mat v = value(a);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double m = v.row(i).maxCoeff();
      v.row(i) = (v.row(i).array() - m).exp();
      v.row(i) /= v.row(i).sum();
    }
    Var out = push(std::move(v), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out]() {
        const Mat& s = nodes_[out.id].value;
        const Mat& g = nodes_[out.id].grad;
        Mat gs = g.cwiseProduct(s);
        Eigen::VectorXd rowsum = gs.rowwise().sum();
        grad_ref(a) += gs - s.cwiseProduct(rowsum.replicate(1, s.cols()));
      });
    }
    return out;
  }

  // ---- structure ----

  Var hconcat(const std::vector<Var>& xs) {
    if (xs.empty()) throw ModelError("hconcat: no inputs");
    Eigen::Index rows = value(xs[0]).rows(), cols = 0;
    bool any = false;
    for (Var x : xs) {
      if (value(x).rows() != rows) throw ModelError("hconcat: row mismatch");
      cols += value(x).cols();
      any = any || needs(x);
    }
    Mat v(rows, cols);
    Eigen::Index off = 0;
    for (Var x : xs) {
      v.middleCols(off, value(x).cols()) = value(x);
      off += value(x).cols();
    }
    Var out = push(std::move(v), any, nullptr);
    if (any) {
      std::vector<Var> parents = xs;
      set_back(out, [this, parents, out]() {
        const Mat& g = nodes_[out.id].grad;
        Eigen::Index o = 0;
        for (Var x : parents) {
          const Eigen::Index c = nodes_[x.id].value.cols();
          if (needs(x)) grad_ref(x) += g.middleCols(o, c);
          o += c;
        }
      });
    }
    return out;
  }

  Var vconcat(const std::vector<Var>& xs) {
    if (xs.empty()) throw ModelError("vconcat: no inputs");
    Eigen::Index cols = value(xs[0]).cols(), rows = 0;
    bool any = false;
    for (Var x : xs) {
      if (value(x).cols() != cols) throw ModelError("vconcat: column mismatch");
      rows += value(x).rows();
      any = any || needs(x);
    }
    Mat v(rows, cols);
    Eigen::Index off = 0;
    for (Var x : xs) {
      v.middleRows(off, value(x).rows()) = value(x);
      off += value(x).rows();
    }
    Var out = push(std::move(v), any, nullptr);
    if (any) {
      std::vector<Var> parents = xs;
      set_back(out, [this, parents, out]() {
        const Mat& g = nodes_[out.id].grad;
        Eigen::Index o = 0;
        for (Var x : parents) {
          const Eigen::Index r = nodes_[x.id].value.rows();
          if (needs(x)) grad_ref(x) += g.middleRows(o, r);
          o += r;
        }
      });
    }
    return out;
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || start + n > value(a).cols()) throw ModelError("slice_cols: out of range");
    Var out = push(value(a).middleCols(start, n), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out, start, n]() {
        grad_ref(a).middleCols(start, n) += nodes_[out.id].grad;
      });
    }
    return out;
  }

  // Row gather (embedding lookup and token selection); backward scatter-adds.
  Var gather_rows(Var table, std::vector<int> rows) {
    const Mat& t = value(table);
    Mat v(static_cast<Eigen::Index>(rows.size()), t.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] < 0 || rows[k] >= t.rows()) throw ModelError("gather_rows: index out of range");
      v.row(static_cast<Eigen::Index>(k)) = t.row(rows[k]);
    }
    Var out = push(std::move(v), needs(table), nullptr);
    if (needs(table)) {
      set_back(out, [this, table, out, rows = std::move(rows)]() {
        const Mat& g = nodes_[out.id].grad;
        Mat& gt = grad_ref(table);
        for (std::size_t k = 0; k < rows.size(); ++k) {
          gt.row(rows[k]) += g.row(static_cast<Eigen::Index>(k));
        }
      });
    }
    return out;
  }

  // y(i,:) = keep(i) * a(i,:) + (1 - keep(i)) * b(i,:), keep is a constant column.
  Var blend_rows(Var a, Var b, const Eigen::VectorXd& keep) {
    require_same_shape(a, b, "blend_rows");
    if (keep.size() != value(a).rows()) throw ModelError("blend_rows: keep length mismatch");
    Mat v = value(a).array().colwise() * keep.array();
    v.array() += value(b).array().colwise() * (1.0 - keep.array());
    Var out = push(std::move(v), needs(a) || needs(b), nullptr);
    if (needs(a) || needs(b)) {
      set_back(out, [this, a, b, out, keep]() {
        const Mat& g = nodes_[out.id].grad;
        if (needs(a)) grad_ref(a).array() += g.array().colwise() * keep.array();
        if (needs(b)) grad_ref(b).array() += g.array().colwise() * (1.0 - keep.array());
      });
    }
    return out;
  }

  // ---- pooling ----

  // Elementwise max over the time dimension, masked positions excluded.
  Var max_over_time(const std::vector<Var>& xs, const Mat& mask) {
    if (xs.empty()) throw ModelError("max_over_time: no timesteps");
    const Eigen::Index rows = value(xs[0]).rows();
    const Eigen::Index cols = value(xs[0]).cols();
    if (mask.rows() != rows || mask.cols() != static_cast<Eigen::Index>(xs.size())) {
      throw ModelError("max_over_time: mask shape mismatch");
    }
    Mat v(rows, cols);
    Eigen::MatrixXi arg(rows, cols);
    bool any = false;
    for (Var x : xs) any = any || needs(x);
    for (Eigen::Index i = 0; i < rows; ++i) {
      bool seen = false;
      for (std::size_t t = 0; t < xs.size(); ++t) {
        if (mask(i, static_cast<Eigen::Index>(t)) <= 0.0) continue;
        const Mat& xv = value(xs[t]);
        for (Eigen::Index j = 0; j < cols; ++j) {
          if (!seen || xv(i, j) > v(i, j)) {
            v(i, j) = xv(i, j);
            arg(i, j) = static_cast<int>(t);
          }
        }
        seen = true;
      }
      if (!seen) throw ModelError("max_over_time: row " + std::to_string(i) + " is fully masked");
    }
    Var out = push(std::move(v), any, nullptr);
    if (any) {
      std::vector<Var> parents = xs;
      set_back(out, [this, parents, out, arg = std::move(arg)]() {
        const Mat& g = nodes_[out.id].grad;
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          for (Eigen::Index j = 0; j < g.cols(); ++j) {
            Var src = parents[static_cast<std::size_t>(arg(i, j))];
            if (needs(src)) grad_ref(src)(i, j) += g(i, j);
          }
        }
      });
    }
    return out;
  }

  // Mean over unmasked timesteps; divides by the true per-row length.
  Var mean_over_time(const std::vector<Var>& xs, const Mat& mask) {
    if (xs.empty()) throw ModelError("mean_over_time: no timesteps");
    const Eigen::Index rows = value(xs[0]).rows();
    const Eigen::Index cols = value(xs[0]).cols();
    if (mask.rows() != rows || mask.cols() != static_cast<Eigen::Index>(xs.size())) {
      throw ModelError("mean_over_time: mask shape mismatch");
    }
    Eigen::VectorXd len = mask.rowwise().sum();
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (len(i) <= 0.0) throw ModelError("mean_over_time: row " + std::to_string(i) + " is fully masked");
    }
    Mat v = Mat::Zero(rows, cols);
    bool any = false;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      any = any || needs(xs[t]);
      v.array() += value(xs[t]).array().colwise() * mask.col(static_cast<Eigen::Index>(t)).array();
    }
    v.array().colwise() /= len.array();
    Var out = push(std::move(v), any, nullptr);
    if (any) {
      std::vector<Var> parents = xs;
      set_back(out, [this, parents, out, mask, len = std::move(len)]() {
        const Mat& g = nodes_[out.id].grad;
        for (std::size_t t = 0; t < parents.size(); ++t) {
          if (!needs(parents[t])) continue;
          Eigen::ArrayXd w = mask.col(static_cast<Eigen::Index>(t)).array() / len.array();
          grad_ref(parents[t]).array() += g.array().colwise() * w;
        }
      });
    }
    return out;
  }

  // Column mean over all rows (used for per-example pooling): T x d -> 1 x d.
  Var mean_rows(Var a) {
    const Eigen::Index rows = value(a).rows();
    Var out = push(value(a).colwise().mean(), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out, rows]() {
        grad_ref(a) += nodes_[out.id].grad.replicate(rows, 1) / static_cast<double>(rows);
      });
    }
    return out;
  }

  // ---- regularization & training-specific ----

  // Inverted dropout; draws one Bernoulli per entry in row-major order.
  // Identity (no node, no draw) when not training or p == 0.
  Var dropout(Var a, double p, RngStream& rng, bool train) {
    if (!train || p <= 0.0) return a;
    if (p >= 1.0) throw ModelError("dropout: rate must be < 1");
    const double keep = 1.0 - p;
    Mat m(value(a).rows(), value(a).cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
      }
    }
    Var out = push(value(a).cwiseProduct(m), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out, m = std::move(m)]() {
        grad_ref(a) += nodes_[out.id].grad.cwiseProduct(m);
      });
    }
    return out;
  }

  // Identity forward; backward multiplies the upstream gradient by -lambda.
  // With lambda == 0 the output is detached: nothing propagates upstream.
  Var grad_reverse(Var a, double lambda) {
    if (lambda == 0.0 || !needs(a)) return push(value(a), false, nullptr);
    Var out = push(value(a), true, nullptr);
    set_back(out, [this, a, out, lambda]() {
      grad_ref(a) -= lambda * nodes_[out.id].grad;
    });
    return out;
  }

  // Shifts each column to zero mean and unit (population) standard deviation
  // within the batch; zero-variance columns are left at zero.
  Var column_normalize(Var a) {
    const Mat& x = value(a);
    const Eigen::Index n = x.rows();
    if (n < 2) throw ModelError("column_normalize: batch must contain at least 2 rows");
    Eigen::RowVectorXd mu = x.colwise().mean();
    Mat centered = x.rowwise() - mu;
    Eigen::RowVectorXd sigma = (centered.array().square().colwise().mean()).sqrt();
    Eigen::Array<bool, 1, Eigen::Dynamic> dead =
        sigma.array() <= (1e-12 * (1.0 + mu.array().abs()));
    Mat y(n, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (dead(j)) {
        y.col(j).setZero();
      } else {
        y.col(j) = centered.col(j) / sigma(j);
      }
    }
    Var out = push(std::move(y), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out, sigma = std::move(sigma), dead = std::move(dead)]() {
        const Mat& yv = nodes_[out.id].value;
        const Mat& g = nodes_[out.id].grad;
        Mat& ga = grad_ref(a);
        const double n_inv = 1.0 / static_cast<double>(yv.rows());
        for (Eigen::Index j = 0; j < yv.cols(); ++j) {
          if (dead(j)) continue;
          const double gmean = g.col(j).mean();
          const double gymean = g.col(j).dot(yv.col(j)) * n_inv;
          ga.col(j).array() +=
              (g.col(j).array() - gmean - yv.col(j).array() * gymean) / sigma(j);
        }
      });
    }
    return out;
  }

  // Per-column affine map y = (a + shift) * scale with constant row vectors.
  Var colwise_affine(Var a, const Eigen::RowVectorXd& shift, const Eigen::RowVectorXd& scale) {
    if (shift.size() != value(a).cols() || scale.size() != value(a).cols()) {
      throw ModelError("colwise_affine: row vector width mismatch");
    }
    Mat v = value(a);
    v.rowwise() += shift;
    v.array().rowwise() *= scale.array();
    Var out = push(std::move(v), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out, scale]() {
        grad_ref(a).array() += nodes_[out.id].grad.array().rowwise() * scale.array();
      });
    }
    return out;
  }

  // Weighted sum of per-row cross-entropy losses; pass weights of 1/B for a
  // batch mean. Numerically stable log-sum-exp form.
  Var cross_entropy(Var logits, const std::vector<int>& labels, const Eigen::VectorXd& weights) {
    const Mat& z = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != z.rows() || weights.size() != z.rows()) {
      throw ModelError("cross_entropy: label/weight count mismatch");
    }
    Mat probs(z.rows(), z.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      if (y < 0 || y >= z.cols()) throw ModelError("cross_entropy: label out of range");
      const double m = z.row(i).maxCoeff();
      Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
      const double s = e.sum();
      probs.row(i) = e / s;
      total += weights(i) * (std::log(s) + m - z(i, y));
    }
    Var out = push(Mat::Constant(1, 1, total), needs(logits), nullptr);
    if (needs(logits)) {
      set_back(out, [this, logits, out, labels, weights, probs = std::move(probs)]() {
        const double g = nodes_[out.id].grad(0, 0);
        Mat& gl = grad_ref(logits);
        for (Eigen::Index i = 0; i < gl.rows(); ++i) {
          gl.row(i) += g * weights(i) * probs.row(i);
          gl(i, labels[static_cast<std::size_t>(i)]) -= g * weights(i);
        }
      });
    }
    return out;
  }

  // Frobenius inner product with a constant matrix; handy scalar objective.
  Var weighted_sum(Var a, const Mat& w) {
    if (w.rows() != value(a).rows() || w.cols() != value(a).cols()) {
      throw ModelError("weighted_sum: shape mismatch");
    }
    Var out = push(Mat::Constant(1, 1, value(a).cwiseProduct(w).sum()), needs(a), nullptr);
    if (needs(a)) {
      set_back(out, [this, a, out, w]() { grad_ref(a) += nodes_[out.id].grad(0, 0) * w; });
    }
    return out;
  }

  Var sum_all(Var a) { return weighted_sum(a, Mat::Ones(value(a).rows(), value(a).cols())); }

  void backward(Var root) {
    const Node& r = nodes_[check(root)];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
      throw ModelError("backward: root must be a scalar");
    }
    grad_ref(root).setConstant(1.0);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.back && n.grad.size() != 0) n.back();
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void()> back;
  };

  std::vector<Node> nodes_;

  std::size_t check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw ModelError("invalid tape variable");
    }
    return static_cast<std::size_t>(v.id);
  }

  bool needs(Var v) const { return nodes_[check(v)].requires_grad; }

  Var push(Mat value, bool requires_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void set_back(Var v, std::function<void()> back) { nodes_[check(v)].back = std::move(back); }

  Mat& grad_ref(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw ModelError(std::string(op) + ": shape mismatch");
    }
  }
};

}  // namespace lexbias::ad
