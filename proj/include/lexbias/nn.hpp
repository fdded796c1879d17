#pragma once

// Parameter storage, layer modules, and the Adam optimizer. Layers are thin
// compositions of tape ops; parameters are bound into a tape once per step
// through a caching Binder so the optimizer can read gradients back out.

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexbias/autodiff.hpp"
#include "lexbias/common.hpp"

namespace lexbias::nn {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct Param {
  std::string name;
  std::string group = "main";  // gradient clipping scope
  bool trainable = true;
  Mat value;
  Mat adam_m, adam_v;
};

class ParamStore {
 public:
  Param* create(const std::string& name, Mat value, const std::string& group = "main") {
    if (find(name)) throw ModelError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->group = group;
    p->value = std::move(value);
    Param* raw = p.get();
    items_.push_back(std::move(p));
    return raw;
  }

  // Xavier/Glorot uniform; layout is x * W with fan_in = rows, fan_out = cols.
  Param* xavier(const std::string& name, Eigen::Index rows, Eigen::Index cols, RngStream& rng,
                const std::string& group = "main") {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
    }
    return create(name, std::move(m), group);
  }

  Param* zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols,
               const std::string& group = "main") {
    return create(name, Mat::Zero(rows, cols), group);
  }

  Param* find(const std::string& name) const {
    for (const auto& p : items_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  const std::vector<std::unique_ptr<Param>>& items() const { return items_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  // Copies values for every same-named, same-shaped parameter (warm starts).
  std::size_t copy_matching_from(const ParamStore& other) {
    std::size_t copied = 0;
    for (auto& p : items_) {
      const Param* src = other.find(p->name);
      if (src && src->value.rows() == p->value.rows() && src->value.cols() == p->value.cols()) {
        p->value = src->value;
        ++copied;
      }
    }
    return copied;
  }

 private:
  std::vector<std::unique_ptr<Param>> items_;
};

// Binds parameters into a tape at most once each; remembers the bindings so
// the optimizer can pair every parameter with its gradient after backward().
class Binder {
 public:
  Binder(Tape& tape, bool with_grad) : tape_(tape), with_grad_(with_grad) {}

  Var operator()(Param* p) {
    auto it = cache_.find(p);
    if (it != cache_.end()) return it->second;
    const Var v = tape_.input(p->value, with_grad_ && p->trainable);
    cache_.emplace(p, v);
    bound_.emplace_back(p, v);
    return v;
  }

  const std::vector<std::pair<Param*, Var>>& bound() const { return bound_; }
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  bool with_grad_;
  std::unordered_map<Param*, Var> cache_;
  std::vector<std::pair<Param*, Var>> bound_;
};

struct Linear {
  Param* W = nullptr;
  Param* b = nullptr;

  static Linear create(ParamStore& store, const std::string& name, Eigen::Index in,
                       Eigen::Index out, RngStream& rng, const std::string& group = "main") {
    Linear l;
    l.W = store.xavier(name + ".W", in, out, rng, group);
    l.b = store.zeros(name + ".b", 1, out, group);
    return l;
  }

  Var apply(Binder& bind, Var x) const {
    Tape& t = bind.tape();
    return t.add_rowvec(t.matmul(x, bind(W)), bind(b));
  }
};

// One hidden layer with tanh.
struct Mlp {
  Linear hidden, out;

  static Mlp create(ParamStore& store, const std::string& name, Eigen::Index in,
                    Eigen::Index d_hidden, Eigen::Index d_out, RngStream& rng,
                    const std::string& group = "main") {
    Mlp m;
    m.hidden = Linear::create(store, name + ".hidden", in, d_hidden, rng, group);
    m.out = Linear::create(store, name + ".out", d_hidden, d_out, rng, group);
    return m;
  }

  Var apply(Binder& bind, Var x) const {
    Tape& t = bind.tape();
    return out.apply(bind, t.tanh_(hidden.apply(bind, x)));
  }
};

struct LstmCell {
  Param* Wx = nullptr;  // d_in x 4*d_h, gate order [i f g o]
  Param* Wh = nullptr;  // d_h x 4*d_h
  Param* b = nullptr;   // 1 x 4*d_h, forget bias starts at 1

  static LstmCell create(ParamStore& store, const std::string& name, Eigen::Index d_in,
                         Eigen::Index d_h, RngStream& rng) {
    LstmCell c;
    c.Wx = store.xavier(name + ".Wx", d_in, 4 * d_h, rng);
    c.Wh = store.xavier(name + ".Wh", d_h, 4 * d_h, rng);
    Mat bias = Mat::Zero(1, 4 * d_h);
    bias.middleCols(d_h, d_h).setConstant(1.0);
    c.b = store.create(name + ".b", std::move(bias));
    return c;
  }
};

// Runs one LSTM direction over pre-embedded timesteps. Masked positions carry
// the previous state, so right-padding never reaches a real token's state in
// either direction. Output t is the (carried) hidden state at timestep t.
inline std::vector<Var> lstm_direction(Binder& bind, const LstmCell& cell,
                                       const std::vector<Var>& xs, const Mat& mask,
                                       Eigen::Index d_h, bool reverse) {
  Tape& t = bind.tape();
  const int T = static_cast<int>(xs.size());
  const Eigen::Index batch = t.value(xs[0]).rows();
  Var Wx = bind(cell.Wx);
  Var Wh = bind(cell.Wh);
  Var b = bind(cell.b);
  Var h = t.constant(Mat::Zero(batch, d_h));
  Var c = t.constant(Mat::Zero(batch, d_h));
  std::vector<Var> out(static_cast<std::size_t>(T));
  for (int step = 0; step < T; ++step) {
    const int ti = reverse ? T - 1 - step : step;
    Var gates = t.add_rowvec(t.add(t.matmul(xs[static_cast<std::size_t>(ti)], Wx), t.matmul(h, Wh)), b);
    Var gi = t.sigmoid_(t.slice_cols(gates, 0, d_h));
    Var gf = t.sigmoid_(t.slice_cols(gates, d_h, d_h));
    Var gg = t.tanh_(t.slice_cols(gates, 2 * d_h, d_h));
    Var go = t.sigmoid_(t.slice_cols(gates, 3 * d_h, d_h));
    Var c_new = t.add(t.mul(gf, c), t.mul(gi, gg));
    Var h_new = t.mul(go, t.tanh_(c_new));
    const Eigen::VectorXd keep = mask.col(ti);
    c = t.blend_rows(c_new, c, keep);
    h = t.blend_rows(h_new, h, keep);
    out[static_cast<std::size_t>(ti)] = h;
  }
  return out;
}

struct BiLstmLayer {
  LstmCell fwd, bwd;
  Eigen::Index d_h = 0;

  static BiLstmLayer create(ParamStore& store, const std::string& name, Eigen::Index d_in,
                            Eigen::Index d_h, RngStream& rng) {
    BiLstmLayer l;
    l.d_h = d_h;
    l.fwd = LstmCell::create(store, name + ".fwd", d_in, d_h, rng);
    l.bwd = LstmCell::create(store, name + ".bwd", d_in, d_h, rng);
    return l;
  }

  // Per-timestep [fwd; bwd] states, each B x 2*d_h.
  std::vector<Var> apply(Binder& bind, const std::vector<Var>& xs, const Mat& mask) const {
    Tape& t = bind.tape();
    auto f = lstm_direction(bind, fwd, xs, mask, d_h, false);
    auto b = lstm_direction(bind, bwd, xs, mask, d_h, true);
    std::vector<Var> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = t.hconcat({f[i], b[i]});
    return out;
  }
};

// Multi-head scaled dot-product self-attention without position information,
// applied to one example's T x d token matrix.
struct SelfAttention {
  Linear q, k, v, o;
  Eigen::Index d_model = 0;
  int n_heads = 1;

  static SelfAttention create(ParamStore& store, const std::string& name, Eigen::Index d_model,
                              int n_heads, RngStream& rng) {
    if (n_heads < 1 || d_model % n_heads != 0) {
      throw ModelError("SelfAttention: n_heads must divide d_model");
    }
    SelfAttention a;
    a.d_model = d_model;
    a.n_heads = n_heads;
    a.q = Linear::create(store, name + ".q", d_model, d_model, rng);
    a.k = Linear::create(store, name + ".k", d_model, d_model, rng);
    a.v = Linear::create(store, name + ".v", d_model, d_model, rng);
    a.o = Linear::create(store, name + ".o", d_model, d_model, rng);
    return a;
  }

  Var apply(Binder& bind, Var x) const {
    Tape& t = bind.tape();
    const Eigen::Index d_k = d_model / n_heads;
    Var Q = q.apply(bind, x);
    Var K = k.apply(bind, x);
    Var V = v.apply(bind, x);
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      Var qh = t.slice_cols(Q, h * d_k, d_k);
      Var kh = t.slice_cols(K, h * d_k, d_k);
      Var vh = t.slice_cols(V, h * d_k, d_k);
      Var scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(d_k)));
      heads.push_back(t.matmul(t.softmax_rows(scores), vh));
    }
    return o.apply(bind, t.hconcat(heads));
  }
};

struct AdamConfig {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // per parameter group; <= 0 disables clipping
};

// Adam with per-group global-norm clipping. Groups keep the main model and
// any adversary head on independent clipping scopes, so adding a head never
// perturbs the main model's update scale.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(Tape& tape, const Binder& binder) {
    std::map<std::string, double> sq_norm;
    std::vector<std::pair<Param*, Mat>> grads;
    for (const auto& [p, v] : binder.bound()) {
      if (!p->trainable) continue;
      Mat g = tape.grad(v);
      if (!g.allFinite()) throw TrainError("non-finite gradient in parameter " + p->name);
      sq_norm[p->group] += g.squaredNorm();
      grads.emplace_back(p, std::move(g));
    }
    std::map<std::string, double> scale;
    for (auto& [group, sq] : sq_norm) {
      const double norm = std::sqrt(sq);
      scale[group] = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
      ++t_[group];
    }
    for (auto& [p, g] : grads) {
      if (scale[p->group] != 1.0) g *= scale[p->group];
      if (p->adam_m.size() == 0) {
        p->adam_m = Mat::Zero(g.rows(), g.cols());
        p->adam_v = Mat::Zero(g.rows(), g.cols());
      }
      const double t = static_cast<double>(t_[p->group]);
      p->adam_m = cfg_.beta1 * p->adam_m + (1.0 - cfg_.beta1) * g;
      p->adam_v = cfg_.beta2 * p->adam_v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double corr1 = 1.0 - std::pow(cfg_.beta1, t);
      const double corr2 = 1.0 - std::pow(cfg_.beta2, t);
      p->value.array() -= cfg_.lr * (p->adam_m.array() / corr1) /
                          ((p->adam_v.array() / corr2).sqrt() + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  std::map<std::string, std::int64_t> t_;
};

}  // namespace lexbias::nn
