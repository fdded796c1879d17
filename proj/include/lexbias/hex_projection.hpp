#pragma once

// BoW-orthogonality head: builds F_A/F_P/F_G by zero-masking the
// [u_bow; u_main] head input, projects F_A onto the orthogonal complement of
// F_G's column space, and trains on a weighted F_L/F_G loss. F_P is used for
// prediction.

#include <map>

#include <json.hpp>

#include "lexbias/autodiff.hpp"
#include "lexbias/common.hpp"
#include "lexbias/encoders.hpp"
#include "lexbias/nn.hpp"

namespace lexbias {

struct HexConfig {
  double loss_weight_L = 1.0;
  double loss_weight_G = 0.3;
  // Ridge magnitude for stabilizing (F_G^T F_G)^-1 when ill-conditioned;
  // <= 0 selects the scale-aware default 1e-6 * trace(F_G^T F_G) / k.
  double ridge_eps = 0.0;
  bool normalize_columns = true;
  bool freeze_bottom = true;   // embeddings + first BiLSTM layer
  bool debug_orthogonality = false;

  void validate() const {
    if (loss_weight_L < 0.0 || loss_weight_G < 0.0) {
      throw ModelError("HexConfig: loss weights must be >= 0");
    }
  }

  nlohmann::json to_json() const {
    return {{"loss_weight_L", loss_weight_L}, {"loss_weight_G", loss_weight_G},
            {"ridge_eps", ridge_eps},         {"normalize_columns", normalize_columns},
            {"freeze_bottom", freeze_bottom}, {"debug_orthogonality", debug_orthogonality}};
  }

  static HexConfig from_json(const nlohmann::json& j) {
    HexConfig c;
    c.loss_weight_L = j.value("loss_weight_L", c.loss_weight_L);
    c.loss_weight_G = j.value("loss_weight_G", c.loss_weight_G);
    c.ridge_eps = j.value("ridge_eps", c.ridge_eps);
    c.normalize_columns = j.value("normalize_columns", c.normalize_columns);
    c.freeze_bottom = j.value("freeze_bottom", c.freeze_bottom);
    c.debug_orthogonality = j.value("debug_orthogonality", c.debug_orthogonality);
    return c;
  }
};

namespace detail {

// Ridge term for (F_G^T F_G)^-1: engaged only when the Gram matrix is
// ill-conditioned, with a trace-scaled magnitude unless one is given.
inline double hex_ridge(const ad::Mat& gram, double ridge_eps) {
  Eigen::JacobiSVD<ad::Mat> svd(gram);
  const auto& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  const double smin = s.size() ? s(s.size() - 1) : 0.0;
  const bool ill = !(smin > 0.0) || !std::isfinite(smin) || smax / smin > 1e8;
  if (!ill) return 0.0;
  if (ridge_eps > 0.0) return ridge_eps;
  const double auto_eps = 1e-6 * gram.trace() / static_cast<double>(gram.rows());
  return auto_eps > 0.0 ? auto_eps : 1e-12;
}

}  // namespace detail

// F_L = (I - F_G (F_G^T F_G)^-1 F_G^T) F_A, with ridge stabilization of the
// inverse when F_G^T F_G is ill-conditioned.
inline ad::Mat orthogonal_project(const ad::Mat& F_A, const ad::Mat& F_G, double ridge_eps = 0.0) {
  if (F_A.rows() != F_G.rows()) throw ModelError("orthogonal_project: row mismatch");
  ad::Mat gram = F_G.transpose() * F_G;
  const double eps = detail::hex_ridge(gram, ridge_eps);
  if (eps > 0.0) gram.diagonal().array() += eps;
  return F_A - F_G * (gram.inverse() * (F_G.transpose() * F_A));
}

// Differentiable version; the ridge magnitude is treated as a constant.
inline ad::Var orthogonal_project(ad::Tape& t, ad::Var F_A, ad::Var F_G, double ridge_eps = 0.0) {
  ad::Var Gt = t.transpose(F_G);
  ad::Var gram = t.matmul(Gt, F_G);
  const double eps = detail::hex_ridge(t.value(gram), ridge_eps);
  if (eps > 0.0) {
    const Eigen::Index k = t.value(gram).rows();
    gram = t.add(gram, t.constant(eps * ad::Mat::Identity(k, k)));
  }
  ad::Var proj = t.matmul(F_G, t.matmul(t.inverse(gram), t.matmul(Gt, F_A)));
  return t.sub(F_A, proj);
}

// Plain-matrix batch column normalization (zero mean, unit population sd);
// zero-variance columns end up all zero.
inline ad::Mat column_normalize(const ad::Mat& u) {
  ad::Tape t;
  return t.value(t.column_normalize(t.constant(u)));
}

struct HexOutputs {
  ad::Var F_A, F_P, F_G, F_L;
};

enum class HexMode { train, test };

// Shared-parameter head applied to the joint and the two zero-masked inputs.
// The projection treats F_G as a constant (its gradient comes from the F_G
// loss term alone): letting the F_L loss shape F_G turns out to push the
// superficial branch toward the uniform classifier, since a useless F_G is
// the cheapest way to make the projection remove nothing.
inline HexOutputs hex_forward(nn::Binder& bind, const nn::Linear& f, ad::Var u_bow, ad::Var u_main,
                              double ridge_eps, HexMode mode) {
  ad::Tape& t = bind.tape();
  const Eigen::Index B = t.value(u_bow).rows();
  ad::Var zero_bow = t.constant(ad::Mat::Zero(B, t.value(u_bow).cols()));
  ad::Var zero_main = t.constant(ad::Mat::Zero(B, t.value(u_main).cols()));
  HexOutputs out;
  out.F_A = f.apply(bind, t.hconcat({u_bow, u_main}));
  out.F_P = f.apply(bind, t.hconcat({zero_bow, u_main}));
  out.F_G = f.apply(bind, t.hconcat({u_bow, zero_main}));
  if (mode == HexMode::train) {
    ad::Var gram_side = t.constant(t.value(out.F_G));
    out.F_L = orthogonal_project(t, out.F_A, gram_side, ridge_eps);
  }
  return out;
}

// Baseline encoders plus the BoW sub-model and HEX projection head.
class HexModel : public PairModel {
 public:
  HexModel(const EncoderConfig& cfg, const HexConfig& hex, const EmbeddingMatrix& emb,
           std::uint64_t seed)
      : cfg_(cfg), hex_(hex) {
    cfg_.validate();
    hex_.validate();
    if (emb.weights.cols() != cfg.d_e) throw ModelError("HexModel: embedding width != d_e");
    emb_ = store_.create("emb.E", emb.weights);
    main_enc_ = MainEncoder(store_, "enc", cfg_, emb_, seed);
    bow_enc_ = BowEncoder(store_, "bow", cfg_, emb_, seed);
    RngStream init(seed_for(seed, "hex.init"));
    u_main_ = nn::Mlp::create(store_, "umain", 4 * cfg_.d_rep(), cfg_.d_mlp, cfg_.d_mlp, init);
    u_bow_ = nn::Mlp::create(store_, "ubow", 4 * cfg_.d_e, cfg_.d_mlp, cfg_.d_mlp, init);
    f_ = nn::Linear::create(store_, "f", 2 * cfg_.d_mlp, kNumClasses, init);
    // Running moments for inference-time normalization (plain buffers; the
    // optimizer skips them and checkpoints carry them).
    for (const char* head : {"umain", "ubow"}) {
      NormStats ns;
      ns.mean = store_.create(std::string(head) + ".norm.mean", ad::Mat::Zero(1, cfg_.d_mlp));
      ns.var = store_.create(std::string(head) + ".norm.var", ad::Mat::Zero(1, cfg_.d_mlp));
      ns.count = store_.create(std::string(head) + ".norm.count", ad::Mat::Zero(1, 1));
      ns.mean->trainable = ns.var->trainable = ns.count->trainable = false;
      norm_[head] = ns;
    }
  }

  // Warm start: copy embeddings/encoder weights from a trained baseline and
  // optionally freeze the bottom of the stack (embeddings + first layer).
  void init_from_baseline(const PairModel& baseline) {
    store_.copy_matching_from(baseline.params());
    if (hex_.freeze_bottom) {
      for (const auto& p : store_.items()) {
        if (p->name == "emb.E" || p->name.rfind("enc.l0.", 0) == 0) p->trainable = false;
      }
    }
  }

  ad::Var encode_bow(nn::Binder& bind, const TokenBatch& side, bool train) {
    return bow_enc_.encode(bind, side, train);
  }

  const nn::SelfAttention& bow_encoder_attention() const { return bow_enc_.attention(); }

  struct HeadDiagnostics {
    ad::Mat F_A, F_P, F_G, F_L;
    ad::Mat u_bow, u_main;
  };

  // Train-mode head tensors on one batch, for inspection and tests.
  HeadDiagnostics head_diagnostics(const PairBatch& batch) {
    ad::Tape tape;
    nn::Binder bind(tape, false);
    ad::Var h1m = main_enc_.encode(bind, batch.premise, false);
    ad::Var h2m = main_enc_.encode(bind, batch.hypothesis, false);
    ad::Var h1b = bow_enc_.encode(bind, batch.premise, false);
    ad::Var h2b = bow_enc_.encode(bind, batch.hypothesis, false);
    ad::Var u_main = u_main_.apply(bind, combine_pair(tape, h1m, h2m));
    ad::Var u_bow = u_bow_.apply(bind, combine_pair(tape, h1b, h2b));
    if (hex_.normalize_columns) {
      u_main = normalize(tape, u_main, norm_.at("umain"), false);
      u_bow = normalize(tape, u_bow, norm_.at("ubow"), false);
    }
    HexOutputs hx = hex_forward(bind, f_, u_bow, u_main, hex_.ridge_eps, HexMode::train);
    HeadDiagnostics d;
    d.F_A = tape.value(hx.F_A);
    d.F_P = tape.value(hx.F_P);
    d.F_G = tape.value(hx.F_G);
    d.F_L = tape.value(hx.F_L);
    d.u_bow = tape.value(u_bow);
    d.u_main = tape.value(u_main);
    return d;
  }

  ForwardResult build_loss(ad::Tape& tape, nn::Binder& bind, const PairBatch& batch,
                           bool train) override {
    ad::Var h1m = main_enc_.encode(bind, batch.premise, train);
    ad::Var h2m = main_enc_.encode(bind, batch.hypothesis, train);
    ad::Var h1b = bow_enc_.encode(bind, batch.premise, train);
    ad::Var h2b = bow_enc_.encode(bind, batch.hypothesis, train);
    ad::Var u_main = u_main_.apply(bind, combine_pair(tape, h1m, h2m));
    ad::Var u_bow = u_bow_.apply(bind, combine_pair(tape, h1b, h2b));
    if (hex_.normalize_columns) {
      u_main = normalize(tape, u_main, norm_.at("umain"), train);
      u_bow = normalize(tape, u_bow, norm_.at("ubow"), train);
    }
    HexOutputs hx = hex_forward(bind, f_, u_bow, u_main, hex_.ridge_eps,
                                train ? HexMode::train : HexMode::test);

    ForwardResult r;
    r.logits = hx.F_P;  // predictions always come from the main-only path
    const Eigen::Index B = tape.value(hx.F_P).rows();
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(B, 1.0 / static_cast<double>(B));
    if (train) {
      ad::Var loss_l = tape.cross_entropy(hx.F_L, batch.labels, w);
      ad::Var loss_g = tape.cross_entropy(hx.F_G, batch.labels, w);
      r.loss = tape.add(tape.scale(loss_l, hex_.loss_weight_L), tape.scale(loss_g, hex_.loss_weight_G));
      r.metrics["loss_l"] = tape.value(loss_l)(0, 0);
      r.metrics["loss_g"] = tape.value(loss_g)(0, 0);
      if (hex_.debug_orthogonality) {
        const ad::Mat residual = tape.value(hx.F_G).transpose() * tape.value(hx.F_L);
        const double bound = 1e-6 * tape.value(hx.F_G).norm() * tape.value(hx.F_A).norm() + 1e-12;
        if (residual.cwiseAbs().maxCoeff() > bound) {
          throw ModelError("hex: orthogonality residual exceeded tolerance");
        }
      }
    } else {
      r.loss = tape.cross_entropy(hx.F_P, batch.labels, w);
    }
    r.metrics["loss"] = tape.value(r.loss)(0, 0);
    return r;
  }

  nn::ParamStore& params() override { return store_; }
  const nn::ParamStore& params() const override { return store_; }
  std::string kind() const override { return "hex"; }
  const EncoderConfig& encoder_config() const override { return cfg_; }
  nlohmann::json extra_config() const override { return {{"hex", hex_.to_json()}}; }
  const HexConfig& hex_config() const { return hex_; }

 private:
  struct NormStats {
    nn::Param* mean = nullptr;
    nn::Param* var = nullptr;
    nn::Param* count = nullptr;
  };

  // Batch statistics during training (with a cumulative running-moment
  // update); running moments at inference, so predictions do not depend on
  // the composition of the evaluation batch.
  ad::Var normalize(ad::Tape& tape, ad::Var u, const NormStats& ns, bool train) {
    if (train) {
      const ad::Mat& x = tape.value(u);
      const Eigen::RowVectorXd mu = x.colwise().mean();
      const ad::Mat centered = x.rowwise() - mu;
      const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
      const double n = ns.count->value(0, 0);
      ns.mean->value = (ns.mean->value * n + ad::Mat(mu)) / (n + 1.0);
      ns.var->value = (ns.var->value * n + ad::Mat(var)) / (n + 1.0);
      ns.count->value(0, 0) = n + 1.0;
      return tape.column_normalize(u);
    }
    if (ns.count->value(0, 0) == 0.0) return tape.column_normalize(u);  // never trained
    Eigen::RowVectorXd shift = -ns.mean->value.row(0);
    Eigen::RowVectorXd scale(shift.size());
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
      const double sd = std::sqrt(std::max(0.0, ns.var->value(0, j)));
      const bool dead = sd <= 1e-12 * (1.0 + std::abs(ns.mean->value(0, j)));
      scale(j) = dead ? 0.0 : 1.0 / sd;
    }
    return tape.colwise_affine(u, shift, scale);
  }

  EncoderConfig cfg_;
  HexConfig hex_;
  nn::ParamStore store_;
  nn::Param* emb_ = nullptr;
  MainEncoder main_enc_;
  BowEncoder bow_enc_;
  nn::Mlp u_main_, u_bow_;
  nn::Linear f_;
  std::map<std::string, NormStats> norm_;
};

}  // namespace lexbias
