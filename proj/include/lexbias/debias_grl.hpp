#pragma once

// Embedding-level adversarial debiasing: per-token debias networks trained
// through gradient reversal, in three input variants. The debias head
// descends on its token-classification loss while the encoder receives the
// negated (lambda-scaled) gradient.

#include <optional>

#include <json.hpp>

#include "lexbias/autodiff.hpp"
#include "lexbias/common.hpp"
#include "lexbias/encoders.hpp"
#include "lexbias/nn.hpp"

namespace lexbias {

enum class DebiasVariant {
  FULL,   // token vector + the other sentence's representation
  BASIC,  // token vector only
  SENT,   // one sentence representation only
};

inline const char* debias_variant_name(DebiasVariant v) {
  switch (v) {
    case DebiasVariant::FULL: return "full";
    case DebiasVariant::BASIC: return "basic";
    case DebiasVariant::SENT: return "sent";
  }
  return "?";
}

inline DebiasVariant parse_debias_variant(const std::string& s) {
  if (s == "full") return DebiasVariant::FULL;
  if (s == "basic") return DebiasVariant::BASIC;
  if (s == "sent") return DebiasVariant::SENT;
  throw DataError("unknown debias variant '" + s + "' (expected full|basic|sent)");
}

struct GrlConfig {
  double lambda = 1.0;  // multitask coefficient
  DebiasVariant variant = DebiasVariant::FULL;

  void validate() const {
    if (lambda < 0.0) throw ModelError("GrlConfig: lambda must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"lambda", lambda}, {"variant", debias_variant_name(variant)}};
  }

  static GrlConfig from_json(const nlohmann::json& j) {
    GrlConfig c;
    c.lambda = j.value("lambda", c.lambda);
    if (j.contains("variant")) c.variant = parse_debias_variant(j["variant"].get<std::string>());
    return c;
  }
};

// Paper-form total loss value: L = L_c - (lambda / (l_a + l_b)) * sum(losses).
// The optimization path itself routes L_ed through grad_reverse; this scalar
// is what gets reported.
inline double total_loss(double loss_c, const std::vector<double>& per_token_losses, double lambda,
                         int l_a, int l_b) {
  if (l_a < 1 || l_b < 1) throw ModelError("total_loss: sentence lengths must be >= 1");
  double sum = 0.0;
  for (double v : per_token_losses) sum += v;
  return loss_c - lambda / static_cast<double>(l_a + l_b) * sum;
}

// Debias-network logits from gradient-reversed inputs. Inputs must match the
// variant: BASIC ignores the sentence representation, SENT ignores the token
// vector, FULL consumes both.
inline ad::Var debias_logits(nn::Binder& bind, const nn::Mlp& net, DebiasVariant variant,
                             std::optional<ad::Var> token_vec, std::optional<ad::Var> sentence_rep,
                             double lambda) {
  ad::Tape& t = bind.tape();
  switch (variant) {
    case DebiasVariant::BASIC:
      if (!token_vec) throw ModelError("debias_logits: BASIC variant needs a token vector");
      return net.apply(bind, t.grad_reverse(*token_vec, lambda));
    case DebiasVariant::SENT:
      if (!sentence_rep) throw ModelError("debias_logits: SENT variant needs a sentence representation");
      return net.apply(bind, t.grad_reverse(*sentence_rep, lambda));
    case DebiasVariant::FULL:
      if (!token_vec || !sentence_rep) {
        throw ModelError("debias_logits: FULL variant needs token vector and sentence representation");
      }
      return net.apply(
          bind, t.hconcat({t.grad_reverse(*token_vec, lambda), t.grad_reverse(*sentence_rep, lambda)}));
  }
  throw ModelError("debias_logits: unknown variant");
}

// Baseline classifier plus the adversarial embedding-debias head.
class GrlModel : public BaselineModel {
 public:
  GrlModel(const EncoderConfig& cfg, const GrlConfig& grl, const EmbeddingMatrix& emb,
           std::uint64_t seed)
      : BaselineModel(cfg, emb, seed), grl_(grl) {
    grl_.validate();
    Eigen::Index d_in = 0;
    switch (grl_.variant) {
      case DebiasVariant::FULL: d_in = cfg_.d_e + cfg_.d_rep(); break;
      case DebiasVariant::BASIC: d_in = cfg_.d_e; break;
      case DebiasVariant::SENT: d_in = cfg_.d_rep(); break;
    }
    RngStream init(seed_for(seed, "debias.init"));
    debias_ = nn::Mlp::create(store_, "debias", d_in, cfg_.d_mlp, kNumClasses, init, "adversary");
  }

  void init_from_baseline(const PairModel& baseline) { store_.copy_matching_from(baseline.params()); }

  ForwardResult build_loss(ad::Tape& tape, nn::Binder& bind, const PairBatch& batch,
                           bool train) override {
    ad::Var h1 = encoder_.encode(bind, batch.premise, train);
    ad::Var h2 = encoder_.encode(bind, batch.hypothesis, train);
    ad::Var logits = classifier_.apply(bind, combine_pair(tape, h1, h2));
    const Eigen::Index B = tape.value(logits).rows();
    const Eigen::VectorXd w_mean = Eigen::VectorXd::Constant(B, 1.0 / static_cast<double>(B));
    ad::Var loss_c = tape.cross_entropy(logits, batch.labels, w_mean);

    // Per-example scaling 1/(l_a + l_b), averaged over the batch.
    Eigen::VectorXd pair_scale(B);
    for (Eigen::Index i = 0; i < B; ++i) {
      const int la = batch.premise.lengths[static_cast<std::size_t>(i)];
      const int lb = batch.hypothesis.lengths[static_cast<std::size_t>(i)];
      pair_scale(i) = 1.0 / (static_cast<double>(B) * static_cast<double>(la + lb));
    }

    ad::Var loss_ed = build_debias_loss(bind, batch, h1, h2, pair_scale);

    ForwardResult r;
    r.logits = logits;
    r.loss = tape.add(loss_c, loss_ed);  // lambda is applied inside grad_reverse
    r.metrics["loss_c"] = tape.value(loss_c)(0, 0);
    r.metrics["loss_ed"] = tape.value(loss_ed)(0, 0);
    r.metrics["loss"] = r.metrics["loss_c"] - grl_.lambda * r.metrics["loss_ed"];
    return r;
  }

  std::string kind() const override { return "grl"; }
  nlohmann::json extra_config() const override { return {{"grl", grl_.to_json()}}; }
  const GrlConfig& grl_config() const { return grl_; }
  const nn::Mlp& debias_net() const { return debias_; }

  // Scaled adversary loss for one batch; exposed for the sign-contract tests.
  ad::Var build_debias_loss(nn::Binder& bind, const PairBatch& batch, ad::Var h_premise,
                            ad::Var h_hypothesis, const Eigen::VectorXd& pair_scale) {
    ad::Tape& t = bind.tape();
    if (grl_.variant == DebiasVariant::SENT) {
      std::vector<int> labels = batch.labels;
      ad::Var la = debias_logits(bind, debias_, grl_.variant, std::nullopt, h_premise, grl_.lambda);
      ad::Var lb = debias_logits(bind, debias_, grl_.variant, std::nullopt, h_hypothesis, grl_.lambda);
      return t.add(t.cross_entropy(la, labels, pair_scale), t.cross_entropy(lb, labels, pair_scale));
    }

    // Token-level variants: stack every real token of both sentences.
    std::vector<int> token_ids, example_rows, labels;
    ad::Var emb = bind(embedding());
    auto collect = [&](const TokenBatch& side) {
      token_ids.clear();
      example_rows.clear();
      labels.clear();
      for (Eigen::Index i = 0; i < side.ids.rows(); ++i) {
        for (int ti = 0; ti < side.lengths[static_cast<std::size_t>(i)]; ++ti) {
          token_ids.push_back(side.ids(i, ti));
          example_rows.push_back(static_cast<int>(i));
          labels.push_back(batch.labels[static_cast<std::size_t>(i)]);
        }
      }
    };
    auto side_loss = [&](const TokenBatch& side, ad::Var other_rep) {
      collect(side);
      ad::Var tok = t.gather_rows(emb, token_ids);
      std::optional<ad::Var> other;
      if (grl_.variant == DebiasVariant::FULL) other = t.gather_rows(other_rep, example_rows);
      ad::Var logits = debias_logits(bind, debias_, grl_.variant, tok, other, grl_.lambda);
      Eigen::VectorXd w(static_cast<Eigen::Index>(example_rows.size()));
      for (std::size_t k = 0; k < example_rows.size(); ++k) {
        w(static_cast<Eigen::Index>(k)) = pair_scale(example_rows[k]);
      }
      return t.cross_entropy(logits, labels, w);
    };
    ad::Var loss_a = side_loss(batch.premise, h_hypothesis);
    ad::Var loss_b = side_loss(batch.hypothesis, h_premise);
    return t.add(loss_a, loss_b);
  }

 private:
  GrlConfig grl_;
  nn::Mlp debias_;
};

}  // namespace lexbias
