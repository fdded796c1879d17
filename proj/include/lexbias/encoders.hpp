#pragma once

// Sentence encoders and the baseline pair classifier: a shortcut-stacked
// BiLSTM encoder with masked max-pooling, an order-insensitive bag-of-words
// encoder (position-free multi-head self-attention + mean pooling), the
// [h1; h2; h1-h2; h1*h2] pair combiner, and an MLP classification head.

#include <json.hpp>

#include "lexbias/autodiff.hpp"
#include "lexbias/common.hpp"
#include "lexbias/corpus.hpp"
#include "lexbias/nn.hpp"

namespace lexbias {

struct EncoderConfig {
  int d_e = 300;        // word vector width
  int d_h = 300;        // LSTM hidden width per direction
  int n_layers = 3;
  int n_heads = 4;      // BoW self-attention heads
  double dropout = 0.4;
  int d_mlp = 300;      // hidden width of classifier / representation MLPs
  int max_len = 64;

  int d_rep() const { return 2 * d_h; }

  void validate() const {
    if (d_e < 1 || d_h < 1 || n_layers < 1 || n_heads < 1 || d_mlp < 1) {
      throw ModelError("EncoderConfig: dimensions must be >= 1");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ModelError("EncoderConfig: dropout must be in [0, 1)");
    if (d_e % n_heads != 0) throw ModelError("EncoderConfig: n_heads must divide d_e");
    if (max_len < 1) throw ModelError("EncoderConfig: max_len must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"d_e", d_e},       {"d_h", d_h},   {"n_layers", n_layers}, {"n_heads", n_heads},
            {"dropout", dropout}, {"d_mlp", d_mlp}, {"max_len", max_len}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.d_e = j.value("d_e", c.d_e);
    c.d_h = j.value("d_h", c.d_h);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.dropout = j.value("dropout", c.dropout);
    c.d_mlp = j.value("d_mlp", c.d_mlp);
    c.max_len = j.value("max_len", c.max_len);
    return c;
  }
};

// m = [h1; h2; h1-h2; h1 .* h2]
inline ad::Var combine_pair(ad::Tape& t, ad::Var h1, ad::Var h2) {
  if (t.value(h1).cols() != t.value(h2).cols()) {
    throw ModelError("combine_pair: representation widths differ");
  }
  return t.hconcat({h1, h2, t.sub(h1, h2), t.mul(h1, h2)});
}

// Shortcut-stacked BiLSTM sentence encoder: layer i consumes the word vectors
// concatenated with all previous layer outputs; the sentence representation
// is the masked elementwise max over time of the last layer.
class MainEncoder {
 public:
  MainEncoder() = default;

  MainEncoder(nn::ParamStore& store, const std::string& name, const EncoderConfig& cfg,
              nn::Param* embedding, std::uint64_t seed)
      : cfg_(cfg), emb_(embedding), dropout_rng_(seed_for(seed, name + ".dropout")) {
    RngStream init(seed_for(seed, name + ".init"));
    Eigen::Index d_in = cfg.d_e;
    for (int l = 0; l < cfg.n_layers; ++l) {
      layers_.push_back(nn::BiLstmLayer::create(store, name + ".l" + std::to_string(l), d_in,
                                                cfg.d_h, init));
      d_in += cfg.d_rep();
    }
  }

  // B x 2*d_h sentence representations.
  ad::Var encode(nn::Binder& bind, const TokenBatch& batch, bool train) {
    ad::Tape& t = bind.tape();
    const Eigen::Index T = batch.ids.cols();
    ad::Var emb = bind(emb_);

    std::vector<ad::Var> words(static_cast<std::size_t>(T));
    for (Eigen::Index ti = 0; ti < T; ++ti) {
      std::vector<int> ids(static_cast<std::size_t>(batch.ids.rows()));
      for (Eigen::Index i = 0; i < batch.ids.rows(); ++i) ids[static_cast<std::size_t>(i)] = batch.ids(i, ti);
      ad::Var x = t.gather_rows(emb, std::move(ids));
      words[static_cast<std::size_t>(ti)] = t.dropout(x, cfg_.dropout, dropout_rng_, train);
    }

    std::vector<std::vector<ad::Var>> stack;  // dropped outputs of finished layers
    std::vector<ad::Var> last;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::vector<ad::Var> inputs(static_cast<std::size_t>(T));
      for (Eigen::Index ti = 0; ti < T; ++ti) {
        std::vector<ad::Var> parts{words[static_cast<std::size_t>(ti)]};
        for (const auto& prev : stack) parts.push_back(prev[static_cast<std::size_t>(ti)]);
        inputs[static_cast<std::size_t>(ti)] = parts.size() == 1 ? parts[0] : t.hconcat(parts);
      }
      last = layers_[l].apply(bind, inputs, batch.mask);
      if (l + 1 < layers_.size()) {
        std::vector<ad::Var> dropped(last.size());
        for (std::size_t ti = 0; ti < last.size(); ++ti) {
          dropped[ti] = t.dropout(last[ti], cfg_.dropout, dropout_rng_, train);
        }
        stack.push_back(std::move(dropped));
      }
    }
    return t.max_over_time(last, batch.mask);
  }

  const std::vector<nn::BiLstmLayer>& layers() const { return layers_; }

 private:
  EncoderConfig cfg_;
  nn::Param* emb_ = nullptr;
  std::vector<nn::BiLstmLayer> layers_;
  RngStream dropout_rng_{0};
};

// Order-insensitive encoder: per-example self-attention over word vectors
// with no position information, then mean over the real tokens.
class BowEncoder {
 public:
  BowEncoder() = default;

  BowEncoder(nn::ParamStore& store, const std::string& name, const EncoderConfig& cfg,
             nn::Param* embedding, std::uint64_t seed)
      : cfg_(cfg), emb_(embedding), dropout_rng_(seed_for(seed, name + ".dropout")) {
    RngStream init(seed_for(seed, name + ".init"));
    att_ = nn::SelfAttention::create(store, name + ".att", cfg.d_e, cfg.n_heads, init);
  }

  // B x d_e sentence representations.
  ad::Var encode(nn::Binder& bind, const TokenBatch& batch, bool train) {
    ad::Tape& t = bind.tape();
    ad::Var emb = bind(emb_);
    std::vector<ad::Var> pooled;
    pooled.reserve(static_cast<std::size_t>(batch.ids.rows()));
    for (Eigen::Index i = 0; i < batch.ids.rows(); ++i) {
      const int len = batch.lengths[static_cast<std::size_t>(i)];
      if (len < 1) throw ModelError("encode_bow: row " + std::to_string(i) + " is fully masked");
      std::vector<int> ids(static_cast<std::size_t>(len));
      for (int ti = 0; ti < len; ++ti) ids[static_cast<std::size_t>(ti)] = batch.ids(i, ti);
      ad::Var x = t.gather_rows(emb, std::move(ids));
      x = t.dropout(x, cfg_.dropout, dropout_rng_, train);
      pooled.push_back(t.mean_rows(att_.apply(bind, x)));
    }
    return t.vconcat(pooled);
  }

  const nn::SelfAttention& attention() const { return att_; }

 private:
  EncoderConfig cfg_;
  nn::Param* emb_ = nullptr;
  nn::SelfAttention att_;
  RngStream dropout_rng_{0};
};

struct ForwardResult {
  ad::Var loss;                            // optimization objective
  ad::Var logits;                          // prediction logits for the batch
  std::map<std::string, double> metrics;   // logged loss components
};

// Common surface of the baseline/GRL/HEX pair classifiers.
class PairModel {
 public:
  virtual ~PairModel() = default;

  virtual ForwardResult build_loss(ad::Tape& tape, nn::Binder& bind, const PairBatch& batch,
                                   bool train) = 0;
  virtual nn::ParamStore& params() = 0;
  virtual const nn::ParamStore& params() const = 0;
  virtual std::string kind() const = 0;
  virtual const EncoderConfig& encoder_config() const = 0;
  virtual nlohmann::json extra_config() const { return nlohmann::json::object(); }

  // Evaluation-mode logits on a fresh tape; never consumes model RNG streams.
  Eigen::MatrixXd predict_logits(const PairBatch& batch) {
    ad::Tape tape;
    nn::Binder bind(tape, false);
    ForwardResult r = build_loss(tape, bind, batch, false);
    return tape.value(r.logits);
  }

  std::vector<int> predict(const PairBatch& batch) {
    const Eigen::MatrixXd logits = predict_logits(batch);
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
  }
};

// 3-layer shortcut-stacked BiLSTM pairs encoder + Eq.-style combiner + MLP head.
class BaselineModel : public PairModel {
 public:
  BaselineModel(const EncoderConfig& cfg, const EmbeddingMatrix& emb, std::uint64_t seed)
      : cfg_(cfg) {
    cfg_.validate();
    if (emb.weights.cols() != cfg.d_e) throw ModelError("BaselineModel: embedding width != d_e");
    emb_ = store_.create("emb.E", emb.weights);
    encoder_ = MainEncoder(store_, "enc", cfg_, emb_, seed);
    RngStream init(seed_for(seed, "cls.init"));
    classifier_ = nn::Mlp::create(store_, "cls", 4 * cfg_.d_rep(), cfg_.d_mlp, kNumClasses, init);
  }

  ad::Var encode_main(nn::Binder& bind, const TokenBatch& side, bool train) {
    return encoder_.encode(bind, side, train);
  }

  ad::Var pair_logits(nn::Binder& bind, const PairBatch& batch, bool train) {
    ad::Tape& t = bind.tape();
    ad::Var h1 = encoder_.encode(bind, batch.premise, train);
    ad::Var h2 = encoder_.encode(bind, batch.hypothesis, train);
    return classifier_.apply(bind, combine_pair(t, h1, h2));
  }

  ForwardResult build_loss(ad::Tape& tape, nn::Binder& bind, const PairBatch& batch,
                           bool train) override {
    ForwardResult r;
    r.logits = pair_logits(bind, batch, train);
    const Eigen::Index B = tape.value(r.logits).rows();
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(B, 1.0 / static_cast<double>(B));
    r.loss = tape.cross_entropy(r.logits, batch.labels, w);
    r.metrics["loss"] = tape.value(r.loss)(0, 0);
    r.metrics["loss_c"] = r.metrics["loss"];
    return r;
  }

  nn::ParamStore& params() override { return store_; }
  const nn::ParamStore& params() const override { return store_; }
  std::string kind() const override { return "baseline"; }
  const EncoderConfig& encoder_config() const override { return cfg_; }

  nn::Param* embedding() { return emb_; }
  MainEncoder& encoder() { return encoder_; }
  const nn::Mlp& classifier() const { return classifier_; }

 protected:
  EncoderConfig cfg_;
  nn::ParamStore store_;
  nn::Param* emb_ = nullptr;
  MainEncoder encoder_;
  nn::Mlp classifier_;
};

}  // namespace lexbias
