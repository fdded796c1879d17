#pragma once

// Training loop with per-epoch model selection, hard-subset rules, the
// Acc/Acc_hr evaluation harness, and versioned binary checkpoints.

#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>

#include <json.hpp>

#include "lexbias/bias_audit.hpp"
#include "lexbias/corpus.hpp"
#include "lexbias/debias_grl.hpp"
#include "lexbias/encoders.hpp"
#include "lexbias/hex_projection.hpp"
#include "lexbias/nn.hpp"

namespace lexbias {

struct TrainConfig {
  double lr = 4e-4;
  int batch_size = 32;
  int max_epochs = 10;
  std::uint64_t seed = 1;
  std::string selection_split = "dev_mismatched";
  double clip_norm = 5.0;

  void validate() const {
    if (lr <= 0.0) throw TrainError("TrainConfig: learning rate must be > 0");
    if (batch_size < 2) throw TrainError("TrainConfig: batch_size must be >= 2");
    if (max_epochs < 1) throw TrainError("TrainConfig: max_epochs must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"lr", lr},     {"batch_size", batch_size},           {"max_epochs", max_epochs},
            {"seed", seed}, {"selection_split", selection_split}, {"clip_norm", clip_norm}};
  }
};

enum class EvalSource { Bal, Stress };

// Maps (bias kind, evaluation-set kind) to the label set where the bias
// heuristic is wrong.
struct HardSubsetRule {
  BiasKind bias_kind = BiasKind::CWB;
  EvalSource source_kind = EvalSource::Bal;

  bool is_hard(Label l) const {
    if (bias_kind == BiasKind::CWB) return l != Label::contradiction;  // Bal and Stress
    return source_kind == EvalSource::Bal ? l != Label::entailment : l == Label::entailment;
  }

  std::string name() const {
    return std::string(source_kind == EvalSource::Bal ? "bal" : "stress") + "-" +
           bias_kind_name(bias_kind);
  }

  static HardSubsetRule parse(const std::string& s) {
    HardSubsetRule r;
    if (s == "bal-cwb") return {BiasKind::CWB, EvalSource::Bal};
    if (s == "bal-wob") return {BiasKind::WOB, EvalSource::Bal};
    if (s == "stress-cwb") return {BiasKind::CWB, EvalSource::Stress};
    if (s == "stress-wob") return {BiasKind::WOB, EvalSource::Stress};
    throw DataError("unknown hard-subset rule '" + s +
                    "' (expected bal-cwb|bal-wob|stress-cwb|stress-wob)");
  }
};

inline Dataset hard_subset(const Dataset& ds, const HardSubsetRule& rule) {
  Dataset out;
  out.name = ds.name + "-hard";
  for (const auto& ex : ds.examples) {
    if (rule.is_hard(ex.label)) out.examples.push_back(ex);
  }
  return out;
}

struct EvalRow {
  std::string name;
  std::size_t n = 0;
  double accuracy = 0.0;
  std::size_t n_hard = 0;
  double accuracy_hard = 0.0;
  std::optional<HardSubsetRule> rule;

  nlohmann::json to_json() const {
    nlohmann::json j{{"name", name}, {"n", n}, {"accuracy", accuracy}};
    if (rule) {
      j["rule"] = rule->name();
      j["n_hard"] = n_hard;
      j["accuracy_hard"] = accuracy_hard;
    }
    return j;
  }
};

struct EvalReport {
  std::vector<EvalRow> rows;

  nlohmann::json to_json(const std::string& config_digest = "") const {
    nlohmann::json j;
    if (!config_digest.empty()) j["config_digest"] = config_digest;
    j["datasets"] = nlohmann::json::array();
    for (const auto& r : rows) j["datasets"].push_back(r.to_json());
    return j;
  }
};

using PredictFn = std::function<std::vector<int>(const PairBatch&)>;

inline PredictFn model_predictor(PairModel& model) {
  return [&model](const PairBatch& b) { return model.predict(b); };
}

// Softmax class probabilities for a list of examples, computed in chunks that
// never leave a single-example tail (batch statistics need >= 2 rows).
inline Eigen::MatrixXd model_probabilities(PairModel& model, const std::vector<const PairExample*>& examples,
                                           const Vocabulary& vocab, int batch_size = 64) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(examples.size()), kNumClasses);
  const int max_len = model.encoder_config().max_len;
  std::size_t i = 0;
  while (i < examples.size()) {
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch_size), examples.size() - i);
    if (examples.size() - i - take == 1 && take > 1) --take;
    std::vector<const PairExample*> chunk(examples.begin() + static_cast<std::ptrdiff_t>(i),
                                          examples.begin() + static_cast<std::ptrdiff_t>(i + take));
    const Eigen::MatrixXd logits = model.predict_logits(encode_batch(chunk, vocab, max_len));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double m = logits.row(r).maxCoeff();
      Eigen::RowVectorXd e = (logits.row(r).array() - m).exp();
      out.row(static_cast<Eigen::Index>(i) + r) = e / e.sum();
    }
    i += take;
  }
  return out;
}

// Sequential batches; if the remainder would be a single example it is merged
// into a final batch of two (HEX column normalization needs >= 2 rows).
inline std::vector<std::vector<const PairExample*>> eval_batches(const Dataset& ds, int batch_size) {
  std::vector<std::vector<const PairExample*>> out;
  const std::size_t n = ds.examples.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n - i);
    if (n - i - take == 1 && take > 1) --take;  // never leave a 1-example tail
    std::vector<const PairExample*> b;
    b.reserve(take);
    for (std::size_t k = 0; k < take; ++k) b.push_back(&ds.examples[i + k]);
    out.push_back(std::move(b));
    i += take;
  }
  return out;
}

inline EvalRow evaluate(const PredictFn& predict, const Dataset& ds, const Vocabulary& vocab,
                        int max_len, std::optional<HardSubsetRule> rule = std::nullopt,
                        int batch_size = 64) {
  if (ds.empty()) throw DataError("evaluate: dataset '" + ds.name + "' is empty");
  EvalRow row;
  row.name = ds.name;
  row.rule = rule;
  std::size_t correct = 0, hard_correct = 0;
  for (const auto& b : eval_batches(ds, batch_size)) {
    PairBatch batch = encode_batch(b, vocab, max_len);
    const std::vector<int> pred = predict(batch);
    if (pred.size() != b.size()) throw ModelError("evaluate: predictor returned wrong count");
    for (std::size_t i = 0; i < b.size(); ++i) {
      const bool ok = pred[i] == static_cast<int>(b[i]->label);
      ++row.n;
      correct += ok;
      if (rule && rule->is_hard(b[i]->label)) {
        ++row.n_hard;
        hard_correct += ok;
      }
    }
  }
  row.accuracy = static_cast<double>(correct) / static_cast<double>(row.n);
  row.accuracy_hard =
      row.n_hard == 0 ? 0.0 : static_cast<double>(hard_correct) / static_cast<double>(row.n_hard);
  return row;
}

struct TrainResult {
  int best_epoch = 0;  // 1-based
  double best_selection_acc = 0.0;
  std::vector<double> epoch_selection_acc;
  std::int64_t steps = 0;
};

namespace detail {

inline std::vector<ad::Mat> snapshot_values(const nn::ParamStore& store) {
  std::vector<ad::Mat> out;
  out.reserve(store.items().size());
  for (const auto& p : store.items()) out.push_back(p->value);
  return out;
}

inline void restore_values(nn::ParamStore& store, const std::vector<ad::Mat>& snap) {
  for (std::size_t i = 0; i < store.items().size(); ++i) store.items()[i]->value = snap[i];
}

}  // namespace detail

// Epoch-wise training with selection on a held-out split; the model is left
// at the parameters of its best selection epoch (ties go to the earlier one).
// Aborts on non-finite loss, reporting the last finite step.
inline TrainResult train(PairModel& model, const Dataset& train_ds, const Dataset& selection_ds,
                         const Vocabulary& vocab, const TrainConfig& cfg,
                         std::ostream* metrics = nullptr) {
  cfg.validate();
  if (train_ds.empty()) throw TrainError("train: empty training set");
  if (selection_ds.empty()) throw TrainError("train: empty selection set");
  const int max_len = model.encoder_config().max_len;

  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.clip_norm = cfg.clip_norm;
  nn::Adam adam(adam_cfg);

  RngStream shuffle_rng(seed_for(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(train_ds.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::vector<ad::Mat> best_snapshot;
  std::int64_t step = 0;
  double last_finite_loss = 0.0;
  std::int64_t last_finite_step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                     order.size() - start);
      if (take < 2) continue;  // batch statistics need at least two rows
      std::vector<const PairExample*> exs;
      exs.reserve(take);
      for (std::size_t k = 0; k < take; ++k) exs.push_back(&train_ds.examples[order[start + k]]);
      PairBatch batch = encode_batch(exs, vocab, max_len);

      ad::Tape tape;
      nn::Binder bind(tape, true);
      ForwardResult fr = model.build_loss(tape, bind, batch, true);
      const double objective = tape.value(fr.loss)(0, 0);
      if (!std::isfinite(objective)) {
        throw TrainError("training diverged at step " + std::to_string(step + 1) +
                         "; last finite step " + std::to_string(last_finite_step) + " had loss " +
                         std::to_string(last_finite_loss));
      }
      tape.backward(fr.loss);
      adam.step(tape, bind);
      ++step;
      last_finite_loss = objective;
      last_finite_step = step;
      if (metrics) {
        nlohmann::json j{{"step", step}, {"epoch", epoch}};
        for (const auto& [k, v] : fr.metrics) j[k] = v;
        (*metrics) << j.dump() << "\n";
      }
    }

    const EvalRow sel = evaluate(model_predictor(model), selection_ds, vocab, max_len);
    result.epoch_selection_acc.push_back(sel.accuracy);
    if (metrics) {
      (*metrics) << nlohmann::json{{"epoch", epoch}, {"selection_acc", sel.accuracy}}.dump() << "\n";
    }
    if (result.best_epoch == 0 || sel.accuracy > result.best_selection_acc) {
      result.best_epoch = epoch;
      result.best_selection_acc = sel.accuracy;
      best_snapshot = detail::snapshot_values(model.params());
    }
  }

  detail::restore_values(model.params(), best_snapshot);
  result.steps = step;
  return result;
}

// ---- checkpoints ----

inline constexpr char kCheckpointMagic[8] = {'L', 'X', 'B', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::string& path, const PairModel& model, const Vocabulary& vocab,
                            std::uint64_t seed, const nlohmann::json& meta = {}) {
  nlohmann::json header;
  header["format"] = "lexbias-checkpoint";
  header["version"] = 1;
  header["model_kind"] = model.kind();
  header["encoder"] = model.encoder_config().to_json();
  header["extra"] = model.extra_config();
  header["seed"] = seed;
  header["vocab_hash"] = hex_digest(vocab.hash());
  header["vocab"] = vocab.tokens();
  if (!meta.is_null() && !meta.empty()) header["meta"] = meta;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.params().items()) {
    params.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"group", p->group},
                      {"trainable", p->trainable}});
  }
  header["params"] = params;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  const std::string hs = header.dump();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : model.params().items()) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
}

struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, ad::Mat>> params;
  Vocabulary vocab;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("not a lexbias checkpoint: " + path);
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint header: " + path);

  Checkpoint ck;
  ck.header = nlohmann::json::parse(hs);
  if (ck.header.value("version", 0) != 1) {
    throw DataError("unsupported checkpoint version in " + path);
  }
  const auto tokens = ck.header["vocab"].get<std::vector<std::string>>();
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw DataError("checkpoint vocabulary missing reserved tokens: " + path);
  }
  for (std::size_t i = 2; i < tokens.size(); ++i) ck.vocab.add(tokens[i]);

  for (const auto& pj : ck.header["params"]) {
    const auto rows = pj["rows"].get<Eigen::Index>();
    const auto cols = pj["cols"].get<Eigen::Index>();
    ad::Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
    if (!in) throw DataError("truncated checkpoint tensor data: " + path);
    ck.params.emplace_back(pj["name"].get<std::string>(), std::move(m));
  }
  return ck;
}

// Rebuilds the concrete model class recorded in a checkpoint and loads its
// parameter tensors.
inline std::unique_ptr<PairModel> make_model(const Checkpoint& ck) {
  const EncoderConfig cfg = EncoderConfig::from_json(ck.header["encoder"]);
  const std::uint64_t seed = ck.header.value("seed", std::uint64_t{1});
  EmbeddingMatrix emb;
  emb.weights.setZero(ck.vocab.size(), cfg.d_e);

  std::unique_ptr<PairModel> model;
  const std::string kind = ck.header["model_kind"].get<std::string>();
  const nlohmann::json extra = ck.header.value("extra", nlohmann::json::object());
  if (kind == "baseline") {
    model = std::make_unique<BaselineModel>(cfg, emb, seed);
  } else if (kind == "grl") {
    model = std::make_unique<GrlModel>(cfg, GrlConfig::from_json(extra.value("grl", nlohmann::json::object())),
                                       emb, seed);
  } else if (kind == "hex") {
    model = std::make_unique<HexModel>(cfg, HexConfig::from_json(extra.value("hex", nlohmann::json::object())),
                                       emb, seed);
  } else {
    throw DataError("unknown model kind in checkpoint: " + kind);
  }

  for (const auto& [name, value] : ck.params) {
    nn::Param* p = model->params().find(name);
    if (!p) throw DataError("checkpoint parameter '" + name + "' not present in model");
    if (p->value.rows() != value.rows() || p->value.cols() != value.cols()) {
      throw DataError("checkpoint parameter '" + name + "' has mismatched shape");
    }
    p->value = value;
  }
  return model;
}

}  // namespace lexbias
