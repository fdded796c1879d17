#pragma once

// Command-line surface: audit, extract-bal, augment, train, eval, explain,
// and synth-bench. Exit codes: 0 success, 1 usage, 2 data error, 3 training
// failure. LEXBIAS_DATA_DIR provides a fallback directory for input paths.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lexbias/augmentation.hpp"
#include "lexbias/bias_audit.hpp"
#include "lexbias/config.hpp"
#include "lexbias/corpus.hpp"
#include "lexbias/explain.hpp"
#include "lexbias/synthetic.hpp"
#include "lexbias/train_eval.hpp"

namespace lexbias::cli {

inline std::string resolve_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) return path;
  if (const char* dir = std::getenv("LEXBIAS_DATA_DIR")) {
    const fs::path joined = fs::path(dir) / path;
    if (fs::exists(joined)) return joined.string();
  }
  return path;
}

inline CorpusFormat parse_format(const std::string& s) {
  if (s == "jsonl") return CorpusFormat::jsonl;
  if (s == "tsv") return CorpusFormat::tsv;
  throw DataError("unknown corpus format '" + s + "' (expected jsonl|tsv)");
}

inline BiasKind parse_bias(const std::string& s) {
  if (s == "cwb") return BiasKind::CWB;
  if (s == "wob") return BiasKind::WOB;
  throw DataError("unknown bias kind '" + s + "' (expected cwb|wob)");
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline Dataset load_dataset(const std::string& path, const std::string& format) {
  return load_pairs(resolve_path(path), parse_format(format));
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

struct CommonTrainArgs {
  std::string config_path;
  std::string model = "baseline";
  std::string train_path, selection_path, embeddings_path, baseline_ckpt;
  std::string format = "jsonl";
  std::string out_path = "model.ckpt";
  std::string metrics_path;
  std::size_t min_freq = 1;
  // flag overrides; negative/empty means "not set"
  double lr = -1.0, lambda = -1.0, dropout = -1.0;
  long long seed = -1, epochs = -1, batch_size = -1;
  long long d_e = -1, d_h = -1, n_layers = -1, n_heads = -1, d_mlp = -1, max_len = -1;
  std::string variant;
};

inline int run_train(const CommonTrainArgs& a) {
  RunConfig rc;
  if (!a.config_path.empty()) rc = RunConfig::load(resolve_path(a.config_path));
  auto override_int = [&rc](const char* sec, const char* key, long long v) {
    if (v >= 0) rc.set(sec, key, std::to_string(v));
  };
  auto override_double = [&rc](const char* sec, const char* key, double v) {
    if (v >= 0.0) rc.set(sec, key, std::to_string(v));
  };
  override_double("train", "lr", a.lr);
  override_int("train", "seed", a.seed);
  override_int("train", "max_epochs", a.epochs);
  override_int("train", "batch_size", a.batch_size);
  override_double("grl", "lambda", a.lambda);
  if (!a.variant.empty()) rc.set("grl", "variant", a.variant);
  override_int("encoder", "d_e", a.d_e);
  override_int("encoder", "d_h", a.d_h);
  override_int("encoder", "n_layers", a.n_layers);
  override_int("encoder", "n_heads", a.n_heads);
  override_int("encoder", "d_mlp", a.d_mlp);
  override_double("encoder", "dropout", a.dropout);
  override_int("corpus", "max_len", a.max_len);
  rc.set("run", "model", a.model);

  const EncoderConfig enc = encoder_config_from(rc);
  const TrainConfig tc = train_config_from(rc);

  Dataset train_ds = load_dataset(a.train_path, a.format);
  Dataset sel_ds = load_dataset(a.selection_path, a.format);
  if (train_ds.empty()) throw DataError("train: training set is empty");

  const Vocabulary vocab = build_vocab({&train_ds}, a.min_freq);
  const EmbeddingMatrix emb =
      load_embeddings(a.embeddings_path.empty() ? "" : resolve_path(a.embeddings_path), vocab,
                      enc.d_e, tc.seed);

  std::unique_ptr<PairModel> model;
  if (a.model == "baseline") {
    model = std::make_unique<BaselineModel>(enc, emb, tc.seed);
  } else if (a.model == "grl") {
    model = std::make_unique<GrlModel>(enc, grl_config_from(rc), emb, tc.seed);
  } else if (a.model == "hex") {
    model = std::make_unique<HexModel>(enc, hex_config_from(rc), emb, tc.seed);
  } else {
    throw DataError("unknown model kind '" + a.model + "' (expected baseline|grl|hex)");
  }

  if (!a.baseline_ckpt.empty()) {
    const Checkpoint ck = load_checkpoint(resolve_path(a.baseline_ckpt));
    auto base = make_model(ck);
    if (ck.vocab.hash() != vocab.hash()) {
      throw DataError("baseline checkpoint vocabulary differs from the current corpus vocabulary");
    }
    if (auto* g = dynamic_cast<GrlModel*>(model.get())) {
      g->init_from_baseline(*base);
    } else if (auto* h = dynamic_cast<HexModel*>(model.get())) {
      h->init_from_baseline(*base);
    } else {
      model->params().copy_matching_from(base->params());
    }
  }

  std::ofstream metrics;
  std::ostream* metrics_out = nullptr;
  if (!a.metrics_path.empty()) {
    metrics.open(a.metrics_path);
    if (!metrics) throw DataError("cannot write metrics file: " + a.metrics_path);
    metrics << nlohmann::json{{"config_digest", rc.digest()}, {"model", a.model}}.dump() << "\n";
    metrics_out = &metrics;
  }

  const TrainResult result = train(*model, train_ds, sel_ds, vocab, tc, metrics_out);
  save_checkpoint(a.out_path, *model, vocab, tc.seed,
                  {{"config_digest", rc.digest()},
                   {"best_epoch", result.best_epoch},
                   {"best_selection_acc", result.best_selection_acc}});
  std::cout << "trained " << a.model << ": best epoch " << result.best_epoch
            << ", selection accuracy " << result.best_selection_acc << "\n"
            << "checkpoint written to " << a.out_path << "\n";
  return 0;
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"lexical label-bias audit and debiased training for sentence-pair classifiers"};
  app.require_subcommand(1);
  int exit_code = 0;

  // ---- audit ----
  auto* audit = app.add_subcommand("audit", "compute word-label bias statistics over a training set");
  std::string audit_train, audit_format = "jsonl", audit_out = "audit.json";
  std::size_t audit_min_count = 100, audit_top_k = 4;
  double audit_threshold = 0.5;
  audit->add_option("--train", audit_train, "training corpus")->required();
  audit->add_option("--format", audit_format, "jsonl|tsv");
  audit->add_option("--min-count", audit_min_count, "minimum hypothesis occurrences");
  audit->add_option("--threshold", audit_threshold, "contradiction-rate threshold");
  audit->add_option("--top-k", audit_top_k, "words to select");
  audit->add_option("--out", audit_out, "report path")->required();
  audit->callback([&]() {
    RunConfig rc;
    rc.set("audit", "min_count", std::to_string(audit_min_count));
    rc.set("audit", "threshold", std::to_string(audit_threshold));
    rc.set("audit", "top_k", std::to_string(audit_top_k));
    const Dataset train = load_dataset(audit_train, audit_format);
    const BiasStats stats = compute_word_label_stats(train, audit_min_count);
    const auto words = select_contradiction_words(stats, audit_threshold, audit_top_k);
    write_json(audit_out, {{"config_digest", rc.digest()},
                           {"min_count", audit_min_count},
                           {"threshold", audit_threshold},
                           {"top_k", audit_top_k},
                           {"selected_words", words},
                           {"rows", audit_report_json(stats)}});
    std::cout << "audited " << train.size() << " examples; selected words:";
    for (const auto& w : words) std::cout << ' ' << w;
    std::cout << "\nreport written to " << audit_out << "\n";
  });

  // ---- extract-bal ----
  auto* extract = app.add_subcommand("extract-bal", "extract a balanced bias-evaluation set");
  std::string ex_bias, ex_train, ex_dev, ex_outdir = ".", ex_format = "jsonl";
  std::string ex_words = "no,any,never,anything,not";
  std::size_t ex_target = 550;
  double ex_not_threshold = 0.7;
  std::uint64_t ex_seed = 1;
  extract->add_option("--bias", ex_bias, "cwb|wob")->required();
  extract->add_option("--dev", ex_dev, "development corpus")->required();
  extract->add_option("--train", ex_train, "training corpus (CWB balancing source)");
  extract->add_option("--words", ex_words, "comma-separated contradiction words");
  extract->add_option("--target", ex_target, "examples per class side");
  extract->add_option("--not-threshold", ex_not_threshold, "Jaccard-distance cap for 'not'");
  extract->add_option("--seed", ex_seed, "sampling seed");
  extract->add_option("--out-dir", ex_outdir, "output directory");
  extract->add_option("--format", ex_format, "jsonl|tsv");
  extract->callback([&]() {
    namespace fs = std::filesystem;
    const BiasKind kind = parse_bias(ex_bias);
    fs::create_directories(ex_outdir);
    RunConfig rc;
    rc.set("extract", "bias", ex_bias);
    rc.set("extract", "target_per_class", std::to_string(ex_target));
    rc.set("extract", "seed", std::to_string(ex_seed));
    Dataset dev = load_dataset(ex_dev, ex_format);
    ExtractionResult res;
    if (kind == BiasKind::CWB) {
      if (ex_train.empty()) throw DataError("extract-bal --bias cwb requires --train");
      rc.set("extract", "words", ex_words);
      rc.set("extract", "not_overlap_threshold", std::to_string(ex_not_threshold));
      Dataset train = load_dataset(ex_train, ex_format);
      BalancedSetSpec spec;
      spec.bias_kind = BiasKind::CWB;
      spec.word_list = split_csv(ex_words);
      spec.target_per_class = ex_target;
      spec.not_overlap_threshold = ex_not_threshold;
      spec.seed = ex_seed;
      res = extract_cwb_balanced(train, dev, spec);
      save_jsonl(res.reduced_train, (fs::path(ex_outdir) / "reduced_train.jsonl").string());
    } else {
      res = extract_wob_balanced(dev, ex_target);
    }
    res.manifest["config_digest"] = rc.digest();
    const std::string stem = kind == BiasKind::CWB ? "bal_cwb" : "bal_wob";
    save_jsonl(res.balanced, (fs::path(ex_outdir) / (stem + ".jsonl")).string());
    write_json((fs::path(ex_outdir) / (stem + "_manifest.json")).string(), res.manifest);
    std::cout << "extracted " << res.balanced.size() << " examples into " << ex_outdir << "/" << stem
              << ".jsonl\n";
  });

  // ---- augment ----
  auto* augment = app.add_subcommand("augment", "data enhancement / synthetic stress augmentation");
  std::string au_mode, au_bias, au_train, au_out = "augmented.jsonl", au_format = "jsonl";
  std::string au_words = "no,any,never,anything,not";
  std::string au_emit = "augmented";
  std::size_t au_n = 0;
  std::uint64_t au_seed = 1;
  augment->add_option("--mode", au_mode, "origin|synthetic")->required();
  augment->add_option("--bias", au_bias, "cwb|wob")->required();
  augment->add_option("--n", au_n, "additional examples");
  augment->add_option("--train", au_train, "source corpus")->required();
  augment->add_option("--words", au_words, "contradiction words (cwb origin mode)");
  augment->add_option("--seed", au_seed, "sampling seed");
  augment->add_option("--out", au_out, "output corpus")->required();
  augment->add_option("--emit", au_emit, "augmented|synth-only");
  augment->add_option("--format", au_format, "jsonl|tsv");
  augment->callback([&]() {
    const BiasKind kind = parse_bias(au_bias);
    Dataset train = load_dataset(au_train, au_format);
    ProvenanceMap prov;
    Dataset out;
    if (au_mode == "origin") {
      EnhancementPlan plan{kind, au_n, EnhancementSource::origin, au_seed};
      const auto pool = select_counterbias_pool(train, kind, split_csv(au_words));
      out = enhance(train, plan, pool, &prov);
    } else if (au_mode == "synthetic") {
      const auto rules = kind == BiasKind::CWB ? default_cwb_rules() : std::vector<StressRule>{wob_rule()};
      if (au_emit == "synth-only") {
        out = make_stress_set(train, rules, kind, &prov);
      } else if (au_emit == "augmented") {
        out = augment_with_stress(train, au_n, rules, kind, au_seed, &prov);
      } else {
        throw DataError("unknown --emit value '" + au_emit + "' (expected augmented|synth-only)");
      }
    } else {
      throw DataError("unknown --mode value '" + au_mode + "' (expected origin|synthetic)");
    }
    save_jsonl(out, au_out, &prov);
    std::cout << "wrote " << out.size() << " examples to " << au_out << "\n";
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a baseline, GRL, or HEX classifier");
  CommonTrainArgs ta;
  tr->add_option("--model", ta.model, "baseline|grl|hex")->required();
  tr->add_option("--train", ta.train_path, "training corpus")->required();
  tr->add_option("--selection", ta.selection_path, "model-selection corpus")->required();
  tr->add_option("--embeddings", ta.embeddings_path, "pretrained word vectors (text format)");
  tr->add_option("--baseline-checkpoint", ta.baseline_ckpt, "warm-start checkpoint for grl/hex");
  tr->add_option("--config", ta.config_path, "run configuration file");
  tr->add_option("--format", ta.format, "jsonl|tsv");
  tr->add_option("--out", ta.out_path, "checkpoint output path");
  tr->add_option("--metrics", ta.metrics_path, "NDJSON metrics log path");
  tr->add_option("--min-freq", ta.min_freq, "vocabulary frequency floor");
  tr->add_option("--lr", ta.lr, "learning rate");
  tr->add_option("--lambda", ta.lambda, "GRL multitask coefficient");
  tr->add_option("--variant", ta.variant, "GRL debias variant full|basic|sent");
  tr->add_option("--seed", ta.seed, "run seed");
  tr->add_option("--epochs", ta.epochs, "training epochs");
  tr->add_option("--batch-size", ta.batch_size, "batch size");
  tr->add_option("--d-e", ta.d_e, "word vector width");
  tr->add_option("--d-h", ta.d_h, "LSTM hidden width");
  tr->add_option("--n-layers", ta.n_layers, "BiLSTM layers");
  tr->add_option("--n-heads", ta.n_heads, "BoW attention heads");
  tr->add_option("--d-mlp", ta.d_mlp, "MLP hidden width");
  tr->add_option("--dropout", ta.dropout, "dropout rate");
  tr->add_option("--max-len", ta.max_len, "token truncation length");
  tr->callback([&]() { exit_code = run_train(ta); });

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on datasets (Acc / Acc_hr)");
  std::string ev_ckpt, ev_report = "eval.json", ev_format = "jsonl";
  std::vector<std::string> ev_datasets;
  int ev_batch = 64;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--datasets", ev_datasets, "path[:bal-cwb|bal-wob|stress-cwb|stress-wob] ...")
      ->required()
      ->expected(-1);
  ev->add_option("--report", ev_report, "report output path");
  ev->add_option("--batch-size", ev_batch, "evaluation batch size");
  ev->add_option("--format", ev_format, "jsonl|tsv");
  ev->callback([&]() {
    const Checkpoint ck = load_checkpoint(resolve_path(ev_ckpt));
    auto model = make_model(ck);
    EvalReport report;
    for (const auto& spec : ev_datasets) {
      std::string path = spec;
      std::optional<HardSubsetRule> rule;
      const auto colon = spec.rfind(':');
      if (colon != std::string::npos) {
        const std::string tag = spec.substr(colon + 1);
        if (tag == "bal-cwb" || tag == "bal-wob" || tag == "stress-cwb" || tag == "stress-wob") {
          rule = HardSubsetRule::parse(tag);
          path = spec.substr(0, colon);
        }
      }
      Dataset ds = load_dataset(path, ev_format);
      report.rows.push_back(evaluate(model_predictor(*model), ds, ck.vocab,
                                     model->encoder_config().max_len, rule, ev_batch));
    }
    std::string digest = ck.header.contains("meta") ? ck.header["meta"].value("config_digest", "") : "";
    write_json(ev_report, report.to_json(digest));
    for (const auto& r : report.rows) {
      std::cout << r.name << ": acc " << r.accuracy;
      if (r.rule) std::cout << ", acc_hr " << r.accuracy_hard << " (" << r.rule->name() << ")";
      std::cout << "\n";
    }
    std::cout << "report written to " << ev_report << "\n";
  });

  // ---- explain ----
  auto* xp = app.add_subcommand("explain", "perturbation-based explanation of one prediction");
  std::string xp_ckpt, xp_data, xp_id, xp_target, xp_out, xp_format = "jsonl";
  int xp_samples = 1000, xp_topk = 6;
  std::uint64_t xp_seed = 1;
  xp->add_option("--checkpoint", xp_ckpt, "model checkpoint")->required();
  xp->add_option("--data", xp_data, "corpus containing the example")->required();
  xp->add_option("--example-id", xp_id, "pairID of the example")->required();
  xp->add_option("--target-class", xp_target, "entailment|neutral|contradiction (default: prediction)");
  xp->add_option("--samples", xp_samples, "perturbation samples");
  xp->add_option("--top-k", xp_topk, "features to report");
  xp->add_option("--seed", xp_seed, "perturbation seed");
  xp->add_option("--out", xp_out, "JSON output path");
  xp->add_option("--format", xp_format, "jsonl|tsv");
  xp->callback([&]() {
    const Checkpoint ck = load_checkpoint(resolve_path(xp_ckpt));
    auto model = make_model(ck);
    const Dataset ds = load_dataset(xp_data, xp_format);
    const PairExample* target = nullptr;
    for (const auto& ex : ds.examples) {
      if (ex.id == xp_id) {
        target = &ex;
        break;
      }
    }
    if (!target) throw DataError("example id '" + xp_id + "' not found in " + xp_data);

    ProbFn prob_fn = [&](const std::vector<const PairExample*>& exs) {
      return model_probabilities(*model, exs, ck.vocab);
    };
    int target_class;
    if (xp_target.empty()) {
      // Probe batch: the example plus dataset companions (batch statistics
      // are degenerate on duplicated rows).
      std::vector<const PairExample*> probe{target};
      for (const auto& ex : ds.examples) {
        if (probe.size() >= 32) break;
        if (&ex != target) probe.push_back(&ex);
      }
      if (probe.size() == 1) probe.push_back(target);
      const Eigen::MatrixXd p = prob_fn(probe);
      Eigen::Index arg = 0;
      p.row(0).maxCoeff(&arg);
      target_class = static_cast<int>(arg);
    } else {
      const auto parsed = parse_label(xp_target);
      if (!parsed) throw DataError("unknown target class '" + xp_target + "'");
      target_class = static_cast<int>(*parsed);
    }

    LimeOptions opts;
    opts.n_samples = xp_samples;
    opts.top_k = xp_topk;
    opts.seed = xp_seed;
    const Explanation explanation = lime_explain(prob_fn, *target, target_class, opts);
    std::cout << "explaining " << xp_id << " toward class "
              << label_name(static_cast<Label>(target_class)) << "\n"
              << explanation.render_text();
    if (!xp_out.empty()) write_json(xp_out, explanation.to_json());
  });

  // ---- synth-bench ----
  auto* sy = app.add_subcommand("synth-bench", "generate a planted-bias synthetic corpus");
  std::string sy_outdir = ".";
  SynthConfig sc;
  bool sy_no_secondary = false;
  sy->add_option("--out-dir", sy_outdir, "output directory");
  sy->add_option("--n-train", sc.n_train, "training examples");
  sy->add_option("--n-dev", sc.n_dev, "development examples");
  sy->add_option("--n-test", sc.n_test, "test examples");
  sy->add_option("--seed", sc.seed, "generator seed");
  sy->add_option("--cwb-rate", sc.cwb_rate, "P(contradiction | designated token)");
  sy->add_option("--wob-rate", sc.wob_rate, "P(entailment | high overlap)");
  sy->add_option("--noise", sc.label_noise, "label noise fraction");
  sy->add_option("--neg-rate-contra", sc.neg_rate_contra, "P(token | contradiction)");
  sy->add_option("--neg-struct-link", sc.neg_struct_link,
                 "fraction of token insertions tied to the structural contradiction");
  sy->add_option("--premise-neg-rate", sc.premise_neg_rate, "P(token in premise)");
  sy->add_option("--filler-scatter", sc.filler_scatter,
                 "probability a hypothesis filler lands at an arbitrary interior position");
  sy->add_option("--entities", sc.n_entities, "entity token inventory size");
  sy->add_option("--verbs", sc.n_verbs, "verb token inventory size");
  sy->add_option("--fillers", sc.n_fillers, "filler token inventory size");
  sy->add_flag("--no-secondary", sy_no_secondary, "plant only the designated word");
  sy->callback([&]() {
    namespace fs = std::filesystem;
    sc.plant_secondary_words = !sy_no_secondary;
    fs::create_directories(sy_outdir);
    const SynthCorpus corpus = generate_synthetic(sc);
    save_jsonl(corpus.train, (fs::path(sy_outdir) / "train.jsonl").string());
    save_jsonl(corpus.dev, (fs::path(sy_outdir) / "dev.jsonl").string());
    save_jsonl(corpus.test, (fs::path(sy_outdir) / "test.jsonl").string());
    RunConfig rc;
    rc.set("synth", "n_train", std::to_string(sc.n_train));
    rc.set("synth", "n_dev", std::to_string(sc.n_dev));
    rc.set("synth", "n_test", std::to_string(sc.n_test));
    rc.set("synth", "seed", std::to_string(sc.seed));
    rc.set("synth", "cwb_rate", std::to_string(sc.cwb_rate));
    rc.set("synth", "wob_rate", std::to_string(sc.wob_rate));
    rc.set("synth", "label_noise", std::to_string(sc.label_noise));
    rc.set("synth", "secondary_words", sc.plant_secondary_words ? "true" : "false");
    write_json((fs::path(sy_outdir) / "generator.json").string(),
               {{"config_digest", rc.digest()},
                {"designated_word", synth_designated_word()},
                {"n_train", sc.n_train},
                {"n_dev", sc.n_dev},
                {"n_test", sc.n_test},
                {"seed", sc.seed},
                {"cwb_rate", sc.cwb_rate},
                {"wob_rate", sc.wob_rate},
                {"label_noise", sc.label_noise}});
    std::cout << "wrote synthetic corpus (" << corpus.train.size() << "/" << corpus.dev.size() << "/"
              << corpus.test.size() << " examples) to " << sy_outdir << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  static const char* prog = "lexbias";
  argv.push_back(prog);
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lexbias::cli
