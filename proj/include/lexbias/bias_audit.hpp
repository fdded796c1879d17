#pragma once

// Word-label bias statistics, contradiction-word selection, and extraction of
// balanced CWB/WOB evaluation sets from original-distribution data.

#include <array>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lexbias/common.hpp"
#include "lexbias/corpus.hpp"

namespace lexbias {

enum class BiasKind { CWB, WOB };

inline const char* bias_kind_name(BiasKind k) { return k == BiasKind::CWB ? "cwb" : "wob"; }

inline std::set<std::string> token_set(const std::vector<std::string>& tokens) {
  return {tokens.begin(), tokens.end()};
}

// 1 - |A ∩ B| / |A ∪ B| over unique tokens.
inline double jaccard_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const auto sa = token_set(a);
  const auto sb = token_set(b);
  if (sa.empty() && sb.empty()) throw DataError("jaccard_distance: both token sets empty");
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

struct WordLabelRow {
  std::size_t total = 0;                   // hypotheses containing the word
  std::array<std::size_t, kNumClasses> per_label{0, 0, 0};

  double rate(Label l) const {
    return total == 0 ? 0.0 : static_cast<double>(per_label[static_cast<std::size_t>(l)]) /
                                  static_cast<double>(total);
  }
};

// Per-word occurrence counts over hypothesis sentences (one count per example
// containing the word) and conditional label rates.
struct BiasStats {
  std::map<std::string, WordLabelRow> words;
  std::size_t min_count = 0;
};

// Associative accumulation: stats can be computed over shards and merged.
inline void accumulate_word_label_stats(BiasStats& stats, const Dataset& shard) {
  for (const auto& ex : shard.examples) {
    for (const auto& t : token_set(ex.hypothesis)) {
      auto& row = stats.words[t];
      ++row.total;
      ++row.per_label[static_cast<std::size_t>(ex.label)];
    }
  }
}

inline BiasStats merge_word_label_stats(const BiasStats& a, const BiasStats& b) {
  BiasStats out = a;
  for (const auto& [word, row] : b.words) {
    auto& dst = out.words[word];
    dst.total += row.total;
    for (std::size_t i = 0; i < kNumClasses; ++i) dst.per_label[i] += row.per_label[i];
  }
  return out;
}

inline BiasStats compute_word_label_stats(const Dataset& train, std::size_t min_count = 100) {
  if (train.empty()) throw DataError("compute_word_label_stats: empty training set");
  BiasStats stats;
  accumulate_word_label_stats(stats, train);
  stats.min_count = min_count;
  for (auto it = stats.words.begin(); it != stats.words.end();) {
    if (it->second.total < min_count) {
      it = stats.words.erase(it);
    } else {
      ++it;
    }
  }
  return stats;
}

// The top_k most frequent words whose contradiction rate exceeds threshold,
// ordered by frequency descending. May return fewer than top_k.
inline std::vector<std::string> select_contradiction_words(const BiasStats& stats, double threshold,
                                                           std::size_t top_k) {
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw DataError("select_contradiction_words: threshold must be in (0, 1)");
  }
  std::vector<std::pair<std::string, std::size_t>> eligible;
  for (const auto& [word, row] : stats.words) {
    if (row.rate(Label::contradiction) > threshold) eligible.emplace_back(word, row.total);
  }
  std::sort(eligible.begin(), eligible.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (eligible.size() > top_k) eligible.resize(top_k);
  std::vector<std::string> out;
  out.reserve(eligible.size());
  for (auto& [word, count] : eligible) out.push_back(word);
  return out;
}

inline nlohmann::json audit_report_json(const BiasStats& stats) {
  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::pair<std::string, const WordLabelRow*>> ordered;
  ordered.reserve(stats.words.size());
  for (const auto& [word, row] : stats.words) ordered.emplace_back(word, &row);
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second->total != b.second->total) return a.second->total > b.second->total;
    return a.first < b.first;
  });
  for (const auto& [word, row] : ordered) {
    rows.push_back({{"word", word},
                    {"count", row->total},
                    {"p_entail", row->rate(Label::entailment)},
                    {"p_neutral", row->rate(Label::neutral)},
                    {"p_contra", row->rate(Label::contradiction)}});
  }
  return rows;
}

struct BalancedSetSpec {
  BiasKind bias_kind = BiasKind::CWB;
  std::vector<std::string> word_list;      // CWB only
  std::size_t target_per_class = 550;
  double not_overlap_threshold = 0.7;      // Jaccard-distance cap for the 'not' rule
  std::uint64_t seed = 1;

  void validate() const {
    if (target_per_class < 1) throw DataError("BalancedSetSpec: target_per_class must be >= 1");
    if (bias_kind == BiasKind::CWB && word_list.empty()) {
      throw DataError("BalancedSetSpec: CWB extraction needs a non-empty word list");
    }
  }
};

// CWB selection predicate: some listed word in the hypothesis, none in the
// premise. Examples qualifying only through 'not' must additionally have
// small Jaccard distance between the two sentences.
inline bool cwb_predicate(const PairExample& ex, const std::vector<std::string>& words,
                          double not_overlap_threshold) {
  const auto hyp = token_set(ex.hypothesis);
  const auto prem = token_set(ex.premise);
  for (const auto& w : words) {
    if (prem.count(w)) return false;
  }
  bool via_plain = false;
  bool has_not = false;
  for (const auto& w : words) {
    if (!hyp.count(w)) continue;
    if (w == "not") {
      has_not = true;
    } else {
      via_plain = true;
    }
  }
  if (via_plain) return true;
  if (has_not) return jaccard_distance(ex.premise, ex.hypothesis) <= not_overlap_threshold;
  return false;
}

struct ExtractionResult {
  Dataset balanced;
  Dataset reduced_train;   // CWB only: train minus the moved examples
  nlohmann::json manifest;
};

// Balances contradiction vs non-contradiction among predicate-matching dev
// examples; shortfalls on either side are filled by moving matching examples
// out of the training set. Deterministic under spec.seed.
inline ExtractionResult extract_cwb_balanced(const Dataset& train, const Dataset& dev,
                                             const BalancedSetSpec& spec) {
  spec.validate();
  if (spec.bias_kind != BiasKind::CWB) throw DataError("extract_cwb_balanced: spec.bias_kind must be CWB");

  auto matches = [&](const PairExample& ex) {
    return cwb_predicate(ex, spec.word_list, spec.not_overlap_threshold);
  };
  auto is_contra = [](const PairExample& ex) { return ex.label == Label::contradiction; };

  std::vector<std::size_t> dev_contra, dev_noncontra;
  for (std::size_t i = 0; i < dev.examples.size(); ++i) {
    if (!matches(dev.examples[i])) continue;
    (is_contra(dev.examples[i]) ? dev_contra : dev_noncontra).push_back(i);
  }

  RngStream rng(seed_for(spec.seed, "cwb-extract"));
  auto subsample = [&](std::vector<std::size_t>& idx, std::size_t k) {
    if (idx.size() <= k) return;
    auto chosen = rng.sample_without_replacement(idx.size(), k);
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> out;
    out.reserve(k);
    for (auto c : chosen) out.push_back(idx[c]);
    idx = std::move(out);
  };
  subsample(dev_contra, spec.target_per_class);
  subsample(dev_noncontra, spec.target_per_class);

  const std::size_t need_contra = spec.target_per_class - dev_contra.size();
  const std::size_t need_noncontra = spec.target_per_class - dev_noncontra.size();

  std::vector<std::size_t> train_contra_pool, train_noncontra_pool;
  for (std::size_t i = 0; i < train.examples.size(); ++i) {
    if (!matches(train.examples[i])) continue;
    (is_contra(train.examples[i]) ? train_contra_pool : train_noncontra_pool).push_back(i);
  }
  if (train_contra_pool.size() < need_contra || train_noncontra_pool.size() < need_noncontra) {
    throw DataError("extract_cwb_balanced: training pool too small (need " +
                    std::to_string(need_contra) + " contradiction, have " +
                    std::to_string(train_contra_pool.size()) + "; need " +
                    std::to_string(need_noncontra) + " non-contradiction, have " +
                    std::to_string(train_noncontra_pool.size()) + ")");
  }

  auto draw = [&](const std::vector<std::size_t>& pool, std::size_t k) {
    auto chosen = rng.sample_without_replacement(pool.size(), k);
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> out;
    out.reserve(k);
    for (auto c : chosen) out.push_back(pool[c]);
    return out;
  };
  const std::vector<std::size_t> moved_contra = draw(train_contra_pool, need_contra);
  const std::vector<std::size_t> moved_noncontra = draw(train_noncontra_pool, need_noncontra);

  ExtractionResult res;
  res.balanced.name = "bal_cwb";
  std::unordered_set<std::size_t> moved(moved_contra.begin(), moved_contra.end());
  moved.insert(moved_noncontra.begin(), moved_noncontra.end());

  nlohmann::json side_contra = nlohmann::json::array();
  nlohmann::json side_noncontra = nlohmann::json::array();
  for (auto i : dev_contra) {
    res.balanced.examples.push_back(dev.examples[i]);
    side_contra.push_back(dev.examples[i].id);
  }
  for (auto i : moved_contra) {
    res.balanced.examples.push_back(train.examples[i]);
    side_contra.push_back(train.examples[i].id);
  }
  for (auto i : dev_noncontra) {
    res.balanced.examples.push_back(dev.examples[i]);
    side_noncontra.push_back(dev.examples[i].id);
  }
  for (auto i : moved_noncontra) {
    res.balanced.examples.push_back(train.examples[i]);
    side_noncontra.push_back(train.examples[i].id);
  }

  res.reduced_train.name = train.name + "-reduced";
  res.reduced_train.examples.reserve(train.examples.size() - moved.size());
  nlohmann::json moved_ids = nlohmann::json::array();
  for (std::size_t i = 0; i < train.examples.size(); ++i) {
    if (moved.count(i)) {
      moved_ids.push_back(train.examples[i].id);
    } else {
      res.reduced_train.examples.push_back(train.examples[i]);
    }
  }

  res.manifest = {{"bias_kind", "cwb"},
                  {"spec",
                   {{"word_list", spec.word_list},
                    {"target_per_class", spec.target_per_class},
                    {"not_overlap_threshold", spec.not_overlap_threshold},
                    {"seed", spec.seed}}},
                  {"contradiction_ids", side_contra},
                  {"non_contradiction_ids", side_noncontra},
                  {"moved_from_train_ids", moved_ids}};
  return res;
}

// Lowest-Jaccard-distance (highest overlap) examples, target_per_class per
// entailment side; ties broken by example id ascending.
inline ExtractionResult extract_wob_balanced(const Dataset& dev, std::size_t target_per_class) {
  if (target_per_class < 1) throw DataError("extract_wob_balanced: target_per_class must be >= 1");

  struct Ranked {
    double dist;
    std::size_t index;
    const std::string* id;
  };
  std::vector<Ranked> entail, nonentail;
  for (std::size_t i = 0; i < dev.examples.size(); ++i) {
    const auto& ex = dev.examples[i];
    Ranked r{jaccard_distance(ex.premise, ex.hypothesis), i, &ex.id};
    (ex.label == Label::entailment ? entail : nonentail).push_back(r);
  }
  if (entail.size() < target_per_class || nonentail.size() < target_per_class) {
    throw DataError("extract_wob_balanced: need " + std::to_string(target_per_class) +
                    " per side, have " + std::to_string(entail.size()) + " entailment and " +
                    std::to_string(nonentail.size()) + " non-entailment");
  }
  auto rank_order = [](const Ranked& a, const Ranked& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return *a.id < *b.id;
  };
  std::sort(entail.begin(), entail.end(), rank_order);
  std::sort(nonentail.begin(), nonentail.end(), rank_order);
  entail.resize(target_per_class);
  nonentail.resize(target_per_class);

  ExtractionResult res;
  res.balanced.name = "bal_wob";
  nlohmann::json side_e = nlohmann::json::array();
  nlohmann::json side_ne = nlohmann::json::array();
  for (const auto& r : entail) {
    res.balanced.examples.push_back(dev.examples[r.index]);
    side_e.push_back(*r.id);
  }
  for (const auto& r : nonentail) {
    res.balanced.examples.push_back(dev.examples[r.index]);
    side_ne.push_back(*r.id);
  }
  res.manifest = {{"bias_kind", "wob"},
                  {"spec", {{"target_per_class", target_per_class}}},
                  {"entailment_ids", side_e},
                  {"non_entailment_ids", side_ne}};
  return res;
}

}  // namespace lexbias
