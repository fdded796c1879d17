#pragma once

// Data-level debiasing: enhancement by repeating counter-bias training
// examples, and synthetic stress augmentation by appending label-neutral
// tautological phrases to hypotheses.

#include <map>
#include <string>
#include <vector>

#include "lexbias/bias_audit.hpp"
#include "lexbias/common.hpp"
#include "lexbias/corpus.hpp"

namespace lexbias {

// pairID -> extra JSONL fields, e.g. {source_id, rule}
using ProvenanceMap = std::map<std::string, std::map<std::string, std::string>>;

struct StressRule {
  std::string trigger_word;
  std::vector<std::string> appended_phrase;
};

// One rule per contradiction word; phrases are fixed surface forms.
inline std::vector<StressRule> default_cwb_rules() {
  return {
      {"no", {"and", "false", "is", "no", "true"}},
      {"any", {"and", "any", "true", "is", "true"}},
      {"never", {"and", "false", "is", "never", "true"}},
      {"anything", {"and", "anything", "true", "is", "true"}},
      {"not", {"and", "false", "is", "not", "true"}},
  };
}

inline StressRule wob_rule() { return {"true", {"and", "true", "is", "true"}}; }

enum class EnhancementSource { origin, synthetic };

struct EnhancementPlan {
  BiasKind bias_kind = BiasKind::CWB;
  std::size_t n_additional = 0;
  EnhancementSource source = EnhancementSource::origin;
  std::uint64_t seed = 1;
};

// CWB: non-contradiction examples with a listed word in the hypothesis and
// none in the premise (dataset order). WOB: non-entailment examples sorted by
// Jaccard distance ascending, i.e. highest overlap first.
inline std::vector<const PairExample*> select_counterbias_pool(const Dataset& train, BiasKind kind,
                                                               const std::vector<std::string>& word_list) {
  if (train.empty()) throw DataError("select_counterbias_pool: empty training set");
  std::vector<const PairExample*> pool;
  if (kind == BiasKind::CWB) {
    for (const auto& ex : train.examples) {
      if (ex.label == Label::contradiction) continue;
      const auto hyp = token_set(ex.hypothesis);
      const auto prem = token_set(ex.premise);
      bool in_hyp = false, in_prem = false;
      for (const auto& w : word_list) {
        in_hyp = in_hyp || hyp.count(w) > 0;
        in_prem = in_prem || prem.count(w) > 0;
      }
      if (in_hyp && !in_prem) pool.push_back(&ex);
    }
  } else {
    struct Ranked {
      double dist;
      const PairExample* ex;
    };
    std::vector<Ranked> ranked;
    for (const auto& ex : train.examples) {
      if (ex.label == Label::entailment) continue;
      ranked.push_back({jaccard_distance(ex.premise, ex.hypothesis), &ex});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      return a.ex->id < b.ex->id;
    });
    for (const auto& r : ranked) pool.push_back(r.ex);
  }
  if (pool.empty()) throw DataError("select_counterbias_pool: no qualifying examples");
  return pool;
}

// Appends n_additional repeated copies: cyclically from the pool head for the
// overlap-ranked WOB pool, uniformly with replacement for the unordered CWB
// pool. Copies get "-rep<k>" id suffixes; originals are untouched.
inline Dataset enhance(const Dataset& train, const EnhancementPlan& plan,
                       const std::vector<const PairExample*>& pool,
                       ProvenanceMap* provenance = nullptr) {
  if (plan.source != EnhancementSource::origin) {
    throw DataError("enhance: plan.source must be origin (use augment_with_stress for synthetic)");
  }
  if (pool.empty()) throw DataError("enhance: empty pool");
  Dataset out = train;
  out.name = train.name + "+origin" + std::to_string(plan.n_additional);
  out.examples.reserve(train.examples.size() + plan.n_additional);
  RngStream rng(seed_for(plan.seed, "enhance"));
  std::map<std::string, std::size_t> copies;
  for (std::size_t i = 0; i < plan.n_additional; ++i) {
    const PairExample* src =
        plan.bias_kind == BiasKind::WOB
            ? pool[i % pool.size()]
            : pool[static_cast<std::size_t>(rng.uniform_int(pool.size()))];
    PairExample copy = *src;
    copy.id += "-rep" + std::to_string(++copies[src->id]);
    if (provenance) (*provenance)[copy.id] = {{"source_id", src->id}};
    out.examples.push_back(std::move(copy));
  }
  return out;
}

// CWB: one new example per rule with the phrase appended to the hypothesis,
// label unchanged. WOB: a single example with "and true is true" appended.
inline std::vector<PairExample> synthesize_stress(const PairExample& example,
                                                  const std::vector<StressRule>& rules,
                                                  BiasKind kind) {
  if (rules.empty()) throw DataError("synthesize_stress: no rules");
  std::vector<PairExample> out;
  auto apply = [&](const StressRule& rule, const std::string& suffix) {
    PairExample ex = example;
    ex.id += "-" + suffix;
    ex.hypothesis.insert(ex.hypothesis.end(), rule.appended_phrase.begin(), rule.appended_phrase.end());
    out.push_back(std::move(ex));
  };
  if (kind == BiasKind::CWB) {
    for (const auto& rule : rules) apply(rule, rule.trigger_word);
  } else {
    apply(wob_rule(), "wob");
  }
  return out;
}

// Stress evaluation set: synthesis applied to every example of a dataset.
inline Dataset make_stress_set(const Dataset& source, const std::vector<StressRule>& rules, BiasKind kind,
                               ProvenanceMap* provenance = nullptr) {
  Dataset out;
  out.name = source.name + "-stress-" + bias_kind_name(kind);
  for (const auto& ex : source.examples) {
    auto synthesized = synthesize_stress(ex, rules, kind);
    for (std::size_t k = 0; k < synthesized.size(); ++k) {
      if (provenance) {
        const std::string rule = kind == BiasKind::CWB ? rules[k].trigger_word : "wob";
        (*provenance)[synthesized[k].id] = {{"source_id", ex.id}, {"rule", rule}};
      }
      out.examples.push_back(std::move(synthesized[k]));
    }
  }
  return out;
}

// Training augmentation with synthetic stress samples: source examples are a
// seeded uniform sample of the training set; each contributes one synthesized
// example per rule until exactly n_additional are appended.
inline Dataset augment_with_stress(const Dataset& train, std::size_t n_additional,
                                   const std::vector<StressRule>& rules, BiasKind kind,
                                   std::uint64_t seed, ProvenanceMap* provenance = nullptr) {
  Dataset out = train;
  out.name = train.name + "+synthetic" + std::to_string(n_additional);
  if (n_additional == 0) return out;
  if (train.empty()) throw DataError("augment_with_stress: empty training set");
  RngStream rng(seed_for(seed, "stress-augment"));
  std::map<std::string, std::size_t> copies;
  while (out.examples.size() < train.examples.size() + n_additional) {
    const auto& src = train.examples[static_cast<std::size_t>(rng.uniform_int(train.examples.size()))];
    auto synthesized = synthesize_stress(src, rules, kind);
    for (std::size_t r = 0; r < synthesized.size(); ++r) {
      PairExample& s = synthesized[r];
      const std::size_t k = ++copies[s.id];
      if (k > 1) s.id += "(" + std::to_string(k) + ")";
      if (provenance) {
        const std::string rule = kind == BiasKind::CWB ? rules[r].trigger_word : "wob";
        (*provenance)[s.id] = {{"source_id", src.id}, {"rule", rule}};
      }
      out.examples.push_back(std::move(s));
      if (out.examples.size() == train.examples.size() + n_additional) break;
    }
  }
  return out;
}

}  // namespace lexbias
