#pragma once

// Planted-bias synthetic corpus generator. Produces sentence-pair datasets
// where the true label is carried purely by the relative word order of a
// subject/verb/object core: the premise arranges the core in a random order,
// and the hypothesis repeats it unchanged (entailment), with the two entity
// tokens exchanged (contradiction), or cyclically rotated (neutral). The
// label is therefore not readable from either sentence alone, and a
// bag-of-words view of the pair carries only the planted regularities:
//   - CWB: a designated negation token appears in hypotheses so that
//     P(contradiction | token present) equals cwb_rate;
//   - WOB: filler retention is tied to the label so that high premise/
//     hypothesis overlap predicts entailment at roughly wob_rate.

#include <array>
#include <string>
#include <vector>

#include "lexbias/common.hpp"
#include "lexbias/corpus.hpp"

namespace lexbias {

struct PlantedWord {
  std::string word;
  double p_given_contradiction;  // insertion rate on contradiction examples
  double contradiction_rate;     // target P(contradiction | word in hypothesis)
};

struct SynthConfig {
  std::size_t n_train = 20000;
  std::size_t n_dev = 3000;
  std::size_t n_test = 3000;
  std::uint64_t seed = 7;

  double label_noise = 0.10;         // observed label re-drawn uniformly
  double cwb_rate = 0.90;            // P(contradiction | designated token)
  double neg_rate_contra = 0.60;     // P(designated token | contradiction side)
  // Fraction of designated-token insertions conditioned on the *structural*
  // contradiction (a property of the text) rather than the observed label.
  // Structurally linked insertions concentrate noise-flipped examples in the
  // bias-conflicting subset, which is what keeps that subset intrinsically
  // hard: no amount of rebalancing makes a flipped label predictable.
  double neg_struct_link = 0.0;
  double wob_rate = 0.90;            // P(entailment | high-overlap mode)
  double premise_neg_rate = 0.02;
  bool plant_secondary_words = true; // weaker any/never/anything/not biases
  // Probability that each hypothesis filler lands at an arbitrary interior
  // position instead of mirroring the premise's front/back layout. Scattered
  // fillers break the fixed surface positions of the core, which makes the
  // order signal substantially harder to saturate.
  double filler_scatter = 0.0;

  std::size_t n_entities = 12;
  std::size_t n_verbs = 10;
  std::size_t n_fillers = 36;
};

inline const std::string& synth_designated_word() {
  static const std::string w = "no";
  return w;
}

// Weaker planted contradiction words, mirroring a frequency profile where the
// four strongest-rate words out-rank 'not' on rate but not all on frequency.
inline const std::vector<PlantedWord>& synth_secondary_words() {
  static const std::vector<PlantedWord> words = {
      {"not", 0.15, 0.45},
      {"any", 0.12, 0.55},
      {"never", 0.10, 0.60},
      {"anything", 0.08, 0.65},
  };
  return words;
}

struct SynthCorpus {
  Dataset train;
  Dataset dev;
  Dataset test;
};

namespace detail {

inline std::vector<std::string> synth_entities(std::size_t n) {
  static const std::vector<std::string> base = {
      "alice", "bob",    "carol", "david", "erin",  "frank", "grace", "henry",
      "irene", "jack",   "karen", "louis", "mary",  "nathan", "olga", "peter",
      "quinn", "rachel", "sam",   "tina",  "ursula", "victor", "wendy", "xavier"};
  if (n > base.size()) throw DataError("synthetic: too many entities requested");
  return {base.begin(), base.begin() + static_cast<std::ptrdiff_t>(n)};
}

inline std::vector<std::string> synth_verbs(std::size_t n) {
  static const std::vector<std::string> base = {
      "sees",   "likes",  "helps",   "calls",  "meets",  "follows",
      "greets", "trusts", "teaches", "visits", "hires",  "warns"};
  if (n > base.size()) throw DataError("synthetic: too many verbs requested");
  return {base.begin(), base.begin() + static_cast<std::ptrdiff_t>(n)};
}

// Filler inventory avoids the planted words and the stress-phrase tokens
// (and/false/is/true) so the planted statistics stay clean.
inline std::vector<std::string> synth_fillers(std::size_t n) {
  static const std::vector<std::string> base = {
      "today",    "quietly", "outside",  "often",   "really",  "maybe",
      "again",    "slowly",  "early",    "late",    "together", "inside",
      "nearby",   "somehow", "gladly",   "twice",   "soon",     "always",
      "rarely",   "calmly",  "upstairs", "abroad",  "meanwhile", "suddenly",
      "carefully", "briefly", "downtown", "tonight", "elsewhere", "yesterday",
      "politely", "eagerly", "somewhere", "promptly", "loudly",   "softly"};
  if (n > base.size()) throw DataError("synthetic: too many fillers requested");
  return {base.begin(), base.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace detail

inline SynthCorpus generate_synthetic(const SynthConfig& cfg) {
  if (cfg.cwb_rate <= 0.0 || cfg.cwb_rate >= 1.0 || cfg.wob_rate <= 0.0 || cfg.wob_rate >= 1.0) {
    throw DataError("generate_synthetic: bias rates must be in (0, 1)");
  }
  const auto entities = detail::synth_entities(cfg.n_entities);
  const auto verbs = detail::synth_verbs(cfg.n_verbs);
  const auto fillers = detail::synth_fillers(cfg.n_fillers);

  // High-overlap fractions for contradiction/neutral that keep
  // P(entailment | high-overlap) at wob_rate under uniform label priors.
  const double keep_total = (1.0 - cfg.wob_rate) / cfg.wob_rate;
  const double keep_contra = keep_total / 3.0;
  const double keep_neutral = 2.0 * keep_total / 3.0;

  // Designated-token leak rate onto non-contradiction observed labels, solved
  // so that P(contradiction | token) equals cwb_rate exactly given the noise
  // level and the structural-link fraction. With uniform structural priors,
  // a = P(obs == struct), b = P(obs == one specific other class).
  if (cfg.neg_struct_link < 0.0 || cfg.neg_struct_link >= 1.0) {
    throw DataError("generate_synthetic: neg_struct_link must be in [0, 1)");
  }
  const double phi = cfg.neg_struct_link;
  const double u = cfg.neg_rate_contra;
  const double b = cfg.label_noise / 3.0;
  const double a = 1.0 - 2.0 * b;
  const double contra_neg_mass = a * u + 2.0 * b * (1.0 - phi) * u;
  const double leak_mass = contra_neg_mass * (1.0 - cfg.cwb_rate) / cfg.cwb_rate;
  const double neg_leak = (leak_mass - 2.0 * b * phi * u) / (2.0 * (1.0 - phi));
  if (neg_leak < 0.0) {
    throw DataError("generate_synthetic: neg_struct_link too high for cwb_rate at this label_noise");
  }

  auto generate_split = [&](const std::string& split, std::size_t count) {
    Dataset ds;
    ds.name = "synth-" + split;
    ds.examples.reserve(count);
    RngStream rng(seed_for(cfg.seed, "synth-" + split));

    for (std::size_t i = 0; i < count; ++i) {
      const std::string& subj = entities[rng.uniform_int(entities.size())];
      std::string obj = entities[rng.uniform_int(entities.size())];
      while (obj == subj) obj = entities[rng.uniform_int(entities.size())];
      const std::string& verb = verbs[rng.uniform_int(verbs.size())];

      const std::size_t n_front = rng.uniform_int(3);      // 0..2
      const std::size_t n_back = 1 + rng.uniform_int(2);   // 1..2
      auto pick_fillers = [&](std::size_t k) {
        std::vector<std::string> out;
        auto idx = rng.sample_without_replacement(fillers.size(), k);
        for (auto j : idx) out.push_back(fillers[j]);
        return out;
      };
      const auto front = pick_fillers(n_front);
      const auto back = pick_fillers(n_back);

      // The premise core is a uniformly random arrangement of {subj, verb,
      // obj}; the structural label is the relative transformation applied to
      // it in the hypothesis.
      std::vector<std::string> premise_core{subj, verb, obj};
      rng.shuffle(premise_core);

      PairExample ex;
      ex.id = "syn-" + split + "-" + std::to_string(i);
      ex.genre = "synthetic";
      ex.premise = front;
      ex.premise.insert(ex.premise.end(), premise_core.begin(), premise_core.end());
      ex.premise.insert(ex.premise.end(), back.begin(), back.end());

      const int structural = static_cast<int>(rng.uniform_int(3));
      std::vector<std::string> core = premise_core;
      switch (static_cast<Label>(structural)) {
        case Label::entailment:
          break;  // identical arrangement
        case Label::contradiction: {
          // exchange the two entity tokens in place
          std::size_t first = 0, second = 0;
          for (std::size_t k = 0; k < core.size(); ++k) {
            if (core[k] == subj) first = k;
            if (core[k] == obj) second = k;
          }
          std::swap(core[first], core[second]);
          break;
        }
        case Label::neutral:
          std::rotate(core.begin(), core.begin() + 1, core.end());
          break;
      }

      // Observed label: structural, except for a label-noise fraction.
      Label label = static_cast<Label>(structural);
      if (rng.bernoulli(cfg.label_noise)) label = static_cast<Label>(rng.uniform_int(3));

      // Overlap mode follows the structural form (it is a surface property).
      bool high_overlap = true;
      if (structural == static_cast<int>(Label::contradiction)) high_overlap = rng.bernoulli(keep_contra);
      if (structural == static_cast<int>(Label::neutral)) high_overlap = rng.bernoulli(keep_neutral);

      std::vector<std::string> hyp_front, hyp_back, hyp_scattered;
      const double keep_p = high_overlap ? 0.95 : 0.30;
      auto place = [&](const std::string& f, std::vector<std::string>& mirrored) {
        if (rng.bernoulli(cfg.filler_scatter)) {
          hyp_scattered.push_back(f);
        } else {
          mirrored.push_back(f);
        }
      };
      for (const auto& f : front) {
        if (rng.bernoulli(keep_p)) place(f, hyp_front);
      }
      for (const auto& f : back) {
        if (rng.bernoulli(keep_p)) place(f, hyp_back);
      }
      if (!high_overlap) {
        for (auto& f : pick_fillers(1 + rng.uniform_int(2))) place(f, hyp_back);
      }

      ex.hypothesis = hyp_front;
      ex.hypothesis.insert(ex.hypothesis.end(), core.begin(), core.end());
      ex.hypothesis.insert(ex.hypothesis.end(), hyp_back.begin(), hyp_back.end());
      for (const auto& f : hyp_scattered) {
        const std::size_t pos = rng.uniform_int(ex.hypothesis.size() + 1);
        ex.hypothesis.insert(ex.hypothesis.begin() + static_cast<std::ptrdiff_t>(pos), f);
      }

      // Planted contradiction-word insertions, conditioned on the observed label.
      auto insert_at_random = [&](const std::string& word, std::vector<std::string>& tokens) {
        const std::size_t pos = rng.uniform_int(tokens.size() + 1);
        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(pos), word);
      };
      const bool contra = label == Label::contradiction;
      {
        double p_insert;
        if (rng.bernoulli(phi)) {
          p_insert = structural == static_cast<int>(Label::contradiction) ? u : 0.0;
        } else {
          p_insert = contra ? u : neg_leak;
        }
        if (rng.bernoulli(p_insert)) insert_at_random(synth_designated_word(), ex.hypothesis);
      }
      if (cfg.plant_secondary_words) {
        for (const auto& pw : synth_secondary_words()) {
          const double p_nc = pw.p_given_contradiction * (1.0 - pw.contradiction_rate) /
                              (2.0 * pw.contradiction_rate);
          if (rng.bernoulli(contra ? pw.p_given_contradiction : p_nc)) {
            insert_at_random(pw.word, ex.hypothesis);
          }
        }
      }
      if (rng.bernoulli(cfg.premise_neg_rate)) {
        insert_at_random(synth_designated_word(), ex.premise);
      }

      ex.label = label;
      ds.examples.push_back(std::move(ex));
    }
    return ds;
  };

  SynthCorpus corpus;
  corpus.train = generate_split("train", cfg.n_train);
  corpus.dev = generate_split("dev", cfg.n_dev);
  corpus.test = generate_split("test", cfg.n_test);
  return corpus;
}

}  // namespace lexbias
