#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "lexbias/bias_audit.hpp"
#include "lexbias/synthetic.hpp"

using namespace lexbias;

namespace {

PairExample make(const std::string& id, std::vector<std::string> prem, std::vector<std::string> hyp,
                 Label label) {
  return PairExample{id, std::move(prem), std::move(hyp), label, ""};
}

std::string dump(const Dataset& ds) {
  std::ostringstream os;
  for (const auto& ex : ds.examples) {
    os << ex.id << '|' << label_name(ex.label) << '\n';
  }
  return os.str();
}

}  // namespace

TEST_CASE("jaccard_distance on the stated examples", "[bias_audit]") {
  REQUIRE(jaccard_distance({"a", "b", "c"}, {"b", "c", "d"}) == Catch::Approx(0.5));
  REQUIRE(jaccard_distance({"x", "y"}, {"y", "x", "x"}) == 0.0);  // same token sets
  REQUIRE(jaccard_distance({"a"}, {"b"}) == 1.0);
  REQUIRE_THROWS_AS(jaccard_distance({}, {}), DataError);
}

TEST_CASE("jaccard_distance properties: symmetry, zero iff equal sets, range", "[bias_audit][property]") {
  RngStream rng(17);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 200; ++trial) {
    auto sample = [&]() {
      std::vector<std::string> s;
      const std::size_t n = 1 + rng.uniform_int(5);
      for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.uniform_int(alphabet.size())]);
      return s;
    };
    const auto a = sample();
    const auto b = sample();
    const double dab = jaccard_distance(a, b);
    REQUIRE(dab == jaccard_distance(b, a));
    REQUIRE(dab >= 0.0);
    REQUIRE(dab <= 1.0);
    REQUIRE((dab == 0.0) == (token_set(a) == token_set(b)));
  }
}

TEST_CASE("compute_word_label_stats counts hypothesis occurrences per example", "[bias_audit]") {
  Dataset train{"toy", {}};
  int id = 0;
  auto add = [&](const std::string& word, Label label, int count) {
    for (int i = 0; i < count; ++i) {
      // word appears twice in one hypothesis: still one counted occurrence
      train.examples.push_back(
          make("e" + std::to_string(id++), {"filler"}, {word, "x", word}, label));
    }
  };
  add("never", Label::contradiction, 13);
  add("never", Label::neutral, 7);
  add("also", Label::contradiction, 2);
  add("also", Label::entailment, 8);
  add("rare", Label::neutral, 3);

  const BiasStats stats = compute_word_label_stats(train, 5);
  REQUIRE(stats.words.at("never").total == 20);
  REQUIRE(stats.words.at("never").rate(Label::contradiction) == Catch::Approx(0.65));
  REQUIRE(stats.words.at("also").total == 10);
  REQUIRE(stats.words.at("also").rate(Label::contradiction) == Catch::Approx(0.2));
  REQUIRE(stats.words.count("rare") == 0);  // below min_count

  // per-label counts sum to the total and rates sum to one
  for (const auto& [w, row] : stats.words) {
    std::size_t sum = 0;
    double rate_sum = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      sum += row.per_label[static_cast<std::size_t>(c)];
      rate_sum += row.rate(static_cast<Label>(c));
    }
    REQUIRE(sum == row.total);
    REQUIRE(rate_sum == Catch::Approx(1.0));
  }
}

TEST_CASE("stats accumulation is associative over shards", "[bias_audit]") {
  const auto corpus = generate_synthetic({.n_train = 600, .n_dev = 10, .n_test = 10, .seed = 23});
  Dataset shard1{"s1", {corpus.train.examples.begin(), corpus.train.examples.begin() + 300}};
  Dataset shard2{"s2", {corpus.train.examples.begin() + 300, corpus.train.examples.end()}};

  BiasStats whole;
  accumulate_word_label_stats(whole, corpus.train);
  BiasStats a, b;
  accumulate_word_label_stats(a, shard1);
  accumulate_word_label_stats(b, shard2);
  const BiasStats merged = merge_word_label_stats(a, b);
  REQUIRE(merged.words.size() == whole.words.size());
  for (const auto& [w, row] : whole.words) {
    REQUIRE(merged.words.at(w).total == row.total);
    REQUIRE(merged.words.at(w).per_label == row.per_label);
  }
}

TEST_CASE("select_contradiction_words ranks planted words like the audit profile", "[bias_audit]") {
  // On the planted corpus the four words above the 0.5 threshold are exactly
  // no/any/never/anything (frequency order), and 'not' sits below threshold.
  const auto corpus = generate_synthetic({.n_train = 20000, .n_dev = 10, .n_test = 10, .seed = 7});
  const BiasStats stats = compute_word_label_stats(corpus.train, 100);
  const auto words = select_contradiction_words(stats, 0.5, 4);
  REQUIRE(words == std::vector<std::string>{"no", "any", "never", "anything"});
  REQUIRE(stats.words.at("not").rate(Label::contradiction) < 0.5);
  REQUIRE(stats.words.at("not").rate(Label::contradiction) > 0.35);

  BiasStats toy;
  toy.words["solo"] = WordLabelRow{10, {1, 1, 8}};
  toy.words["meek"] = WordLabelRow{50, {20, 20, 10}};
  REQUIRE(select_contradiction_words(toy, 0.5, 4) == std::vector<std::string>{"solo"});
  REQUIRE_THROWS_AS(select_contradiction_words(toy, 1.5, 4), DataError);
}

TEST_CASE("cwb_predicate applies the hypothesis/premise and 'not' rules", "[bias_audit]") {
  const std::vector<std::string> words{"no", "never", "not"};
  // eligible: listed word in hypothesis, none in premise
  REQUIRE(cwb_predicate(make("1", {"a", "b"}, {"never", "c"}, Label::neutral), words, 0.7));
  // premise contains a listed word: excluded
  REQUIRE_FALSE(cwb_predicate(make("2", {"not", "b"}, {"never", "c"}, Label::neutral), words, 0.7));
  // hypothesis without any listed word: excluded
  REQUIRE_FALSE(cwb_predicate(make("3", {"a"}, {"c", "d"}, Label::neutral), words, 0.7));
  // qualifies only via 'not': requires small Jaccard distance
  const auto near = make("4", {"a", "b", "c"}, {"a", "b", "c", "not"}, Label::neutral);
  REQUIRE(cwb_predicate(near, words, 0.7));
  const auto far = make("5", {"a", "b", "c"}, {"not", "x", "y", "z"}, Label::neutral);
  REQUIRE_FALSE(cwb_predicate(far, words, 0.7));
  // 'not' plus another listed word qualifies regardless of distance
  const auto both = make("6", {"a", "b", "c"}, {"not", "no", "x", "y"}, Label::neutral);
  REQUIRE(cwb_predicate(both, words, 0.7));
}

TEST_CASE("extract_cwb_balanced balances by moving from train and stays deterministic", "[bias_audit]") {
  const SynthConfig cfg{.n_train = 4000, .n_dev = 400, .n_test = 10, .seed = 31};
  const auto corpus = generate_synthetic(cfg);
  BalancedSetSpec spec;
  spec.bias_kind = BiasKind::CWB;
  spec.word_list = {"no", "any", "never", "anything", "not"};
  spec.target_per_class = 60;
  spec.not_overlap_threshold = 0.7;
  spec.seed = 5;

  const ExtractionResult res = extract_cwb_balanced(corpus.train, corpus.dev, spec);
  REQUIRE(res.balanced.size() == 120);

  std::size_t contra = 0;
  for (const auto& ex : res.balanced.examples) {
    REQUIRE(cwb_predicate(ex, spec.word_list, spec.not_overlap_threshold));  // re-verify predicate
    contra += ex.label == Label::contradiction;
  }
  REQUIRE(contra == spec.target_per_class);

  // moved examples are gone from the returned train (disjointness)
  std::set<std::string> reduced_ids;
  for (const auto& ex : res.reduced_train.examples) reduced_ids.insert(ex.id);
  std::size_t moved = 0;
  for (const auto& ex : res.balanced.examples) {
    if (ex.id.rfind("syn-train-", 0) == 0) {
      ++moved;
      REQUIRE(reduced_ids.count(ex.id) == 0);
    }
  }
  REQUIRE(moved > 0);
  REQUIRE(res.reduced_train.size() + moved == corpus.train.size());

  // byte-identical across runs under a fixed seed
  const ExtractionResult res2 = extract_cwb_balanced(corpus.train, corpus.dev, spec);
  REQUIRE(dump(res.balanced) == dump(res2.balanced));
  REQUIRE(res.manifest == res2.manifest);

  // unattainable target: error reports the shortfall
  BalancedSetSpec big = spec;
  big.target_per_class = 4000;
  REQUIRE_THROWS_WITH(extract_cwb_balanced(corpus.train, corpus.dev, big),
                      Catch::Matchers::ContainsSubstring("training pool too small"));
}

TEST_CASE("extract_wob_balanced matches a brute-force selection oracle", "[bias_audit]") {
  const auto corpus = generate_synthetic({.n_train = 10, .n_dev = 900, .n_test = 10, .seed = 37});
  const std::size_t target = 80;
  const ExtractionResult res = extract_wob_balanced(corpus.dev, target);
  REQUIRE(res.balanced.size() == 2 * target);

  std::size_t entail = 0;
  for (const auto& ex : res.balanced.examples) entail += ex.label == Label::entailment;
  REQUIRE(entail == target);

  // Oracle: repeated minimum selection on (distance, id), independent of the
  // sort used by the implementation.
  auto oracle_side = [&](bool want_entail) {
    struct Item {
      double dist;
      std::string id;
    };
    std::vector<Item> items;
    for (const auto& ex : corpus.dev.examples) {
      if ((ex.label == Label::entailment) != want_entail) continue;
      items.push_back({jaccard_distance(ex.premise, ex.hypothesis), ex.id});
    }
    std::vector<std::string> picked;
    std::vector<bool> used(items.size(), false);
    for (std::size_t k = 0; k < target; ++k) {
      std::size_t best = items.size();
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (used[i]) continue;
        if (best == items.size() || items[i].dist < items[best].dist ||
            (items[i].dist == items[best].dist && items[i].id < items[best].id)) {
          best = i;
        }
      }
      used[best] = true;
      picked.push_back(items[best].id);
    }
    return picked;
  };

  const auto expect_entail = oracle_side(true);
  const auto expect_non = oracle_side(false);
  for (std::size_t k = 0; k < target; ++k) {
    REQUIRE(res.balanced.examples[k].id == expect_entail[k]);
    REQUIRE(res.balanced.examples[target + k].id == expect_non[k]);
  }

  // an identical pair (distance zero) ranks first
  REQUIRE(jaccard_distance(res.balanced.examples[0].premise, res.balanced.examples[0].hypothesis) ==
          Catch::Approx(expect_entail.empty() ? 0.0 : jaccard_distance(
              corpus.dev.examples[0].premise, corpus.dev.examples[0].premise)));

  REQUIRE_THROWS_WITH(extract_wob_balanced(corpus.dev, 100000),
                      Catch::Matchers::ContainsSubstring("have"));
}

TEST_CASE("audit report rows are ordered and complete", "[bias_audit]") {
  const auto corpus = generate_synthetic({.n_train = 3000, .n_dev = 10, .n_test = 10, .seed = 41});
  const BiasStats stats = compute_word_label_stats(corpus.train, 20);
  const nlohmann::json rows = audit_report_json(stats);
  REQUIRE(rows.size() == stats.words.size());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i - 1]["count"].get<std::size_t>() >= rows[i]["count"].get<std::size_t>());
  }
  for (const auto& row : rows) {
    const double total = row["p_entail"].get<double>() + row["p_neutral"].get<double>() +
                         row["p_contra"].get<double>();
    REQUIRE(total == Catch::Approx(1.0));
  }
}
