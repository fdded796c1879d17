#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "lexbias/augmentation.hpp"
#include "lexbias/synthetic.hpp"

using namespace lexbias;

namespace {

PairExample make(const std::string& id, std::vector<std::string> prem, std::vector<std::string> hyp,
                 Label label) {
  return PairExample{id, std::move(prem), std::move(hyp), label, ""};
}

}  // namespace

TEST_CASE("select_counterbias_pool applies the CWB rule", "[augmentation]") {
  Dataset train{"t", {}};
  train.examples.push_back(make("in", {"a", "dog"}, {"no", "dog"}, Label::neutral));
  train.examples.push_back(make("wrong-label", {"a", "dog"}, {"no", "dog"}, Label::contradiction));
  train.examples.push_back(make("premise-word", {"no", "dog"}, {"no", "cat"}, Label::neutral));
  train.examples.push_back(make("no-word", {"a", "dog"}, {"a", "cat"}, Label::entailment));

  const auto pool = select_counterbias_pool(train, BiasKind::CWB, {"no"});
  REQUIRE(pool.size() == 1);
  REQUIRE(pool[0]->id == "in");

  Dataset empty_pool{"t2", {}};
  empty_pool.examples.push_back(make("x", {"a"}, {"b"}, Label::contradiction));
  REQUIRE_THROWS_AS(select_counterbias_pool(empty_pool, BiasKind::CWB, {"no"}), DataError);
}

TEST_CASE("select_counterbias_pool ranks WOB by overlap", "[augmentation]") {
  Dataset train{"t", {}};
  train.examples.push_back(make("far", {"a", "b", "c", "d", "e"}, {"a", "x", "y", "z"}, Label::neutral));
  train.examples.push_back(make("near", {"a", "b", "c"}, {"a", "b", "d"}, Label::contradiction));
  train.examples.push_back(make("entail", {"a", "b"}, {"a", "b"}, Label::entailment));

  const auto pool = select_counterbias_pool(train, BiasKind::WOB, {});
  REQUIRE(pool.size() == 2);  // entailment examples excluded
  REQUIRE(pool[0]->id == "near");
  REQUIRE(pool[1]->id == "far");
}

TEST_CASE("enhance repeats cyclically for WOB: 250 additions over a pool of 100", "[augmentation]") {
  Dataset train{"t", {}};
  for (int i = 0; i < 100; ++i) {
    train.examples.push_back(make("p" + std::to_string(1000 + i), {"a", "b", "c"},
                                  {"a", "b", "x" + std::to_string(i)}, Label::neutral));
  }
  const auto pool = select_counterbias_pool(train, BiasKind::WOB, {});
  EnhancementPlan plan{BiasKind::WOB, 250, EnhancementSource::origin, 3};
  ProvenanceMap prov;
  const Dataset out = enhance(train, plan, pool, &prov);
  REQUIRE(out.size() == train.size() + 250);

  std::map<std::string, int> copies;
  for (std::size_t i = train.size(); i < out.size(); ++i) {
    REQUIRE(prov.count(out.examples[i].id) == 1);
    copies[prov.at(out.examples[i].id).at("source_id")]++;
  }
  int threes = 0, twos = 0;
  for (const auto& [src, n] : copies) {
    if (n == 3) ++threes;
    if (n == 2) ++twos;
  }
  REQUIRE(threes == 50);  // pool head appears three times
  REQUIRE(twos == 50);

  // originals untouched, ids unique
  std::set<std::string> ids;
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(ids.insert(out.examples[i].id).second);
    if (i < train.size()) REQUIRE(out.examples[i].id == train.examples[i].id);
  }
}

TEST_CASE("enhance with n_additional 0 leaves the set unchanged; CWB draws are seeded", "[augmentation]") {
  const auto corpus = generate_synthetic({.n_train = 500, .n_dev = 10, .n_test = 10, .seed = 9});
  const auto pool =
      select_counterbias_pool(corpus.train, BiasKind::CWB, {"no", "any", "never", "anything", "not"});
  EnhancementPlan none{BiasKind::CWB, 0, EnhancementSource::origin, 1};
  const Dataset unchanged = enhance(corpus.train, none, pool);
  REQUIRE(unchanged.size() == corpus.train.size());

  EnhancementPlan plan{BiasKind::CWB, 500, EnhancementSource::origin, 1};
  const Dataset a = enhance(corpus.train, plan, pool);
  const Dataset b = enhance(corpus.train, plan, pool);
  REQUIRE(a.size() == corpus.train.size() + 500);  // the paper's smallest setting
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a.examples[i].id == b.examples[i].id);
  for (std::size_t i = corpus.train.size(); i < a.size(); ++i) {
    REQUIRE(a.examples[i].label != Label::contradiction);
  }
}

TEST_CASE("synthesize_stress appends the Appendix-table phrases and keeps labels", "[augmentation]") {
  const PairExample ex = make("e1", {"the", "dog", "sat"}, {"the", "dog", "ran"}, Label::neutral);
  const auto rules = default_cwb_rules();
  const auto out = synthesize_stress(ex, rules, BiasKind::CWB);
  REQUIRE(out.size() == 5);  // five different new pairs

  const std::map<std::string, std::vector<std::string>> expected{
      {"no", {"and", "false", "is", "no", "true"}},
      {"any", {"and", "any", "true", "is", "true"}},
      {"never", {"and", "false", "is", "never", "true"}},
      {"anything", {"and", "anything", "true", "is", "true"}},
      {"not", {"and", "false", "is", "not", "true"}},
  };
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& rule = rules[k];
    REQUIRE(out[k].id == "e1-" + rule.trigger_word);
    REQUIRE(out[k].label == ex.label);
    REQUIRE(out[k].premise == ex.premise);
    // hypothesis differs only in the appended suffix
    REQUIRE(out[k].hypothesis.size() == ex.hypothesis.size() + rule.appended_phrase.size());
    for (std::size_t i = 0; i < ex.hypothesis.size(); ++i) {
      REQUIRE(out[k].hypothesis[i] == ex.hypothesis[i]);
    }
    const std::vector<std::string> suffix(out[k].hypothesis.end() - 5, out[k].hypothesis.end());
    REQUIRE(suffix == expected.at(rule.trigger_word));
  }

  const auto wob = synthesize_stress(ex, rules, BiasKind::WOB);
  REQUIRE(wob.size() == 1);
  const std::vector<std::string> suffix(wob[0].hypothesis.end() - 4, wob[0].hypothesis.end());
  REQUIRE(suffix == std::vector<std::string>{"and", "true", "is", "true"});
  REQUIRE(wob[0].label == ex.label);
}

TEST_CASE("make_stress_set multiplies the corpus by the rule count", "[augmentation]") {
  const auto corpus = generate_synthetic({.n_train = 10, .n_dev = 120, .n_test = 10, .seed = 13});
  ProvenanceMap prov;
  const Dataset stress = make_stress_set(corpus.dev, default_cwb_rules(), BiasKind::CWB, &prov);
  REQUIRE(stress.size() == corpus.dev.size() * 5);
  for (const auto& ex : stress.examples) {
    REQUIRE(prov.count(ex.id) == 1);
    REQUIRE_FALSE(prov.at(ex.id).at("rule").empty());
  }
}

TEST_CASE("augment_with_stress hits the exact count with unique seeded ids", "[augmentation]") {
  const auto corpus = generate_synthetic({.n_train = 300, .n_dev = 10, .n_test = 10, .seed = 19});
  ProvenanceMap prov;
  const Dataset out = augment_with_stress(corpus.train, 123, default_cwb_rules(), BiasKind::CWB, 5, &prov);
  REQUIRE(out.size() == corpus.train.size() + 123);
  std::set<std::string> ids;
  for (const auto& ex : out.examples) REQUIRE(ids.insert(ex.id).second);
  const Dataset again = augment_with_stress(corpus.train, 123, default_cwb_rules(), BiasKind::CWB, 5);
  for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(out.examples[i].id == again.examples[i].id);
}
