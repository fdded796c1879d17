#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "lexbias/explain.hpp"
#include "lexbias/hex_projection.hpp"
#include "lexbias/synthetic.hpp"
#include "lexbias/train_eval.hpp"

using namespace lexbias;

namespace {

// Spearman rank correlation with average ranks for ties.
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  auto ranks = [](const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](Eigen::Index x, Eigen::Index y) { return v(x) < v(y); });
    Eigen::VectorXd r(n);
    Eigen::Index i = 0;
    while (i < n) {
      Eigen::Index j = i;
      while (j + 1 < n && v(idx[static_cast<std::size_t>(j + 1)]) == v(idx[static_cast<std::size_t>(i)])) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (Eigen::Index k = i; k <= j; ++k) r(idx[static_cast<std::size_t>(k)]) = avg;
      i = j + 1;
    }
    return r;
  };
  const Eigen::VectorXd ra = ranks(a), rb = ranks(b);
  const double ma = ra.mean(), mb = rb.mean();
  const double cov = ((ra.array() - ma) * (rb.array() - mb)).sum();
  const double sa = std::sqrt(((ra.array() - ma).square()).sum());
  const double sb = std::sqrt(((rb.array() - mb).square()).sum());
  return cov / (sa * sb);
}

PairExample example_with_tokens(int l_a, int l_b) {
  PairExample ex{"probe", {}, {}, Label::neutral, ""};
  for (int i = 0; i < l_a; ++i) ex.premise.push_back("p" + std::to_string(i));
  for (int i = 0; i < l_b; ++i) ex.hypothesis.push_back("h" + std::to_string(i));
  return ex;
}

// Planted linear scorer over token presence with a sigmoid link.
ProbFn linear_oracle(const PairExample& base, const Eigen::VectorXd& w, int target_class) {
  return [base, w, target_class](const std::vector<const PairExample*>& exs) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(exs.size()), kNumClasses);
    for (std::size_t i = 0; i < exs.size(); ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < base.premise.size(); ++j) {
        if (exs[i]->premise[j] != "<unk>") z += w(static_cast<Eigen::Index>(j));
      }
      for (std::size_t j = 0; j < base.hypothesis.size(); ++j) {
        if (exs[i]->hypothesis[j] != "<unk>") z += w(static_cast<Eigen::Index>(base.premise.size() + j));
      }
      const double p = 1.0 / (1.0 + std::exp(-z));
      for (int c = 0; c < kNumClasses; ++c) {
        out(static_cast<Eigen::Index>(i), c) = c == target_class ? p : (1.0 - p) / 2.0;
      }
    }
    return out;
  };
}

}  // namespace

TEST_CASE("perturb is deterministic, starts with the all-kept sample", "[explain]") {
  const PairExample ex = example_with_tokens(3, 4);
  const auto a = perturb(ex, 50, 5);
  const auto b = perturb(ex, 50, 5);
  REQUIRE(a.size() == 50);
  REQUIRE(a[0].presence == std::vector<std::uint8_t>(7, 1));
  REQUIRE(a[0].example.premise == ex.premise);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].presence == b[i].presence);
    REQUIRE(a[i].presence.size() == 7);  // l_a + l_b
    // dropped tokens are replaced by the unknown marker, kept ones preserved
    for (std::size_t j = 0; j < 3; ++j) {
      const std::string& tok = a[i].example.premise[j];
      REQUIRE(tok == (a[i].presence[j] ? ex.premise[j] : "<unk>"));
    }
  }
  const auto c = perturb(ex, 50, 6);
  bool same = true;
  for (std::size_t i = 1; i < a.size(); ++i) same = same && a[i].presence == c[i].presence;
  REQUIRE_FALSE(same);
}

TEST_CASE("lime recovers a planted linear scorer's feature ranking", "[explain][oracle]") {
  RngStream rng(15);
  double total = 0.0;
  const int trials = 8;
  for (int trial = 0; trial < trials; ++trial) {
    const PairExample ex = example_with_tokens(5, 5);
    Eigen::VectorXd w(10);
    for (Eigen::Index j = 0; j < 10; ++j) w(j) = rng.normal(0.0, 0.8);

    LimeOptions opts;
    opts.n_samples = 1000;
    opts.top_k = 10;
    opts.seed = 100 + static_cast<std::uint64_t>(trial);
    const Explanation expl = lime_explain(linear_oracle(ex, w, 1), ex, 1, opts);
    REQUIRE(expl.entries.size() == 10);

    Eigen::VectorXd recovered(10);
    for (const auto& e : expl.entries) {
      const std::size_t j = e.side == "premise" ? e.position : 5 + e.position;
      recovered(static_cast<Eigen::Index>(j)) = e.weight;
    }
    const double rho = spearman(recovered, w);
    total += rho;
    REQUIRE(rho >= 0.85);
  }
  REQUIRE(total / trials >= 0.9);
}

TEST_CASE("a token that never changes the output gets near-zero weight", "[explain]") {
  const PairExample ex = example_with_tokens(4, 4);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(8);
  w(0) = 1.5;  // only the first premise token matters
  LimeOptions opts;
  opts.n_samples = 1500;
  opts.top_k = 8;
  const Explanation expl = lime_explain(linear_oracle(ex, w, 0), ex, 0, opts);
  for (const auto& e : expl.entries) {
    if (e.side == "premise" && e.position == 0) {
      REQUIRE(std::abs(e.weight) > 0.1);
    } else {
      REQUIRE(std::abs(e.weight) <= 1e-3);
    }
  }

  // fully constant model: every weight is ~0
  ProbFn constant = [](const std::vector<const PairExample*>& exs) {
    return Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(exs.size()), kNumClasses, 1.0 / 3);
  };
  const Explanation flat = lime_explain(constant, ex, 0, opts);
  for (const auto& e : flat.entries) REQUIRE(std::abs(e.weight) <= 1e-3);
}

TEST_CASE("entries are ranked by |weight| and trimmed to top_k (default 6)", "[explain]") {
  const PairExample ex = example_with_tokens(6, 6);
  RngStream rng(16);
  Eigen::VectorXd w(12);
  for (Eigen::Index j = 0; j < 12; ++j) w(j) = rng.normal();
  const Explanation expl = lime_explain(linear_oracle(ex, w, 2), ex, 2, LimeOptions{});
  REQUIRE(expl.entries.size() == 6);
  for (std::size_t i = 1; i < expl.entries.size(); ++i) {
    REQUIRE(std::abs(expl.entries[i - 1].weight) >= std::abs(expl.entries[i].weight));
  }
  REQUIRE(expl.to_json()["features"].size() == 6);
  REQUIRE_FALSE(expl.render_text().empty());
}

TEST_CASE("aligned-permutation fits preserve the weight multiset", "[explain][property]") {
  // Fit coefficients from a presence design, then permute the columns (and
  // the model's view) consistently: for an order-insensitive model the
  // coefficient multiset, and so sum |w|, is preserved.
  RngStream rng(17);
  const Eigen::Index n = 400, d = 8;
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  Eigen::VectorXd w(d), weights(n);
  for (Eigen::Index j = 0; j < d; ++j) w(j) = rng.normal();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = 1.0 / (1.0 + std::exp(-X.row(i).dot(w)));
    weights(i) = std::exp(-std::pow((d - X.row(i).sum()) / (0.75 * std::sqrt(double(d))), 2));
  }
  const Eigen::VectorXd beta = lime_fit(X, y, weights, 1e-3);

  std::vector<Eigen::Index> perm{3, 1, 7, 0, 5, 2, 6, 4};
  Eigen::MatrixXd Xp(n, d);
  for (Eigen::Index j = 0; j < d; ++j) Xp.col(j) = X.col(perm[static_cast<std::size_t>(j)]);
  Eigen::VectorXd yp(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double z = 0;
    for (Eigen::Index j = 0; j < d; ++j) z += Xp(i, j) * w(perm[static_cast<std::size_t>(j)]);
    yp(i) = 1.0 / (1.0 + std::exp(-z));
  }
  const Eigen::VectorXd beta_p = lime_fit(Xp, yp, weights, 1e-3);

  REQUIRE(beta.cwiseAbs().sum() == Catch::Approx(beta_p.cwiseAbs().sum()).epsilon(1e-9));
  for (Eigen::Index j = 0; j < d; ++j) {
    REQUIRE(beta_p(j) == Catch::Approx(beta(perm[static_cast<std::size_t>(j)])).epsilon(1e-9));
  }
}

TEST_CASE("lime_fit rejects irrecoverably degenerate targets", "[explain]") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 2);
  Eigen::VectorXd y(4);
  y << 1, std::numeric_limits<double>::quiet_NaN(), 0, 1;
  REQUIRE_THROWS_AS(lime_fit(X, y, Eigen::VectorXd::Ones(4), 1e-3), ModelError);
}

TEST_CASE("lime_explain runs end to end on a hex model", "[explain]") {
  EncoderConfig cfg;
  cfg.d_e = 6;
  cfg.d_h = 4;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_mlp = 5;
  cfg.dropout = 0.0;
  const auto corpus = generate_synthetic({.n_train = 40, .n_dev = 4, .n_test = 4, .seed = 91});
  const Vocabulary vocab = build_vocab({&corpus.train});
  EmbeddingMatrix emb;
  emb.weights.setZero(vocab.size(), cfg.d_e);
  RngStream rng(18);
  for (int i = 1; i < vocab.size(); ++i) {
    for (int j = 0; j < cfg.d_e; ++j) emb.weights(i, j) = rng.normal(0.0, 0.3);
  }
  HexModel model(cfg, HexConfig{}, emb, 19);

  ProbFn fn = [&](const std::vector<const PairExample*>& exs) {
    return model_probabilities(model, exs, vocab);
  };
  LimeOptions opts;
  opts.n_samples = 64;
  const Explanation expl = lime_explain(fn, corpus.train.examples[0], 0, opts);
  REQUIRE_FALSE(expl.entries.empty());
  for (const auto& e : expl.entries) REQUIRE(std::isfinite(e.weight));
}
