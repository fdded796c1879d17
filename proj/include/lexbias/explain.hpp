#pragma once

// Perturbation-based local explanation of a frozen pair classifier: random
// token dropout around one example, an exponentially kernel-weighted ridge
// fit from token presence to the model's target-class probability, and a
// ranked top-k feature report.

#include <Eigen/Dense>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "lexbias/common.hpp"
#include "lexbias/corpus.hpp"

namespace lexbias {

struct PerturbedSample {
  PairExample example;
  std::vector<std::uint8_t> presence;  // per token over premise then hypothesis
};

// Each sample independently drops tokens with probability 0.5, replacing them
// with the unknown-token marker. The all-kept sample always comes first.
inline std::vector<PerturbedSample> perturb(const PairExample& example, int n_samples,
                                            std::uint64_t seed) {
  if (n_samples < 1) throw DataError("perturb: n_samples must be >= 1");
  const std::size_t d = example.premise.size() + example.hypothesis.size();
  RngStream rng(seed_for(seed, "perturb"));

  std::vector<PerturbedSample> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  PerturbedSample base{example, std::vector<std::uint8_t>(d, 1)};
  out.push_back(std::move(base));

  for (int s = 1; s < n_samples; ++s) {
    PerturbedSample ps{example, std::vector<std::uint8_t>(d, 1)};
    for (std::size_t j = 0; j < d; ++j) {
      if (!rng.bernoulli(0.5)) continue;
      ps.presence[j] = 0;
      auto& tokens = j < example.premise.size() ? ps.example.premise : ps.example.hypothesis;
      const std::size_t pos = j < example.premise.size() ? j : j - example.premise.size();
      tokens[pos] = "<unk>";
    }
    out.push_back(std::move(ps));
  }
  return out;
}

struct ExplanationEntry {
  std::string token;
  std::string side;  // "premise" | "hypothesis"
  std::size_t position = 0;
  double weight = 0.0;
};

struct Explanation {
  int target_class = 0;
  std::vector<ExplanationEntry> entries;  // sorted by |weight| descending
  int n_samples = 0;
  bool ridge_boosted = false;  // degenerate fit was retried with a larger ridge

  nlohmann::json to_json() const {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& e : entries) {
      feats.push_back({{"token", e.token}, {"side", e.side}, {"position", e.position}, {"weight", e.weight}});
    }
    return {{"target_class", label_name(static_cast<Label>(target_class))},
            {"n_samples", n_samples},
            {"ridge_boosted", ridge_boosted},
            {"features", feats}};
  }

  std::string render_text() const {
    std::ostringstream os;
    double wmax = 1e-12;
    for (const auto& e : entries) wmax = std::max(wmax, std::abs(e.weight));
    for (const auto& e : entries) {
      const int bars = static_cast<int>(std::lround(20.0 * std::abs(e.weight) / wmax));
      os << (e.weight >= 0 ? '+' : '-') << ' ' << e.side[0] << ':' << e.token << ' '
         << std::string(static_cast<std::size_t>(bars), '#') << ' ' << e.weight << "\n";
    }
    return os.str();
  }
};

struct LimeOptions {
  int n_samples = 1000;
  double ridge = 1e-3;
  double kernel_width_scale = 0.75;  // width = scale * sqrt(l_a + l_b)
  int top_k = 6;
  std::uint64_t seed = 1;
};

// Weighted ridge regression with an implicit intercept (weighted centering).
// Returns one coefficient per token; sets *boosted when the first solve was
// degenerate and a stronger ridge was applied.
inline Eigen::VectorXd lime_fit(const Eigen::MatrixXd& presence, const Eigen::VectorXd& target,
                                const Eigen::VectorXd& weights, double ridge, bool* boosted = nullptr) {
  const Eigen::Index n = presence.rows();
  const Eigen::Index d = presence.cols();
  if (target.size() != n || weights.size() != n) throw ModelError("lime_fit: size mismatch");
  const double wsum = weights.sum();
  if (wsum <= 0.0) throw ModelError("lime_fit: non-positive weight mass");

  const Eigen::RowVectorXd xbar = (weights.transpose() * presence) / wsum;
  const double ybar = weights.dot(target) / wsum;
  const Eigen::MatrixXd xc = presence.rowwise() - xbar;
  const Eigen::VectorXd yc = target.array() - ybar;

  auto solve = [&](double alpha) -> Eigen::VectorXd {
    Eigen::MatrixXd gram = xc.transpose() * weights.asDiagonal() * xc;
    gram.diagonal().array() += alpha;
    const Eigen::VectorXd rhs = xc.transpose() * weights.cwiseProduct(yc);
    return gram.ldlt().solve(rhs);
  };

  Eigen::VectorXd beta = solve(ridge);
  bool retried = false;
  if (!beta.allFinite()) {
    beta = solve(ridge * 1000.0 + 1e-6);
    retried = true;
  }
  if (boosted) *boosted = retried;
  if (!beta.allFinite()) throw ModelError("lime_fit: degenerate design matrix");
  return beta;
}

// Class probabilities for a batch of examples, one row per example.
using ProbFn = std::function<Eigen::MatrixXd(const std::vector<const PairExample*>&)>;

inline Explanation lime_explain(const ProbFn& model, const PairExample& example, int target_class,
                                const LimeOptions& opts = {}) {
  if (opts.top_k < 1) throw DataError("lime_explain: top_k must be >= 1");
  if (target_class < 0 || target_class >= kNumClasses) {
    throw DataError("lime_explain: target class out of range");
  }
  const auto samples = perturb(example, opts.n_samples, opts.seed);
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index d = static_cast<Eigen::Index>(samples.front().presence.size());

  std::vector<const PairExample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s.example);
  const Eigen::MatrixXd probs = model(ptrs);
  if (probs.rows() != n || probs.cols() != kNumClasses) {
    throw ModelError("lime_explain: probability matrix has wrong shape");
  }

  Eigen::MatrixXd X(n, d);
  Eigen::VectorXd y(n), w(n);
  const double width = opts.kernel_width_scale * std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    double dropped = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      X(i, j) = samples[static_cast<std::size_t>(i)].presence[static_cast<std::size_t>(j)];
      dropped += 1.0 - X(i, j);
    }
    y(i) = probs(i, target_class);
    const double z = dropped / width;
    w(i) = std::exp(-z * z);
  }

  Explanation ex;
  ex.target_class = target_class;
  ex.n_samples = opts.n_samples;
  const Eigen::VectorXd beta = lime_fit(X, y, w, opts.ridge, &ex.ridge_boosted);

  for (Eigen::Index j = 0; j < d; ++j) {
    ExplanationEntry e;
    const std::size_t js = static_cast<std::size_t>(j);
    if (js < example.premise.size()) {
      e.side = "premise";
      e.position = js;
      e.token = example.premise[js];
    } else {
      e.side = "hypothesis";
      e.position = js - example.premise.size();
      e.token = example.hypothesis[e.position];
    }
    e.weight = beta(j);
    ex.entries.push_back(std::move(e));
  }
  std::sort(ex.entries.begin(), ex.entries.end(), [](const ExplanationEntry& a, const ExplanationEntry& b) {
    if (std::abs(a.weight) != std::abs(b.weight)) return std::abs(a.weight) > std::abs(b.weight);
    if (a.side != b.side) return a.side < b.side;
    return a.position < b.position;
  });
  if (ex.entries.size() > static_cast<std::size_t>(opts.top_k)) {
    ex.entries.resize(static_cast<std::size_t>(opts.top_k));
  }
  return ex;
}

}  // namespace lexbias
