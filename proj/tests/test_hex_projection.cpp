#include <catch2/catch_amalgamated.hpp>

#include "lexbias/hex_projection.hpp"
#include "lexbias/synthetic.hpp"

using namespace lexbias;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(RngStream& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

// Independent oracle: projection via the SVD pseudoinverse of F_G.
Mat pinv_project(const Mat& fa, const Mat& fg) {
  Eigen::JacobiSVD<Mat> svd(fg, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Mat sp = Mat::Zero(s.size(), s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > 1e-10 * s(0)) sp(i, i) = 1.0 / s(i);
  }
  const Mat pinv = svd.matrixV() * sp * svd.matrixU().transpose();
  return fa - fg * (pinv * fa);
}

EmbeddingMatrix random_embeddings(int vocab_size, int d_e, std::uint64_t seed) {
  EmbeddingMatrix emb;
  emb.weights.setZero(vocab_size, d_e);
  RngStream rng(seed);
  for (int i = 1; i < vocab_size; ++i) {
    for (int j = 0; j < d_e; ++j) emb.weights(i, j) = rng.normal(0.0, 0.4);
  }
  return emb;
}

}  // namespace

TEST_CASE("column_normalize spec examples", "[hex]") {
  Mat x(2, 1);
  x << 1, 3;
  const Mat y = column_normalize(x);
  REQUIRE(y(0, 0) == Catch::Approx(-1.0));
  REQUIRE(y(1, 0) == Catch::Approx(1.0));

  Mat constant = Mat::Constant(4, 2, 3.5);
  REQUIRE(column_normalize(constant).isZero(0.0));

  RngStream rng(3);
  const Mat r = column_normalize(random_mat(rng, 16, 5, 2.0));
  for (Eigen::Index j = 0; j < r.cols(); ++j) {
    REQUIRE(std::abs(r.col(j).mean()) <= 1e-6);
    const double sd = std::sqrt(r.col(j).squaredNorm() / static_cast<double>(r.rows()) -
                                r.col(j).mean() * r.col(j).mean());
    REQUIRE(sd == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("orthogonal_project removes the F_G component", "[hex]") {
  Mat fg(2, 1), fa(2, 1);
  fg << 1, 0;
  fa << 3, 4;
  const Mat fl = orthogonal_project(fa, fg, 0.0);
  REQUIRE(fl(0, 0) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(fl(1, 0) == Catch::Approx(4.0));

  // F_A inside span(F_G) projects to zero
  RngStream rng(5);
  const Mat g = random_mat(rng, 8, 3);
  const Mat fa_in_span = g * random_mat(rng, 3, 3);
  const Mat zero = orthogonal_project(fa_in_span, g, 0.0);
  REQUIRE(zero.cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("orthogonal_project agrees with the pseudoinverse oracle on random inputs", "[hex]") {
  RngStream rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index batch = 3 + static_cast<Eigen::Index>(rng.uniform_int(62));
    const Mat fg = random_mat(rng, batch, 3);
    const Mat fa = random_mat(rng, batch, 3);
    const Mat fl = orthogonal_project(fa, fg);

    const double bound = 1e-6 * fg.norm() * fa.norm();
    REQUIRE((fg.transpose() * fl).cwiseAbs().maxCoeff() <= bound);
    REQUIRE((fl - pinv_project(fa, fg)).cwiseAbs().maxCoeff() <= 1e-8);

    // idempotence and linearity within 1e-8
    REQUIRE((orthogonal_project(fl, fg) - fl).cwiseAbs().maxCoeff() <= 1e-8);
    const Mat fb = random_mat(rng, batch, 3);
    const Mat lhs = orthogonal_project(2.0 * fa - 0.5 * fb, fg);
    const Mat rhs = 2.0 * orthogonal_project(fa, fg) - 0.5 * orthogonal_project(fb, fg);
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("rank-deficient F_G takes the ridge path without errors", "[hex]") {
  RngStream rng(9);
  Mat fg = random_mat(rng, 6, 3);
  fg.col(2) = fg.col(0) + fg.col(1);  // exactly rank 2
  const Mat fa = random_mat(rng, 6, 3);
  const Mat fl = orthogonal_project(fa, fg);
  REQUIRE(fl.allFinite());
  // components inside the (rank-2) column space are still mostly removed
  REQUIRE((fg.transpose() * fl).cwiseAbs().maxCoeff() <= 1e-2 * fg.norm() * fa.norm());
}

TEST_CASE("projection gradients pass finite differences away from rank deficiency", "[hex][gradcheck]") {
  RngStream rng(11);
  const Mat fa = random_mat(rng, 6, 3);
  const Mat fg = random_mat(rng, 6, 3);
  const Mat w = random_mat(rng, 6, 3);

  Tape t;
  Var va = t.input(fa, true);
  Var vg = t.input(fg, true);
  Var fl = orthogonal_project(t, va, vg, 0.0);
  t.backward(t.weighted_sum(fl, w));
  const Mat ga = t.grad(va);
  const Mat gg = t.grad(vg);

  auto value = [&](const Mat& a, const Mat& g) {
    Tape tt;
    return tt.value(tt.weighted_sum(orthogonal_project(tt, tt.constant(a), tt.constant(g), 0.0), w))(0, 0);
  };
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      Mat ap = fa, am = fa;
      ap(i, j) += h;
      am(i, j) -= h;
      double fd = (value(ap, fg) - value(am, fg)) / (2 * h);
      REQUIRE(std::abs(fd - ga(i, j)) / std::max({1.0, std::abs(fd), std::abs(ga(i, j))}) <= 1e-4);

      Mat gp = fg, gm = fg;
      gp(i, j) += h;
      gm(i, j) -= h;
      fd = (value(fa, gp) - value(fa, gm)) / (2 * h);
      REQUIRE(std::abs(fd - gg(i, j)) / std::max({1.0, std::abs(fd), std::abs(gg(i, j))}) <= 1e-4);
    }
  }
}

TEST_CASE("hex_forward zero-masking semantics", "[hex]") {
  RngStream rng(13);
  nn::ParamStore store;
  RngStream init(1);
  nn::Linear f = nn::Linear::create(store, "f", 8, 3, init);

  const Mat u_bow = random_mat(rng, 5, 4);
  const Mat u_main = random_mat(rng, 5, 4);

  // zero head parameters: all outputs zero, including the projection
  f.W->value.setZero();
  f.b->value.setZero();
  {
    Tape t;
    nn::Binder bind(t, false);
    HexOutputs out = hex_forward(bind, f, t.constant(u_bow), t.constant(u_main), 0.0, HexMode::train);
    REQUIRE(t.value(out.F_A).isZero(0.0));
    REQUIRE(t.value(out.F_P).isZero(0.0));
    REQUIRE(t.value(out.F_G).isZero(0.0));
    REQUIRE(t.value(out.F_L).allFinite());
    REQUIRE(t.value(out.F_L).cwiseAbs().maxCoeff() <= 1e-12);
  }

  // test mode ignores u_bow entirely
  RngStream init2(2);
  nn::ParamStore store2;
  nn::Linear f2 = nn::Linear::create(store2, "f", 8, 3, init2);
  Tape t;
  nn::Binder bind(t, false);
  HexOutputs a = hex_forward(bind, f2, t.constant(u_bow), t.constant(u_main), 0.0, HexMode::test);
  HexOutputs b = hex_forward(bind, f2, t.constant(random_mat(rng, 5, 4)), t.constant(u_main), 0.0,
                             HexMode::test);
  REQUIRE(t.value(a.F_P) == t.value(b.F_P));
  REQUIRE_FALSE(a.F_L.valid());  // no projection output in test mode
}

TEST_CASE("hex training loss is 1.0 * CE(F_L) + 0.3 * CE(F_G) with paper defaults", "[hex]") {
  EncoderConfig cfg;
  cfg.d_e = 6;
  cfg.d_h = 4;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_mlp = 5;
  cfg.dropout = 0.0;
  HexConfig hex;  // defaults: weights 1.0 / 0.3
  REQUIRE(hex.loss_weight_L == 1.0);
  REQUIRE(hex.loss_weight_G == 0.3);

  const auto corpus = generate_synthetic({.n_train = 8, .n_dev = 2, .n_test = 2, .seed = 55});
  const Vocabulary vocab = build_vocab({&corpus.train});
  HexModel model(cfg, hex, random_embeddings(vocab.size(), cfg.d_e, 3), 31);

  std::vector<const PairExample*> exs;
  for (const auto& ex : corpus.train.examples) exs.push_back(&ex);
  const PairBatch batch = encode_batch(exs, vocab, 16);

  Tape t;
  nn::Binder bind(t, true);
  ForwardResult r = model.build_loss(t, bind, batch, true);
  REQUIRE(t.value(r.loss)(0, 0) ==
          Catch::Approx(1.0 * r.metrics.at("loss_l") + 0.3 * r.metrics.at("loss_g")));

  // prediction path is pure F_P: identical logits in eval mode regardless of train-mode extras
  const Mat logits = model.predict_logits(batch);
  REQUIRE(logits.rows() == static_cast<Eigen::Index>(exs.size()));
}

TEST_CASE("every hex parameter passes a finite-difference check", "[hex][gradcheck]") {
  // Two phases, because the projection holds F_G constant by design:
  //  1. weight_G = 0 isolates CE(F_L); parameters upstream of F_G are skipped
  //     there (their true derivative includes the detached projector path).
  //  2. weight_L = 0 isolates CE(F_G), which is fully differentiable, so
  //     every parameter is checked.
  EncoderConfig cfg;
  cfg.d_e = 6;
  cfg.d_h = 3;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_mlp = 4;
  cfg.dropout = 0.0;

  const auto corpus = generate_synthetic({.n_train = 24, .n_dev = 2, .n_test = 2, .seed = 77});
  const Vocabulary vocab = build_vocab({&corpus.train});
  const EmbeddingMatrix emb = random_embeddings(vocab.size(), cfg.d_e, 5);

  // batch of 4 keeps F_G^T F_G full rank (no ridge) and batch stats well-posed
  std::vector<const PairExample*> exs;
  for (int i = 0; i < 4; ++i) exs.push_back(&corpus.train.examples[static_cast<std::size_t>(i)]);
  const PairBatch batch = encode_batch(exs, vocab, 16);

  auto run_phase = [&](double weight_l, double weight_g, auto include_param) {
    HexConfig hex;
    hex.loss_weight_L = weight_l;
    hex.loss_weight_G = weight_g;
    HexModel model(cfg, hex, emb, 37);

    auto loss_value = [&]() {
      Tape t;
      nn::Binder bind(t, false);
      return t.value(model.build_loss(t, bind, batch, true).loss)(0, 0);
    };

    Tape t;
    nn::Binder bind(t, true);
    ForwardResult r = model.build_loss(t, bind, batch, true);
    t.backward(r.loss);
    std::map<std::string, Mat> analytic;
    for (const auto& [p, v] : bind.bound()) analytic[p->name] = t.grad(v);

    const double h = 1e-5;
    std::size_t checked = 0;
    for (const auto& p : model.params().items()) {
      if (!p->trainable || !include_param(p->name)) continue;
      const Mat grad = analytic.at(p->name);
      for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
        for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
          const double orig = p->value(i, j);
          p->value(i, j) = orig + h;
          const double up = loss_value();
          p->value(i, j) = orig - h;
          const double down = loss_value();
          p->value(i, j) = orig;
          const double fd = (up - down) / (2.0 * h);
          const double an = grad(i, j);
          const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
          INFO(p->name << "(" << i << "," << j << "): fd=" << fd << " an=" << an);
          REQUIRE(err <= 1e-4);
          ++checked;
        }
      }
    }
    return checked;
  };

  const std::size_t main_side = run_phase(1.0, 0.0, [](const std::string& name) {
    return name.rfind("enc.", 0) == 0 || name.rfind("umain.", 0) == 0;
  });
  const std::size_t all_params = run_phase(0.0, 0.3, [](const std::string&) { return true; });
  REQUIRE(main_side > 0);
  REQUIRE(all_params > main_side);
}

TEST_CASE("warm start copies encoder weights and freeze_bottom freezes them", "[hex]") {
  EncoderConfig cfg;
  cfg.d_e = 6;
  cfg.d_h = 4;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_mlp = 5;
  cfg.dropout = 0.0;

  const auto corpus = generate_synthetic({.n_train = 12, .n_dev = 2, .n_test = 2, .seed = 88});
  const Vocabulary vocab = build_vocab({&corpus.train});
  const EmbeddingMatrix emb = random_embeddings(vocab.size(), cfg.d_e, 6);

  BaselineModel base(cfg, emb, 41);
  base.params().find("emb.E")->value.array() += 0.321;  // stands in for training

  HexConfig hex;
  hex.freeze_bottom = true;
  HexModel model(cfg, hex, emb, 43);
  model.init_from_baseline(base);

  REQUIRE(model.params().find("emb.E")->value == base.params().find("emb.E")->value);
  REQUIRE(model.params().find("enc.l0.fwd.Wx")->value == base.params().find("enc.l0.fwd.Wx")->value);
  REQUIRE_FALSE(model.params().find("emb.E")->trainable);
  REQUIRE_FALSE(model.params().find("enc.l0.fwd.Wx")->trainable);
  REQUIRE(model.params().find("enc.l1.fwd.Wx")->trainable);  // only the bottom layer is frozen
  REQUIRE(model.params().find("f.W")->trainable);
}
