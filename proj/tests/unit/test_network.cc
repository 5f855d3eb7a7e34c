#include <doctest.h>

#include <cmath>

#include "mmkgl/network.h"
#include "oracles.h"

using namespace mmkgl;

namespace {

Matrix random_probs(Rng& rng, Eigen::Index n, Eigen::Index t) {
  Matrix p = oracle::random_matrix(rng, n, t, 0.01, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) p.row(i) /= p.row(i).sum();
  return p;
}

Dataset tiny_dataset() {
  SynthConfig c;
  c.subjects = 12;
  c.dominant_features = 10;
  c.planted_features = 3;
  c.weak_features = 4;
  c.weak_planted = 2;
  c.seed = 3;
  return generate_synthetic(c);
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("ckdt of two branches by hand") {
    Tape t;
    Matrix p1(1, 2), p2(1, 2);
    p1 << 0.25, 0.75;
    p2 << 0.6, 0.4;
    Matrix c = build_ckdt({t.constant(p1), t.constant(p2)}).value();
    REQUIRE(c.cols() == 4);
    CHECK(c(0, 0) == doctest::Approx(0.15));
    CHECK(c(0, 1) == doctest::Approx(0.10));
    CHECK(c(0, 2) == doctest::Approx(0.45));
    CHECK(c(0, 3) == doctest::Approx(0.30));
  }

  TEST_CASE("ckdt of one branch is that branch") {
    Rng rng(1);
    Tape t;
    Matrix p = random_probs(rng, 5, 3);
    CHECK(build_ckdt({t.constant(p)}).value() == p);
  }

  TEST_CASE("ckdt sums to one and marginalizes back to each branch") {
    Rng rng(2);
    for (int classes : {2, 3}) {
      for (int branches : {1, 2, 3}) {
        Tape t;
        std::vector<Matrix> p;
        std::vector<Tensor> pt;
        for (int b = 0; b < branches; ++b) {
          p.push_back(random_probs(rng, 4, classes));
          pt.push_back(t.constant(p.back()));
        }
        Matrix c = build_ckdt(pt).value();
        CHECK(c.cols() == static_cast<Eigen::Index>(std::pow(classes, branches)));
        for (Eigen::Index i = 0; i < c.rows(); ++i) {
          CHECK(std::abs(c.row(i).sum() - 1.0) <= 1e-9);
          for (int b = 0; b < branches; ++b) {
            // Flat index digits in base t, branch 1 most significant.
            const int stride = static_cast<int>(std::pow(classes, branches - 1 - b));
            for (int cls = 0; cls < classes; ++cls) {
              double marginal = 0;
              for (Eigen::Index e = 0; e < c.cols(); ++e)
                if ((e / stride) % classes == cls) marginal += c(i, e);
              CHECK(std::abs(marginal - p[b](i, cls)) <= 1e-12);
            }
          }
        }
      }
    }
  }

  TEST_CASE("ckdt rejects mismatched class counts") {
    Tape t;
    CHECK_THROWS_AS(build_ckdt({t.constant(Matrix::Ones(2, 2)), t.constant(Matrix::Ones(2, 3))}),
                    DimensionError);
    CHECK_THROWS_AS(build_ckdt({}), ContractError);
  }

  TEST_CASE("binary cross entropy by hand") {
    Tape t;
    Matrix p(3, 2);
    p << 0.2, 0.8, 0.9, 0.1, 0.5, 0.5;
    const double expected = -(std::log(0.8) + std::log(0.9));
    CHECK(cross_entropy(t.constant(p), {1, 0, 1}, {true, true, false}).item() ==
          doctest::Approx(expected).epsilon(1e-14));
    CHECK_THROWS_AS(cross_entropy(t.constant(p), {1, 0, 1}, {false, false, false}), ContractError);
    CHECK_THROWS_AS(cross_entropy(t.constant(p), {1, 0}, {true, true}), DimensionError);
  }

  TEST_CASE("certain predictions are clamped, not infinite") {
    Tape t;
    Matrix p(1, 2);
    p << 1.0, 0.0;
    const double loss = cross_entropy(t.constant(p), {1}, {true}).item();
    CHECK(loss == doctest::Approx(-std::log(kProbabilityEps)));
  }

  TEST_CASE("multi-class cross entropy by hand") {
    Tape t;
    Matrix p(2, 3);
    p << 0.2, 0.5, 0.3, 0.1, 0.1, 0.8;
    CHECK(cross_entropy(t.constant(p), {1, 2}, {true, true}).item() ==
          doctest::Approx(-(std::log(0.5) + std::log(0.8))).epsilon(1e-14));
  }

  TEST_CASE("fusion head is softmax of an affine map") {
    Tape t;
    Matrix x(1, 2), w(2, 2), b(1, 2);
    x << 1, 2;
    w << 1, 0, 0, 1;
    b << 0, 1;
    FusionOutput out = fusion_forward(t.constant(x), t.constant(w), t.constant(b));
    CHECK(out.logits.value()(0, 1) == 3.0);
    CHECK(out.probs.value()(0, 1) == doctest::Approx(std::exp(3.0) / (std::exp(1.0) + std::exp(3.0))));
    CHECK_THROWS_AS(fusion_forward(t.constant(Matrix::Ones(1, 3)), t.constant(w), t.constant(b)),
                    DimensionError);
  }

  TEST_CASE("total loss weights") {
    Tape t;
    CHECK(total_loss(t.scalar(1.0), t.scalar(2.0), t.scalar(3.0), 1, 0.5, 2).item() == 8.0);
    CHECK_THROWS_AS(total_loss(t.scalar(1.0), t.scalar(2.0), t.scalar(3.0), -1, 1, 1), ConfigError);
  }

  TEST_CASE("fusion mode names") {
    for (FusionMode m : {FusionMode::kCkdt, FusionMode::kConcat, FusionMode::kAdd, FusionMode::kWeight,
                         FusionMode::kAvg})
      CHECK(parse_fusion_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_fusion_mode("product"), ConfigError);
  }

  TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.kernel_orders = {};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.kernel_orders = {2, -1};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.ram_heads = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.age_theta = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("prepare selects modalities and requires the dominant one") {
    Dataset d = tiny_dataset();
    ModelConfig c;
    PreparedData all = prepare(d, c);
    CHECK(all.continuous.size() == 3);
    CHECK(all.discrete_graphs.size() == 1);
    CHECK(all.continuous_names[all.dominant] == "fc");
    c.modalities = {"anat", "fc"};
    PreparedData two = prepare(d, c);
    CHECK(two.continuous_names == std::vector<std::string>{"anat", "fc"});
    CHECK(two.dominant == 1);
    CHECK(two.discrete_graphs.empty());
    c.modalities = {"anat", "phe"};
    CHECK_THROWS_AS(prepare(d, c), ConfigError);
  }

  TEST_CASE("forward pass shapes for every fusion mode") {
    Dataset d = tiny_dataset();
    for (FusionMode m : {FusionMode::kCkdt, FusionMode::kConcat, FusionMode::kAdd, FusionMode::kWeight,
                         FusionMode::kAvg}) {
      for (bool ram : {true, false}) {
        ModelConfig c;
        c.fusion = m;
        c.ram_enabled = ram;
        c.hidden_width = 8;
        c.projection_width = 6;
        PreparedData p = prepare(d, c);
        Model model(c, p, 1);
        Tape t;
        ForwardPass fp = model.forward(t, p);
        CHECK(fp.branch_probs.size() == 3);
        CHECK(fp.fusion.probs.rows() == 12);
        CHECK(fp.fusion.probs.cols() == 2);
        for (Eigen::Index i = 0; i < 12; ++i)
          CHECK(std::abs(fp.fusion.probs.value().row(i).sum() - 1.0) < 1e-12);
      }
    }
  }

  TEST_CASE("parameter groups") {
    CHECK(Model::group_of("theta.fc") == "theta");
    CHECK(Model::group_of("psi.0") == "psi");
    CHECK(Model::group_of("xi.3") == "xi");
    CHECK(Model::group_of("branch.1.l2.w0") == "branch");
    CHECK(Model::group_of("fusion.w") == "fusion");
  }

  TEST_CASE("initialization is deterministic per seed") {
    Dataset d = tiny_dataset();
    ModelConfig c;
    PreparedData p = prepare(d, c);
    Model a(c, p, 5), b(c, p, 5), other(c, p, 6);
    auto pa = a.parameters(), pb = b.parameters(), po = other.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i]->value == pb[i]->value);
      any_differs = any_differs || pa[i]->value != po[i]->value;
    }
    CHECK(any_differs);
  }

  TEST_CASE("branch forward gradients") {
    Rng rng(8);
    const int n = 6;
    Matrix a = oracle::random_matrix(rng, n, n, 0.1, 1.0), x = oracle::random_matrix(rng, n, 3);
    Matrix w = oracle::random_matrix(rng, n, 2);
    auto f = [&](Tape& t, const std::vector<Tensor>& v) {
      LaplacianBundle b = build_laplacian(t.constant(a));
      return oracle::weighted_sum(t, branch_forward({v[0], v[1]}, {v[2], v[3]}, b, t.constant(x)), w);
    };
    CHECK(oracle::gradient_error(f, {oracle::random_matrix(rng, 3, 4), oracle::random_matrix(rng, 3, 4),
                                     oracle::random_matrix(rng, 4, 2), oracle::random_matrix(rng, 4, 2)}) <
          1e-4);
  }
}
