#include <doctest.h>

#include <cmath>
#include <limits>

#include "mmkgl/attention.h"
#include "oracles.h"

using namespace mmkgl;

namespace {

std::vector<AttentionHead> heads_on(Tape& t, const std::vector<Matrix>& psi,
                                    const std::vector<Matrix>& xi) {
  std::vector<AttentionHead> heads;
  for (std::size_t q = 0; q < psi.size(); ++q) heads.push_back({t.constant(psi[q]), t.constant(xi[q])});
  return heads;
}

}  // namespace

TEST_SUITE("attention") {
  TEST_CASE("neighbor mask examples") {
    Matrix a(3, 3);
    a << 1.0, 0.3, 0.7,  //
        0.3, 1.0, 0.2,   //
        0.7, 0.2, 1.0;
    Mask full = neighbor_mask(a, -std::numeric_limits<double>::infinity());
    CHECK(full.all());
    Mask none = neighbor_mask(a, 1.0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(none(i, j) == (i == j));
    Mask half = neighbor_mask(a, 0.5);
    CHECK(half(0, 0));
    CHECK_FALSE(half(0, 1));
    CHECK(half(0, 2));
  }

  TEST_CASE("single-head scores by hand") {
    Tape t;
    Matrix f(2, 2), psi = Matrix::Identity(2, 2), xi(4, 1);
    f << 1, 0, 0, 1;
    xi << 0.5, -1.0, 2.0, 0.25;
    Mask mask = Mask::Constant(2, 2, true);
    Matrix a = attention_scores(t.constant(f), heads_on(t, {psi}, {xi}), mask).value();
    auto lrelu = [](double x) { return x > 0 ? x : 0.2 * x; };
    // e_ij = LeakyReLU(xi_top . f_i + xi_bot . f_j)
    const double e00 = lrelu(0.5 + 2.0), e01 = lrelu(0.5 + 0.25);
    const double e10 = lrelu(-1.0 + 2.0), e11 = lrelu(-1.0 + 0.25);
    CHECK(a(0, 0) == doctest::Approx(std::exp(e00) / (std::exp(e00) + std::exp(e01))).epsilon(1e-14));
    CHECK(a(0, 1) == doctest::Approx(std::exp(e01) / (std::exp(e00) + std::exp(e01))).epsilon(1e-14));
    CHECK(a(1, 0) == doctest::Approx(std::exp(e10) / (std::exp(e10) + std::exp(e11))).epsilon(1e-14));
    CHECK(a(1, 1) == doctest::Approx(std::exp(e11) / (std::exp(e10) + std::exp(e11))).epsilon(1e-14));
    CHECK(a(0, 1) != doctest::Approx(a(1, 0)));  // not symmetric in general
  }

  TEST_CASE("self-only rows and identical neighbors") {
    Rng rng(6);
    Tape t;
    Matrix f = oracle::random_matrix(rng, 4, 3);
    f.row(2) = f.row(1);
    Mask mask = Mask::Constant(4, 4, false);
    mask(0, 1) = mask(0, 2) = true;  // two neighbors with identical features
    mask(1, 1) = mask(2, 2) = mask(3, 3) = true;
    auto heads = heads_on(t, {oracle::random_matrix(rng, 3, 5), oracle::random_matrix(rng, 3, 5)},
                          {oracle::random_matrix(rng, 10, 1), oracle::random_matrix(rng, 10, 1)});
    Matrix a = attention_scores(t.constant(f), heads, mask).value();
    CHECK(a(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(a(0, 2) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(a(3, 3) == 1.0);
    CHECK(a(3, 0) == 0.0);
  }

  TEST_CASE("mean of heads is row-stochastic and zero off the mask") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
      Tape t;
      const int n = 9;
      Matrix f = oracle::random_matrix(rng, n, 6);
      Mask mask = Mask::Constant(n, n, false);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) mask(i, j) = i == j || rng.bernoulli(0.4);
      std::vector<Matrix> psi, xi;
      for (int q = 0; q < 4; ++q) {
        psi.push_back(oracle::random_matrix(rng, 6, 4, -2, 2));
        xi.push_back(oracle::random_matrix(rng, 8, 1, -2, 2));
      }
      Matrix a = attention_scores(t.constant(f), heads_on(t, psi, xi), mask).value();
      for (int i = 0; i < n; ++i) {
        CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-12);
        for (int j = 0; j < n; ++j) {
          if (!mask(i, j)) CHECK(a(i, j) == 0.0);
        }
      }
    }
  }

  TEST_CASE("shape validation") {
    Tape t;
    Mask mask = Mask::Constant(3, 3, true);
    Tensor f = t.constant(Matrix::Ones(3, 4));
    CHECK_THROWS_AS(attention_scores(f, heads_on(t, {Matrix::Ones(5, 2)}, {Matrix::Ones(4, 1)}), mask),
                    DimensionError);
    CHECK_THROWS_AS(attention_scores(f, heads_on(t, {Matrix::Ones(4, 2)}, {Matrix::Ones(3, 1)}), mask),
                    DimensionError);
    CHECK_THROWS_AS(attention_scores(f, {}, mask), ContractError);
    CHECK_THROWS_AS(
        attention_scores(f, heads_on(t, {Matrix::Ones(4, 2)}, {Matrix::Ones(4, 1)}), Mask::Constant(2, 2, true)),
        DimensionError);
  }

  TEST_CASE("gradients with respect to psi and xi") {
    Rng rng(12);
    const int n = 5;
    Matrix f = oracle::random_matrix(rng, n, 3);
    Mask mask = Mask::Constant(n, n, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mask(i, j) = i == j || (i + j) % 2 == 1;
    Matrix w = oracle::random_matrix(rng, n, n);
    auto fn = [&](Tape& t, const std::vector<Tensor>& v) {
      std::vector<AttentionHead> heads{{v[0], v[1]}, {v[2], v[3]}};
      return oracle::weighted_sum(t, attention_scores(t.constant(f), heads, mask), w);
    };
    CHECK(oracle::gradient_error(fn, {oracle::random_matrix(rng, 3, 2), oracle::random_matrix(rng, 4, 1),
                                      oracle::random_matrix(rng, 3, 2), oracle::random_matrix(rng, 4, 1)}) <
          1e-4);
  }
}
