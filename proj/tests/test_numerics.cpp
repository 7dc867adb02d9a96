#include <doctest.h>

#include <cmath>

#include "mpkd/numerics.hpp"

using namespace mpkd;
using doctest::Approx;

TEST_SUITE("numerics") {
  TEST_CASE("softmax over live positions") {
    CHECK(softmax_masked(std::vector<double>{5.0}, {true}) == Vector{1.0});
    const auto p = softmax_masked(std::vector<double>{0, 0, 0}, {true, true, false});
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
    CHECK(p[2] == 0.0);
    const auto q = softmax_masked(std::vector<double>{1, 2}, {true, true});
    const double e = std::exp(1.0);
    CHECK(q[0] == Approx(1.0 / (1.0 + e)).epsilon(1e-14));
    CHECK(q[1] == Approx(e / (1.0 + e)).epsilon(1e-14));
    CHECK_THROWS_WITH_AS(softmax_masked(std::vector<double>{1, 2}, {false, false}), "empty support", Error);
  }

  TEST_CASE("softmax is shift invariant and sums to one") {
    Rng rng = make_rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> x(7);
      std::vector<bool> live(7);
      for (std::size_t i = 0; i < 7; ++i) {
        x[i] = 20.0 * (uniform01(rng) - 0.5);
        live[i] = uniform01(rng) < 0.7;
      }
      live[trial % 7] = true;
      auto p = softmax_masked(x, live);
      for (auto& v : x) v += 300.0;
      auto p2 = softmax_masked(x, live);
      double s = 0.0;
      for (std::size_t i = 0; i < 7; ++i) {
        s += p[i];
        if (!live[i]) CHECK(p[i] == 0.0);
        CHECK(p[i] == Approx(p2[i]).epsilon(1e-12));
      }
      CHECK(s == Approx(1.0).epsilon(1e-14));
    }
  }

  TEST_CASE("cosine") {
    const std::vector<double> a{1, 2, 3};
    CHECK(cosine(a, a) == Approx(1.0).epsilon(1e-15));
    CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{-2, 0}) == -1.0);
    CHECK_THROWS_WITH_AS(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), "undefined cosine", Error);
  }

  TEST_CASE("cosine gradient matches finite differences") {
    std::vector<double> u{0.3, -1.2, 0.7}, v{1.1, 0.4, -0.5};
    double val = 0.0;
    std::vector<double> gu(3), gv(3);
    REQUIRE(cosine_with_grad(u, v, val, gu, gv));
    auto rep = grad_check([&] { return cosine(u, v); }, ParamView{u, v}, ConstParamView{gu, gv}, 1e-6, 1e-7);
    CHECK(rep.passed);
    std::vector<double> z{0, 0, 0};
    CHECK_FALSE(cosine_with_grad(z, v, val, gu, gv));
  }

  TEST_CASE("matrix products agree with naive loops") {
    Rng rng = make_rng(9);
    DenseMatrix a(3, 4), b(4, 2), c(3, 2);
    for (auto& x : a.values()) x = uniform01(rng);
    for (auto& x : b.values()) x = uniform01(rng);
    for (auto& x : c.values()) x = uniform01(rng);
    const auto ab = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
        CHECK(ab(i, j) == Approx(s).epsilon(1e-14));
      }
    const auto atc = matmul_tn(a, c);  // 4 x 2
    CHECK(atc(2, 1) == Approx(a(0, 2) * c(0, 1) + a(1, 2) * c(1, 1) + a(2, 2) * c(2, 1)).epsilon(1e-14));
    const auto abt = matmul_nt(c, c);  // 3 x 3
    CHECK(abt(0, 2) == Approx(c(0, 0) * c(2, 0) + c(0, 1) * c(2, 1)).epsilon(1e-14));
    CHECK_THROWS_AS(matmul(a, a), Error);
  }

  TEST_CASE("grad_check on a quadratic, and its negative control") {
    std::vector<double> x{1.0, -2.0};
    auto loss = [&] { return x[0] * x[0] + x[1] * x[1]; };
    const std::vector<double> good{2.0, -4.0}, bad{4.0, -8.0};
    const auto ok = grad_check(loss, ParamView{x}, ConstParamView{good}, 1e-5, 1e-5);
    CHECK(ok.passed);
    CHECK(ok.max_rel_err <= 1e-8);
    CHECK(ok.checked == 2);
    CHECK(x == std::vector<double>{1.0, -2.0});
    const auto wrong = grad_check(loss, ParamView{x}, ConstParamView{bad}, 1e-5, 1e-5);
    CHECK_FALSE(wrong.passed);
  }

  TEST_CASE("grad_check reports a non-finite loss") {
    std::vector<double> x{0.0};
    const std::vector<double> g{0.0};
    CHECK_THROWS_AS(grad_check([&] { return std::log(x[0]); }, ParamView{x}, ConstParamView{g}, 1e-5, 1e-5), Error);
  }

  TEST_CASE("adam") {
    SUBCASE("zero gradient keeps parameters") {
      std::vector<double> p{0.5, -0.25};
      const std::vector<double> g{0.0, 0.0};
      AdamState st;
      for (int i = 0; i < 3; ++i) adam_step(ParamView{p}, ConstParamView{g}, st, 0.01);
      CHECK(p == std::vector<double>{0.5, -0.25});
    }
    SUBCASE("first step moves by about lr") {
      std::vector<double> p{0.0};
      const std::vector<double> g{1.0};
      AdamState st;
      adam_step(ParamView{p}, ConstParamView{g}, st, 0.01);
      CHECK(p[0] == Approx(-0.01).epsilon(1e-6));
    }
    SUBCASE("converges on a scalar quadratic like the plain recurrence") {
      std::vector<double> p{0.0};
      AdamState st;
      // Independent recurrence.
      double x = 0.0, m = 0.0, v = 0.0;
      for (int k = 1; k <= 100; ++k) {
        const std::vector<double> g{2.0 * (p[0] - 3.0)};
        adam_step(ParamView{p}, ConstParamView{g}, st, 0.1);
        const double gx = 2.0 * (x - 3.0);
        m = 0.9 * m + 0.1 * gx;
        v = 0.999 * v + 0.001 * gx * gx;
        x -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
      }
      CHECK(std::abs(p[0] - 3.0) < 0.5);
      CHECK(p[0] == Approx(x).epsilon(1e-12));
    }
    SUBCASE("shape mismatch") {
      std::vector<double> p{0.0}, p2{0.0, 1.0};
      const std::vector<double> g{1.0}, g2{1.0, 1.0};
      AdamState st;
      adam_step(ParamView{p}, ConstParamView{g}, st, 0.01);
      CHECK_THROWS_AS(adam_step(ParamView{p2}, ConstParamView{g2}, st, 0.01), Error);
    }
  }

  TEST_CASE("seed derivation is stable and coordinate sensitive") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
  }
}
