#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "focl/tasks.hpp"

#include <cmath>
#include <vector>

using namespace focl;

TEST_CASE("gauss2d means sit on the circle") {
  auto s = make_gauss2d(4, 4.0, 0.15, 1);
  REQUIRE(s.T == 4);
  REQUIRE(s.tasks.size() == 4);
  CHECK(s.tasks[0].mean_x == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(s.tasks[0].mean_y == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(std::abs(s.tasks[1].mean_x - 0.0) < 1e-12);
  CHECK(std::abs(s.tasks[1].mean_y - 4.0) < 1e-12);
  CHECK(std::abs(s.tasks[2].mean_x + 4.0) < 1e-12);
  CHECK(std::abs(s.tasks[3].mean_y + 4.0) < 1e-12);
  for (const auto& t : s.tasks) {
    CHECK(t.sigma == 0.15);
    CHECK(t.data_dim == 2);
  }
}

TEST_CASE("gauss2d single-task stream") {
  auto s = make_gauss2d(1, 4.0, 0.15, 9);
  REQUIRE(s.tasks.size() == 1);
  CHECK(s.tasks[0].mean_x == doctest::Approx(4.0));
  CHECK(std::abs(s.tasks[0].mean_y) < 1e-12);
}

TEST_CASE("gauss2d sample mean converges to the task mean") {
  auto s = make_gauss2d(5, 4.0, 0.15, 3);
  Rng rng(21);
  Mat x = sample_real_values(s.tasks[0], 10000, rng);
  const double bound = 3.0 * 0.15 / std::sqrt(10000.0);
  CHECK(std::abs(x.col(0).mean() - 4.0) < bound);
  CHECK(std::abs(x.col(1).mean() - 0.0) < bound);
}

TEST_CASE("factory argument validation") {
  CHECK_THROWS_AS(make_gauss2d(0, 4.0, 0.15, 1), ConfigError);
  CHECK_THROWS_AS(make_gauss2d(5, 0.0, 0.15, 1), ConfigError);
  CHECK_THROWS_AS(make_gauss2d(5, -1.0, 0.15, 1), ConfigError);
  CHECK_THROWS_AS(make_gauss2d(5, 4.0, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(make_glyphs8(0, 0.1, 1), ConfigError);
  CHECK_THROWS_AS(make_glyphs8(11, 0.1, 1), ConfigError);
  CHECK_THROWS_AS(make_glyphs8(5, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(make_glyphs8(5, -0.01, 1), ConfigError);
}

TEST_CASE("sample size must be positive") {
  auto s = make_gauss2d(2, 4.0, 0.15, 1);
  Rng rng(1);
  CHECK_THROWS_AS(sample_real_values(s.tasks[0], 0, rng),
                  ContractViolation);
  CHECK_THROWS_AS(sample_real_values(s.tasks[0], -3, rng),
                  ContractViolation);
}

TEST_CASE("noise-free glyph draws reproduce the template exactly") {
  auto s = make_glyphs8(10, 0.0, 5);
  Rng rng(2);
  for (const auto& t : s.tasks) {
    Mat x = sample_real_values(t, 7, rng);
    REQUIRE(x.cols() == 64);
    for (int r = 0; r < x.rows(); ++r)
      for (int c = 0; c < 64; ++c) CHECK(x(r, c) == t.glyph(0, c));
  }
}

TEST_CASE("glyph templates are binary-levelled and mutually distinct") {
  auto s = make_glyphs8(10, 0.0, 5);
  for (const auto& t : s.tasks)
    for (int c = 0; c < 64; ++c)
      CHECK((t.glyph(0, c) == 0.1 || t.glyph(0, c) == 0.9));
  for (std::size_t a = 0; a < s.tasks.size(); ++a)
    for (std::size_t b = a + 1; b < s.tasks.size(); ++b) {
      int differing = 0;
      for (int c = 0; c < 64; ++c)
        if (s.tasks[a].glyph(0, c) != s.tasks[b].glyph(0, c)) ++differing;
      CHECK(differing > 0);
    }
}

TEST_CASE("glyph draws stay in the unit interval even at heavy noise") {
  auto s = make_glyphs8(4, 0.45, 6);
  Rng rng(11);
  Mat x = sample_real_values(s.tasks[2], 200, rng);
  CHECK(x.minCoeff() >= 0.0);
  CHECK(x.maxCoeff() <= 1.0);
  // heavy noise actually hits the clamp
  CHECK((x.array() == 1.0).any());
}

TEST_CASE("moderate noise leaves the per-pixel mean on the template") {
  auto s = make_glyphs8(3, 0.1, 7);
  Rng rng(13);
  Mat x = sample_real_values(s.tasks[1], 5000, rng);
  Mat mean = x.colwise().mean();
  for (int c = 0; c < 64; ++c)
    CHECK(std::abs(mean(0, c) - s.tasks[1].glyph(0, c)) < 0.01);
}

TEST_CASE("sample_real wraps values with real provenance") {
  auto s = make_gauss2d(3, 4.0, 0.15, 1);
  Rng rng(4);
  auto b = sample_real(s.tasks[2], 9, rng);
  CHECK(b.x->value.values.rows() == 9);
  CHECK(b.x->value.values.cols() == 2);
  CHECK(b.condition == 2);
  CHECK(b.provenance == Provenance::real);
  CHECK(b.paired);
  CHECK_FALSE(b.x->requires_grad);
}

TEST_CASE("identical rng state gives identical draws") {
  auto s = make_glyphs8(5, 0.2, 8);
  Rng a(77), b(77);
  Mat xa = sample_real_values(s.tasks[3], 20, a);
  Mat xb = sample_real_values(s.tasks[3], 20, b);
  CHECK((xa.array() == xb.array()).all());
}

TEST_CASE("stream regeneration is bit-identical") {
  auto s1 = make_gauss2d(5, 4.0, 0.15, 42);
  auto s2 = make_gauss2d(5, 4.0, 0.15, 42);
  REQUIRE(s1.tasks.size() == s2.tasks.size());
  for (std::size_t i = 0; i < s1.tasks.size(); ++i) {
    CHECK(s1.tasks[i].mean_x == s2.tasks[i].mean_x);
    CHECK(s1.tasks[i].mean_y == s2.tasks[i].mean_y);
  }
  auto g1 = make_glyphs8(10, 0.1, 42);
  auto g2 = make_glyphs8(10, 0.1, 42);
  for (std::size_t i = 0; i < g1.tasks.size(); ++i)
    CHECK((g1.tasks[i].glyph.array() == g2.tasks[i].glyph.array()).all());
  Rng r1 = Rng::stream(42, "data");
  Rng r2 = Rng::stream(42, "data");
  Mat xa = sample_real_values(s1.tasks[1], 16, r1);
  Mat xb = sample_real_values(s2.tasks[1], 16, r2);
  CHECK((xa.array() == xb.array()).all());
}

TEST_CASE("distinct named streams draw effectively independent samples") {
  auto s = make_gauss2d(2, 4.0, 0.15, 31);
  Rng ra = Rng::stream(31, "data");
  Rng rb = Rng::stream(31, "eval");
  std::vector<double> ma, mb;
  for (int rep = 0; rep < 100; ++rep) {
    ma.push_back(sample_real_values(s.tasks[0], 64, ra).col(0).mean());
    mb.push_back(sample_real_values(s.tasks[0], 64, rb).col(0).mean());
  }
  double mean_a = 0, mean_b = 0;
  for (int i = 0; i < 100; ++i) {
    mean_a += ma[static_cast<std::size_t>(i)];
    mean_b += mb[static_cast<std::size_t>(i)];
  }
  mean_a /= 100;
  mean_b /= 100;
  double cov = 0, va = 0, vb = 0;
  for (int i = 0; i < 100; ++i) {
    const double da = ma[static_cast<std::size_t>(i)] - mean_a;
    const double db = mb[static_cast<std::size_t>(i)] - mean_b;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  CHECK(std::abs(cov / std::sqrt(va * vb)) < 0.1);
}

TEST_CASE("default geometry keeps modes far apart relative to sigma") {
  for (int T : {2, 3, 4, 5}) {
    auto s = make_gauss2d(T, 4.0, 0.15, 1);
    double min_dist = 1e300;
    for (std::size_t a = 0; a < s.tasks.size(); ++a)
      for (std::size_t b = a + 1; b < s.tasks.size(); ++b) {
        const double dx = s.tasks[a].mean_x - s.tasks[b].mean_x;
        const double dy = s.tasks[a].mean_y - s.tasks[b].mean_y;
        min_dist = std::min(min_dist, std::hypot(dx, dy));
      }
    CHECK(min_dist > 20.0 * 0.15);
  }
  // ten tasks still leave better than 15 sigma between neighbours
  auto s10 = make_gauss2d(10, 4.0, 0.15, 1);
  const double dx = s10.tasks[0].mean_x - s10.tasks[1].mean_x;
  const double dy = s10.tasks[0].mean_y - s10.tasks[1].mean_y;
  CHECK(std::hypot(dx, dy) > 15.0 * 0.15);
}
