#include <doctest.h>

#include <cmath>
#include <random>

#include "crepe/errors.hpp"
#include "crepe/geometry.hpp"

using namespace crepe;
using geometry::BoundingBox;
using geometry::ImageDims;

namespace {

BoundingBox random_box(std::mt19937_64& rng, double W, double H) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = 1.0 + u(rng) * (W - 1.0);
  const double h = 1.0 + u(rng) * (H - 1.0);
  return {u(rng) * (W - w), u(rng) * (H - h), w, h};
}

bool same(const BoundingBox& a, const BoundingBox& b) {
  return a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("union box examples") {
    CHECK(same(geometry::union_box({0, 0, 10, 10}, {5, 5, 10, 10}), {0, 0, 15, 15}));
    CHECK(same(geometry::union_box({0, 0, 20, 20}, {5, 5, 3, 3}), {0, 0, 20, 20}));
    CHECK(same(geometry::union_box({0, 0, 2, 2}, {10, 10, 2, 2}), {0, 0, 12, 12}));
  }

  TEST_CASE("union box is commutative, associative and idempotent") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
      const auto a = random_box(rng, 100, 80);
      const auto b = random_box(rng, 100, 80);
      const auto c = random_box(rng, 100, 80);
      CHECK(same(geometry::union_box(a, b), geometry::union_box(b, a)));
      const auto left = geometry::union_box(geometry::union_box(a, b), c);
      const auto right = geometry::union_box(a, geometry::union_box(b, c));
      CHECK(left.x == right.x);
      CHECK(left.y == right.y);
      CHECK(left.right() == doctest::Approx(right.right()).epsilon(1e-12));
      CHECK(left.bottom() == doctest::Approx(right.bottom()).epsilon(1e-12));
      const auto self = geometry::union_box(a, a);
      CHECK(self.x == a.x);
      CHECK(self.y == a.y);
      CHECK(self.w == doctest::Approx(a.w).epsilon(1e-12));
      CHECK(self.h == doctest::Approx(a.h).epsilon(1e-12));
    }
  }

  TEST_CASE("entity location examples") {
    const auto v = geometry::encode_entity_location({20, 30, 40, 60}, {200, 200});
    const std::array<double, 5> want = {0.5, 0.5, 0.3, 0.45, 0.06};
    for (std::size_t i = 0; i < 5; ++i) CHECK(v[i] == doctest::Approx(want[i]).epsilon(1e-12));

    const auto full = geometry::encode_entity_location({0, 0, 64, 48}, {64, 48});
    CHECK(full == std::array<double, 5>{0, 0, 1, 1, 1});

    const auto origin = geometry::encode_entity_location({0, 0, 7, 9}, {50, 50});
    CHECK(origin[0] == 0.0);
    CHECK(origin[1] == 0.0);
  }

  TEST_CASE("pair location examples") {
    const auto same_box = geometry::encode_pair_location({10, 10, 20, 20}, {10, 10, 20, 20}, {100, 100});
    for (std::size_t i = 0; i < 8; ++i) CHECK(same_box[i] == 0.0);
    CHECK(same_box[8] == doctest::Approx(0.04).epsilon(1e-12));

    const auto v = geometry::encode_pair_location({0, 0, 10, 10}, {10, 0, 20, 10}, {100, 50});
    const double l2 = std::log(2.0);
    const std::array<double, 9> want = {-0.5, 0, -l2, 0, 1, 0, l2, 0, 0.06};
    for (std::size_t i = 0; i < 9; ++i) CHECK(v[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  TEST_CASE("swapping subject and object permutes the pair terms") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
      const auto s = random_box(rng, 120, 90);
      const auto o = random_box(rng, 120, 90);
      const auto a = geometry::encode_pair_location(s, o, {120, 90});
      const auto b = geometry::encode_pair_location(o, s, {120, 90});
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(b[k] == doctest::Approx(a[k + 4]).epsilon(1e-12));
        CHECK(b[k + 4] == doctest::Approx(a[k]).epsilon(1e-12));
      }
      CHECK(b[2] == doctest::Approx(-a[2]).epsilon(1e-12));
      CHECK(b[3] == doctest::Approx(-a[3]).epsilon(1e-12));
      CHECK(b[8] == a[8]);
      for (double x : a) CHECK(std::isfinite(x));
    }
  }

  TEST_CASE("location feature concatenates its parts") {
    const BoundingBox s{0, 0, 10, 10}, o{10, 0, 20, 10};
    const ImageDims img{100, 50};
    const auto f = geometry::location_feature(s, o, img);
    const auto c = f.concat();
    REQUIRE(c.size() == 19);
    const auto es = geometry::encode_entity_location(s, img);
    const auto eo = geometry::encode_entity_location(o, img);
    const auto p = geometry::encode_pair_location(s, o, img);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(c[i] == es[i]);
      CHECK(c[5 + i] == eo[i]);
    }
    for (std::size_t i = 0; i < 9; ++i) CHECK(c[10 + i] == p[i]);
  }

  TEST_CASE("degenerate boxes are rejected") {
    CHECK_THROWS_AS(geometry::encode_entity_location({0, 0, 0, 5}, {10, 10}), ArgumentError);
    CHECK_THROWS_AS(geometry::encode_pair_location({0, 0, 5, 5}, {0, 0, 5, 0}, {10, 10}),
                    ArgumentError);
    CHECK_THROWS_AS(geometry::encode_entity_location({0, 0, 5, 5}, {0, 10}), ArgumentError);
  }
}
