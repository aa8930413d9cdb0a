#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "crepe/calibration/calibration.hpp"
#include "crepe/errors.hpp"
#include "crepe/util/log.hpp"
#include "support.hpp"

using namespace crepe;
using calibration::Vec;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Vec random_distribution(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Vec v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = e(rng);
  return v / v.sum();
}

}  // namespace

TEST_SUITE("calibration") {
  TEST_CASE("frequency estimation examples") {
    const std::vector<std::string> names = {"a", "b", "c"};
    const Vec uniform = Vec::Constant(3, 1.0 / 3.0);
    const auto u = calibration::estimate_frequencies({uniform, uniform, uniform}, {0, 1, 2}, names);
    for (double b : u.beta) CHECK(b == doctest::Approx(1.0 / 3.0));

    const auto two = calibration::estimate_frequencies(
        {vec({0.8, 0.2}), vec({0.6, 0.4}), vec({0.5, 0.5})}, {0, 0, 1}, {"p1", "p2"});
    CHECK(two.beta[0] == doctest::Approx(0.7));
    CHECK(two.beta[1] == doctest::Approx(0.5));

    const auto oracle = calibration::estimate_frequencies(
        {vec({1, 0, 0}), vec({0, 1, 0}), vec({0, 0, 1})}, {0, 1, 2}, names);
    for (double b : oracle.beta) CHECK(b == 1.0);
  }

  TEST_CASE("a trailing no-relation entry is ignored by estimation") {
    const auto t = calibration::estimate_frequencies({vec({0.6, 0.1, 0.3}), vec({0.2, 0.4, 0.4})},
                                                     {0, 1}, {"a", "b"});
    REQUIRE(t.size() == 2);
    CHECK(t.beta[0] == doctest::Approx(0.6));
    CHECK(t.beta[1] == doctest::Approx(0.4));
  }

  TEST_CASE("classes without validation examples get the floor and a warning") {
    std::vector<std::string> warnings;
    auto previous = log::set_sink([&](log::Level level, std::string_view msg) {
      if (level == log::Level::kWarn) warnings.emplace_back(msg);
    });
    const auto t = calibration::estimate_frequencies({vec({0.7, 0.3})}, {0}, {"seen", "unseen"});
    log::set_sink(previous);
    CHECK(t.beta[1] == calibration::kDefaultFloor);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("unseen") != std::string::npos);
  }

  TEST_CASE("estimation is invariant to validation order") {
    std::mt19937_64 rng(8);
    std::vector<Vec> probs;
    std::vector<std::size_t> labels;
    for (int i = 0; i < 100; ++i) {
      probs.push_back(random_distribution(4, rng));
      labels.push_back(static_cast<std::size_t>(i % 4));
    }
    const auto a = calibration::estimate_frequencies(probs, labels, {"a", "b", "c", "d"});
    std::vector<std::size_t> order(100);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Vec> p2;
    std::vector<std::size_t> l2;
    for (auto i : order) {
      p2.push_back(probs[i]);
      l2.push_back(labels[i]);
    }
    const auto b = calibration::estimate_frequencies(p2, l2, {"a", "b", "c", "d"});
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.beta[k] == doctest::Approx(b.beta[k]).epsilon(1e-14));
  }

  TEST_CASE("adjustment examples") {
    calibration::CalibrationTable t;
    t.class_names = {"a", "b"};
    t.beta = {0.5, 0.25};
    const Vec s = calibration::adjust(vec({0.5, 0.5}), t);
    CHECK(s(0) == doctest::Approx(1.0));
    CHECK(s(1) == doctest::Approx(2.0));

    const Vec with_none = calibration::adjust(vec({0.5, 0.3, 0.2}), t);
    CHECK(with_none(2) == 0.2);

    const auto id = calibration::CalibrationTable::identity({"a", "b", "c"});
    const Vec x = vec({0.2, 0.5, 0.3});
    CHECK((calibration::adjust(x, id) - x).norm() == 0.0);
    CHECK_THROWS_AS(calibration::adjust(vec({0.1, 0.2, 0.3, 0.4, 0.0}), t), ArgumentError);
  }

  TEST_CASE("uniform frequencies preserve the argmax and scores stay finite") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(1e-3, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const Vec p = random_distribution(6, rng);
      calibration::CalibrationTable t;
      t.class_names = {"a", "b", "c", "d", "e", "f"};
      t.beta.assign(6, u(rng));
      const Vec s = calibration::adjust(p, t);
      Eigen::Index a = 0, b = 0;
      p.maxCoeff(&a);
      s.maxCoeff(&b);
      CHECK(a == b);
      CHECK(s.allFinite());
      CHECK(s.minCoeff() >= 0.0);
    }
  }

  TEST_CASE("calibration does not hurt mean per-class recall on a skewed problem") {
    const auto r = testing::skewed_calibration_check(3);
    CHECK(r.calibrated >= r.uncalibrated);
  }

  TEST_CASE("tables round-trip through JSON") {
    const auto dir = testing::scratch_dir("calibration");
    calibration::CalibrationTable t;
    t.class_names = {"on", "has"};
    t.beta = {0.25, 0.125};
    t.provenance = {{"split", "val"}, {"examples", 12}};
    calibration::save(t, dir / "c.json");
    const auto back = calibration::load(dir / "c.json");
    CHECK(back.class_names == t.class_names);
    CHECK(back.beta == t.beta);
    CHECK(back.provenance == t.provenance);
    const auto doc = calibration::to_json(t);
    CHECK(doc["beta"]["on"] == 0.25);
    CHECK(doc["class_order"][1] == "has");
    CHECK_THROWS_AS(calibration::load(dir / "none.json"), DependencyError);
    auto bad = doc;
    bad["beta"]["on"] = 0.0;
    CHECK_THROWS_AS(calibration::from_json(bad), FormatError);
  }
}
