#include <doctest.h>

#include <cmath>
#include <random>

#include "crepe/embed/cache.hpp"
#include "crepe/embed/image.hpp"
#include "crepe/embed/retrieval.hpp"
#include "crepe/errors.hpp"
#include "support.hpp"

using namespace crepe;
using embed::EmbeddingVector;
using embed::Vec;

namespace {

EmbeddingVector unit(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return EmbeddingVector::from(v, true);
}

data::TripletVocabulary hand_vocab(const std::vector<EmbeddingVector>& rows) {
  data::TripletVocabulary v;
  v.embeddings.resize(static_cast<Eigen::Index>(rows.size()), rows.front().values.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v.entries.push_back({i, 0, 0});
    v.texts.push_back("t" + std::to_string(i));
    v.embeddings.row(static_cast<Eigen::Index>(i)) = rows[i].values;
  }
  return v;
}

embed::Image noise_image(int w, int h, int c, std::uint64_t seed) {
  embed::Image img(w, h, c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  for (auto& x : img.data) x = n(rng);
  return img;
}

}  // namespace

TEST_SUITE("embed-backend") {
  TEST_CASE("cosine similarity examples") {
    CHECK(embed::cosine_sim(Vec::Unit(2, 0), Vec::Unit(2, 1)) == doctest::Approx(0.0));
    CHECK(embed::cosine_sim(Vec::Ones(3), Vec::Constant(3, 2.0)) == doctest::Approx(1.0));
    CHECK(embed::cosine_sim(Vec::Ones(3), Vec::Constant(3, -5.0)) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(embed::cosine_sim(Vec::Zero(3), Vec::Ones(3)), ArgumentError);
    CHECK_THROWS_AS(embed::cosine_sim(Vec::Ones(2), Vec::Ones(3)), ArgumentError);
  }

  TEST_CASE("text encoding is deterministic and unit norm") {
    const auto enc = testing::tiny_encoder();
    const auto a = embed::encode_text(enc, "man riding horse");
    const auto b = embed::encode_text(enc, "man riding horse");
    const auto c = embed::encode_text(enc, "man near horse");
    CHECK(a == b);
    CHECK(a.normalized);
    CHECK(a.as_double().norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_FALSE(a == c);
    // An encoder rebuilt from the same seed produces the same vectors.
    CHECK(embed::encode_text(testing::tiny_encoder(), "man riding horse") == a);
  }

  TEST_CASE("token sequences are bounded and limited") {
    const auto enc = testing::tiny_encoder();
    const auto seq = embed::tokenize_sequence(enc, "dog on grass");
    REQUIRE(seq.size() == 5);
    CHECK(seq.ids.front() == enc.sos_token());
    CHECK(seq.ids.back() == enc.eos_token());
    CHECK(seq.embeddings.rows() == 5);
    CHECK(seq.embeddings.cols() == static_cast<Eigen::Index>(enc.token_dim()));

    std::string longest;
    for (int i = 0; i < 80; ++i) longest += "word ";
    CHECK_THROWS_AS(embed::tokenize_sequence(enc, longest), TokenLimitError);
  }

  TEST_CASE("explicit token path matches plain text encoding") {
    const auto enc = testing::tiny_encoder();
    for (const char* t : {"dog on grass", "a", "person wearing a red hat"}) {
      const auto seq = embed::tokenize_sequence(enc, t);
      CHECK(embed::encode_token_sequence(enc, seq) == embed::encode_text(enc, t));
    }
  }

  TEST_CASE("text tower input gradients match finite differences") {
    const auto enc = testing::tiny_encoder();
    auto seq = embed::tokenize_sequence(enc, "cat under table");
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    Vec w(static_cast<Eigen::Index>(enc.embed_dim()));
    for (auto& x : w) x = n(rng);
    // Lift the inputs off the tiny init scale so layer norms see real variation.
    seq.embeddings *= 25.0;

    std::unique_ptr<embed::TextTrace> trace;
    enc.text_forward(seq.embeddings, &trace);
    const embed::Mat grad = enc.text_backward(*trace, w);
    auto loss = [&] { return w.dot(enc.text_forward(seq.embeddings, nullptr)); };

    std::size_t checked = 0;
    double worst = 0.0;
    std::uniform_int_distribution<Eigen::Index> row(0, seq.embeddings.rows() - 1);
    std::uniform_int_distribution<Eigen::Index> col(0, seq.embeddings.cols() - 1);
    for (int i = 0; i < 16; ++i) {
      const Eigen::Index r = row(rng), c = col(rng);
      const double numeric = testing::central_difference(&seq.embeddings(r, c), loss);
      worst = std::max(worst, testing::relative_error(grad(r, c), numeric));
      ++checked;
    }
    CHECK(checked == 16);
    CHECK(worst < 1e-4);
  }

  TEST_CASE("image regions encode to unit vectors and reject empty crops") {
    const auto enc = testing::tiny_encoder();
    const auto img = noise_image(20, 16, 3, 1);
    const auto e = embed::encode_image_region(enc, img, {2, 3, 10, 8});
    CHECK(e.normalized);
    CHECK(e.as_double().norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(embed::encode_image_region(enc, img, {2, 3, 10, 8}) == e);
    CHECK_THROWS_AS(embed::encode_image_region(enc, img, {5, 5, 0.2, 0.2}), ArgumentError);
    CHECK_THROWS_AS(embed::encode_image_region(enc, noise_image(8, 8, 4, 1), {0, 0, 4, 4}),
                    ArgumentError);
  }

  TEST_CASE("grid pooling averages cells") {
    embed::Image img(4, 4, 1);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) img.at(x, y, 0) = static_cast<float>(x < 2 ? 1 : 3);
    }
    const Vec p = embed::grid_pool(img, {0, 0, 4, 4}, 2);
    REQUIRE(p.size() == 4);
    CHECK(p(0) == doctest::Approx(1.0));
    CHECK(p(1) == doctest::Approx(3.0));
    CHECK(p(2) == doctest::Approx(1.0));
    CHECK(p(3) == doctest::Approx(3.0));
  }

  TEST_CASE("cache keys separate modalities and boxes") {
    CHECK(embed::cache_key("dog") == "txt|dog");
    CHECK(embed::cache_key("s1", {1, 2, 3, 4}) != embed::cache_key("s1", {1, 2, 3, 4.0000001}));
    CHECK(embed::cache_key("s1", {1, 2, 3, 4}) != embed::cache_key("s2", {1, 2, 3, 4}));
    CHECK(embed::cache_key("s1", {1, 2, 3, 4}).rfind("img|", 0) == 0);
  }

  TEST_CASE("cache round-trips bit-exactly") {
    const auto dir = testing::scratch_dir("cache");
    embed::EmbeddingCache cache(4);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::pair<std::string, EmbeddingVector>> stored;
    for (int i = 0; i < 50; ++i) {
      Vec v(4);
      for (auto& x : v) x = n(rng);
      stored.emplace_back("txt|item" + std::to_string(i), EmbeddingVector::from(v, true));
      cache.put(stored.back().first, stored.back().second);
    }
    cache.save(dir / "c.embc");
    const auto loaded = embed::EmbeddingCache::load(dir / "c.embc");
    CHECK(loaded.size() == 50);
    for (const auto& [k, v] : stored) {
      const auto got = loaded.get(k);
      REQUIRE(got.has_value());
      CHECK(*got == v);
    }
    CHECK_FALSE(loaded.get("txt|missing").has_value());
    CHECK_THROWS_AS(cache.put("txt|bad", EmbeddingVector::from(Vec::Ones(4), false)),
                    ArgumentError);
    CHECK_THROWS_AS(cache.put("txt|bad", unit({1, 0})), ArgumentError);
    CHECK_THROWS_AS(embed::EmbeddingCache::open(dir / "c.embc", 8), BackendError);
    CHECK(embed::EmbeddingCache::open(dir / "none.embc", 4).size() == 0);
  }

  TEST_CASE("bounded cache evicts oldest entries first") {
    embed::EmbeddingCache cache(2, 2);
    cache.put("a", unit({1, 0}));
    cache.put("b", unit({0, 1}));
    cache.put("c", unit({1, 1}));
    CHECK(cache.size() == 2);
    CHECK_FALSE(cache.contains("a"));
    CHECK(cache.contains("b"));
    CHECK(cache.contains("c"));
  }

  TEST_CASE("cached encoder serves hits identical to fresh encodings") {
    const auto enc = testing::tiny_encoder();
    embed::EmbeddingCache cache(enc.embed_dim());
    embed::CachedEncoder cached(enc, cache);
    const auto first = cached.text("dog on grass");
    const auto second = cached.text("dog on grass");
    CHECK(cached.misses() == 1);
    CHECK(cached.hits() == 1);
    CHECK(first == second);
    CHECK(first == embed::encode_text(enc, "dog on grass"));

    const auto scene = testing::make_scene("s", 20, 16, {}, {});
    const auto img = noise_image(20, 16, 3, 2);
    const auto a = cached.image(scene, img, {1, 1, 8, 8});
    CHECK(cached.image(scene, img, {1, 1, 8, 8}) == a);
    CHECK(a == embed::encode_image_region(enc, img, {1, 1, 8, 8}));
  }

  TEST_CASE("retrieval examples") {
    const auto vocab = hand_vocab({unit({1, 0}), unit({0, 1}), unit({1, 1}), unit({-1, 0})});
    const auto top = embed::retrieve_pseudo_labels(unit({1, 0.1}), vocab, 2);
    REQUIRE(top.size() == 2);
    CHECK(top[0].index == 0);
    CHECK(top[1].index == 2);
    CHECK(top[0].similarity >= top[1].similarity);
    CHECK(top[0].text == "t0");

    // Exact ties go to the lower vocabulary index.
    const auto tied = hand_vocab({unit({0, 1}), unit({1, 0}), unit({1, 0})});
    const auto t = embed::retrieve_pseudo_labels(unit({1, 0}), tied, 3);
    CHECK(t[0].index == 1);
    CHECK(t[1].index == 2);
    CHECK(t[2].index == 0);

    CHECK(embed::retrieve_pseudo_labels(unit({1, 0}), vocab, 10).size() == 4);
    CHECK_THROWS_AS(embed::retrieve_pseudo_labels(unit({1, 0}), vocab, 0), ArgumentError);
    CHECK_THROWS_AS(embed::retrieve_pseudo_labels(unit({1, 0}), data::TripletVocabulary{}, 1),
                    RetrievalError);
  }

  TEST_CASE("top-k lists are prefixes of each other and brute-force sorted") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<EmbeddingVector> rows;
    for (int i = 0; i < 60; ++i) {
      Vec v(6);
      for (auto& x : v) x = n(rng);
      rows.push_back(EmbeddingVector::from(v, true));
    }
    const auto vocab = hand_vocab(rows);
    for (int q = 0; q < 20; ++q) {
      Vec v(6);
      for (auto& x : v) x = n(rng);
      const auto query = EmbeddingVector::from(v, true);
      const auto all = embed::retrieve_pseudo_labels(query, vocab, vocab.size());
      for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].similarity >= all[i].similarity);
      for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i].similarity ==
              doctest::Approx(embed::cosine_sim(query, rows[all[i].index])).epsilon(1e-6));
      }
      for (std::size_t k : {1u, 3u, 10u}) {
        const auto top = embed::retrieve_pseudo_labels(query, vocab, k);
        REQUIRE(top.size() == k);
        for (std::size_t i = 0; i < k; ++i) CHECK(top[i].index == all[i].index);
      }
    }
  }
}
