#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace crepe::embed {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// A d-dimensional encoder output. Stored in single precision: this is the
// representation persisted by the embedding cache.
struct EmbeddingVector {
  Eigen::VectorXf values;
  bool normalized = false;

  std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
  Vec as_double() const { return values.cast<double>(); }

  // Casts to float; when `normalize` is set the vector is scaled to unit norm
  // in double precision first.
  static EmbeddingVector from(const Vec& v, bool normalize);

  friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) {
    return a.normalized == b.normalized && a.values.size() == b.values.size() &&
           (a.values.array() == b.values.array()).all();
  }
};

// a.b / (|a||b|); throws ArgumentError on zero vectors or dimension mismatch.
double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b);
double cosine_sim(const Vec& a, const Vec& b);

// Token ids plus their rows in the encoder's token-embedding space.
// Always bounded by start/end markers.
struct TokenSequence {
  std::vector<int> ids;
  Mat embeddings;  // ids.size() x token_dim

  std::size_t size() const { return ids.size(); }
};

// Row-major H x W x C float raster.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.f) {}

  float& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
};

}  // namespace crepe::embed
