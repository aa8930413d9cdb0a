#pragma once

#include <array>

#include "crepe/data/scene.hpp"

namespace crepe::geometry {

using data::BoundingBox;

struct ImageDims {
  double width = 0.0;
  double height = 0.0;

  double area() const { return width * height; }
  static ImageDims of(const data::Scene& scene) { return {scene.width, scene.height}; }
};

// Spatial encoding of an ordered (subject, object) pair:
// 5 subject terms, 5 object terms, 9 pairwise terms.
struct LocationFeature {
  static constexpr std::size_t kEntityDim = 5;
  static constexpr std::size_t kPairDim = 9;
  static constexpr std::size_t kDim = 2 * kEntityDim + kPairDim;

  std::array<double, kEntityDim> subject_vec{};
  std::array<double, kEntityDim> object_vec{};
  std::array<double, kPairDim> pair_vec{};

  std::array<double, kDim> concat() const;
};

// Smallest axis-aligned box containing both.
BoundingBox union_box(const BoundingBox& a, const BoundingBox& b);

// (x/w, y/h, (x+w)/W, (y+h)/H, A/A_I) with (x, y) the top-left corner.
std::array<double, LocationFeature::kEntityDim> encode_entity_location(const BoundingBox& box,
                                                                       const ImageDims& image);

// Relative offsets, log size ratios in both directions, and the union area fraction.
std::array<double, LocationFeature::kPairDim> encode_pair_location(const BoundingBox& s,
                                                                   const BoundingBox& o,
                                                                   const ImageDims& image);

LocationFeature location_feature(const BoundingBox& s, const BoundingBox& o,
                                 const ImageDims& image);

}  // namespace crepe::geometry
