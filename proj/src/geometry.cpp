#include "crepe/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "crepe/errors.hpp"

namespace crepe::geometry {
namespace {

void require_box(const BoundingBox& b, const char* what) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw ArgumentError(std::string(what) + " box must have positive width and height");
  }
}

void require_image(const ImageDims& image) {
  if (!(image.width > 0.0) || !(image.height > 0.0)) {
    throw ArgumentError("image dimensions must be positive");
  }
}

}  // namespace

std::array<double, LocationFeature::kDim> LocationFeature::concat() const {
  std::array<double, kDim> out{};
  std::copy(subject_vec.begin(), subject_vec.end(), out.begin());
  std::copy(object_vec.begin(), object_vec.end(), out.begin() + kEntityDim);
  std::copy(pair_vec.begin(), pair_vec.end(), out.begin() + 2 * kEntityDim);
  return out;
}

BoundingBox union_box(const BoundingBox& a, const BoundingBox& b) {
  const double x0 = std::min(a.x, b.x);
  const double y0 = std::min(a.y, b.y);
  const double x1 = std::max(a.right(), b.right());
  const double y1 = std::max(a.bottom(), b.bottom());
  return {x0, y0, x1 - x0, y1 - y0};
}

std::array<double, LocationFeature::kEntityDim> encode_entity_location(const BoundingBox& box,
                                                                       const ImageDims& image) {
  require_box(box, "entity");
  require_image(image);
  return {box.x / box.w, box.y / box.h, box.right() / image.width, box.bottom() / image.height,
          box.area() / image.area()};
}

std::array<double, LocationFeature::kPairDim> encode_pair_location(const BoundingBox& s,
                                                                   const BoundingBox& o,
                                                                   const ImageDims& image) {
  require_box(s, "subject");
  require_box(o, "object");
  require_image(image);
  return {(s.x - o.x) / o.w,      (s.y - o.y) / o.h,      std::log(s.w / o.w),
          std::log(s.h / o.h),    (o.x - s.x) / s.w,      (o.y - s.y) / s.h,
          std::log(o.w / s.w),    std::log(o.h / s.h),    union_box(s, o).area() / image.area()};
}

LocationFeature location_feature(const BoundingBox& s, const BoundingBox& o,
                                 const ImageDims& image) {
  return {encode_entity_location(s, image), encode_entity_location(o, image),
          encode_pair_location(s, o, image)};
}

}  // namespace crepe::geometry
