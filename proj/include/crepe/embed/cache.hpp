#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include "crepe/data/scene.hpp"
#include "crepe/embed/encoder.hpp"
#include "crepe/embed/image.hpp"

namespace crepe::embed {

enum class Modality { kImage, kText };

// "img|<scene>|<x>,<y>,<w>,<h>" or "txt|<text>"; box coordinates use
// round-trip precision so distinct boxes never collide.
std::string cache_key(std::string_view scene_id, const data::BoundingBox& box);
std::string cache_key(std::string_view text);

// Keyed store of encoder outputs with a record-oriented binary backing file:
//   magic "CRPEMBC1", u32 version, u32 d,
//   then per record: u32 key length, key bytes, d little-endian float32.
// Only unit-norm encoder outputs are stored.
// Many readers, one writer. With a nonzero capacity the oldest entries are
// evicted first; eviction only costs recomputation.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::size_t dim, std::size_t capacity = 0);

  std::size_t dim() const { return dim_; }
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }

  std::optional<EmbeddingVector> get(const std::string& key) const;
  void put(const std::string& key, const EmbeddingVector& value);
  bool contains(const std::string& key) const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingCache load(const std::filesystem::path& path, std::size_t capacity = 0);
  // Loads when the file exists, otherwise returns an empty cache.
  static EmbeddingCache open(const std::filesystem::path& path, std::size_t dim,
                             std::size_t capacity = 0);

 private:
  std::size_t dim_;
  std::size_t capacity_;
  std::unique_ptr<std::shared_mutex> mutex_ = std::make_unique<std::shared_mutex>();
  std::unordered_map<std::string, EmbeddingVector> entries_;
  std::deque<std::string> order_;
};

// Encoder front-end that serves repeated requests from a cache.
class CachedEncoder {
 public:
  CachedEncoder(const VisionLanguageEncoder& encoder, EmbeddingCache& cache)
      : encoder_(encoder), cache_(cache) {}

  EmbeddingVector text(std::string_view text);
  EmbeddingVector image(const data::Scene& scene, const ImageSource& images,
                        const data::BoundingBox& box);
  // Same, with the scene image already decoded.
  EmbeddingVector image(const data::Scene& scene, const Image& image, const data::BoundingBox& box);

  const VisionLanguageEncoder& encoder() const { return encoder_; }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  const VisionLanguageEncoder& encoder_;
  EmbeddingCache& cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

}  // namespace crepe::embed
