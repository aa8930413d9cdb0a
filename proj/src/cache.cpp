#include "crepe/embed/cache.hpp"

#include <cstdio>
#include <fstream>
#include <mutex>

#include "crepe/errors.hpp"
#include "crepe/util/binary_io.hpp"

namespace crepe::embed {
namespace {

constexpr char kMagic[] = "CRPEMBC1";
constexpr std::uint32_t kVersion = 1;

std::string fmt_coord(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string cache_key(std::string_view scene_id, const data::BoundingBox& box) {
  return "img|" + std::string(scene_id) + "|" + fmt_coord(box.x) + "," + fmt_coord(box.y) + "," +
         fmt_coord(box.w) + "," + fmt_coord(box.h);
}

std::string cache_key(std::string_view text) { return "txt|" + std::string(text); }

EmbeddingCache::EmbeddingCache(std::size_t dim, std::size_t capacity)
    : dim_(dim), capacity_(capacity) {
  if (dim == 0) {
    throw ArgumentError("embedding cache dimension must be positive");
  }
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(*mutex_);
  return entries_.size();
}

std::optional<EmbeddingVector> EmbeddingCache::get(const std::string& key) const {
  std::shared_lock lock(*mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool EmbeddingCache::contains(const std::string& key) const {
  std::shared_lock lock(*mutex_);
  return entries_.contains(key);
}

void EmbeddingCache::put(const std::string& key, const EmbeddingVector& value) {
  if (value.dim() != dim_) {
    throw ArgumentError("embedding cache: vector of dimension " + std::to_string(value.dim()) +
                        " does not match cache dimension " + std::to_string(dim_));
  }
  if (!value.normalized) {
    throw ArgumentError("embedding cache only stores unit-norm encoder outputs");
  }
  std::unique_lock lock(*mutex_);
  auto [it, inserted] = entries_.insert_or_assign(key, value);
  if (!inserted) return;
  order_.push_back(key);
  while (capacity_ > 0 && entries_.size() > capacity_) {
    entries_.erase(order_.front());
    order_.pop_front();
  }
}

void EmbeddingCache::save(const std::filesystem::path& path) const {
  std::shared_lock lock(*mutex_);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw BackendError("cannot write embedding cache " + path.string());
    }
    io::write_bytes(out, {kMagic, 8});
    io::write_u32(out, kVersion);
    io::write_u32(out, static_cast<std::uint32_t>(dim_));
    // Insertion order keeps the file deterministic.
    for (const auto& key : order_) {
      const auto& v = entries_.at(key);
      io::write_string(out, key);
      for (Eigen::Index i = 0; i < v.values.size(); ++i) io::write_f32(out, v.values(i));
    }
  }
  std::filesystem::rename(tmp, path);
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path, std::size_t capacity) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw BackendError("cannot open embedding cache " + path.string());
  }
  io::expect_magic(in, {kMagic, 8}, "embedding cache");
  if (io::read_u32(in) != kVersion) {
    throw FormatError("unsupported embedding cache version in " + path.string());
  }
  EmbeddingCache cache(io::read_u32(in), capacity);
  while (in.peek() != std::char_traits<char>::eof()) {
    std::string key = io::read_string(in);
    EmbeddingVector v;
    v.values.resize(static_cast<Eigen::Index>(cache.dim_));
    for (Eigen::Index i = 0; i < v.values.size(); ++i) v.values(i) = io::read_f32(in);
    v.normalized = true;
    cache.put(key, v);
  }
  return cache;
}

EmbeddingCache EmbeddingCache::open(const std::filesystem::path& path, std::size_t dim,
                                    std::size_t capacity) {
  if (!std::filesystem::exists(path)) {
    return EmbeddingCache(dim, capacity);
  }
  EmbeddingCache cache = load(path, capacity);
  if (cache.dim() != dim) {
    throw BackendError("embedding cache " + path.string() + " has dimension " +
                       std::to_string(cache.dim()) + ", expected " + std::to_string(dim));
  }
  return cache;
}

EmbeddingVector CachedEncoder::text(std::string_view text) {
  const std::string key = cache_key(text);
  if (auto hit = cache_.get(key)) {
    ++hits_;
    return *hit;
  }
  ++misses_;
  EmbeddingVector v = encode_text(encoder_, text);
  cache_.put(key, v);
  return v;
}

EmbeddingVector CachedEncoder::image(const data::Scene& scene, const ImageSource& images,
                                     const data::BoundingBox& box) {
  const std::string key = cache_key(scene.image_id, box);
  if (auto hit = cache_.get(key)) {
    ++hits_;
    return *hit;
  }
  ++misses_;
  EmbeddingVector v = encode_image_region(encoder_, images.load(scene), box);
  cache_.put(key, v);
  return v;
}

EmbeddingVector CachedEncoder::image(const data::Scene& scene, const Image& image,
                                     const data::BoundingBox& box) {
  const std::string key = cache_key(scene.image_id, box);
  if (auto hit = cache_.get(key)) {
    ++hits_;
    return *hit;
  }
  ++misses_;
  EmbeddingVector v = encode_image_region(encoder_, image, box);
  cache_.put(key, v);
  return v;
}

}  // namespace crepe::embed
