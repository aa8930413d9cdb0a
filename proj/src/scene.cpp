#include "crepe/data/scene.hpp"

#include <cmath>
#include <unordered_set>

#include "crepe/errors.hpp"

namespace crepe::data {

Vocabulary::Vocabulary(VocabKind kind, std::vector<std::string> names)
    : kind_(kind), names_(std::move(names)) {
  index_.reserve(names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], i).second) {
      throw ArgumentError("duplicate vocabulary name '" + names_[i] + "'");
    }
  }
}

const std::string& Vocabulary::name(std::size_t id) const {
  if (id >= names_.size()) {
    throw LookupError("vocabulary id " + std::to_string(id) + " out of range (size " +
                      std::to_string(names_.size()) + ")");
  }
  return names_[id];
}

std::optional<std::size_t> Vocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::size_t Vocabulary::id(std::string_view name) const {
  if (auto found = find(name)) {
    return *found;
  }
  throw LookupError("unknown vocabulary name '" + std::string(name) + "'");
}

std::vector<const Scene*> Dataset::select(const std::vector<std::string>& ids) const {
  std::unordered_map<std::string_view, const Scene*> by_id;
  by_id.reserve(scenes.size());
  for (const auto& s : scenes) {
    by_id.emplace(s.image_id, &s);
  }
  std::vector<const Scene*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw LookupError("split references unknown scene '" + id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

const Scene& Dataset::scene(std::string_view image_id) const {
  for (const auto& s : scenes) {
    if (s.image_id == image_id) {
      return s;
    }
  }
  throw LookupError("unknown scene '" + std::string(image_id) + "'");
}

void validate_scene(const Scene& scene, std::size_t n_objects, std::size_t n_predicates) {
  const std::string where = "scene '" + scene.image_id + "': ";
  if (!(scene.width > 0.0) || !(scene.height > 0.0)) {
    throw ArgumentError(where + "image dimensions must be positive");
  }
  for (std::size_t i = 0; i < scene.entities.size(); ++i) {
    const auto& e = scene.entities[i];
    const auto& b = e.box;
    if (e.label_id >= n_objects) {
      throw ArgumentError(where + "entity " + std::to_string(i) + " label out of range");
    }
    if (!(b.w > 0.0) || !(b.h > 0.0) || !std::isfinite(b.x) || !std::isfinite(b.y)) {
      throw ArgumentError(where + "entity " + std::to_string(i) + " has a degenerate box");
    }
    constexpr double kSlack = 1e-9;
    if (b.x < -kSlack || b.y < -kSlack || b.right() > scene.width + kSlack ||
        b.bottom() > scene.height + kSlack) {
      throw ArgumentError(where + "entity " + std::to_string(i) + " box outside image");
    }
  }
  for (std::size_t i = 0; i < scene.relations.size(); ++i) {
    const auto& r = scene.relations[i];
    if (r.subject_idx >= scene.entities.size() || r.object_idx >= scene.entities.size()) {
      throw ArgumentError(where + "relation " + std::to_string(i) + " entity index out of range");
    }
    if (r.subject_idx == r.object_idx) {
      throw ArgumentError(where + "relation " + std::to_string(i) + " relates an entity to itself");
    }
    if (r.predicate_id >= n_predicates) {
      throw ArgumentError(where + "relation " + std::to_string(i) + " predicate out of range");
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>> ordered_pairs(const Scene& scene) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = scene.entities.size();
  out.reserve(n * (n > 0 ? n - 1 : 0));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < n; ++o) {
      if (s != o) {
        out.emplace_back(s, o);
      }
    }
  }
  return out;
}

}  // namespace crepe::data
