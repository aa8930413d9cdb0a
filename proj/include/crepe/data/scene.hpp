#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace crepe::data {

// Axis-aligned box in pixels; (x, y) is the top-left corner.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Entity {
  std::size_t label_id = 0;
  BoundingBox box;

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct RelationInstance {
  std::size_t subject_idx = 0;
  std::size_t object_idx = 0;
  std::size_t predicate_id = 0;

  friend bool operator==(const RelationInstance&, const RelationInstance&) = default;
};

struct Scene {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
  std::vector<Entity> entities;
  std::vector<RelationInstance> relations;

  double area() const { return width * height; }

  friend bool operator==(const Scene&, const Scene&) = default;
};

enum class VocabKind { kObject, kPredicate };

// Ordered list of unique names; the position of a name is its id.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(VocabKind kind, std::vector<std::string> names);

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t id) const;
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t id(std::string_view name) const;  // throws LookupError

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.kind_ == b.kind_ && a.names_ == b.names_;
  }

 private:
  VocabKind kind_ = VocabKind::kObject;
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct Dataset {
  std::vector<Scene> scenes;
  Vocabulary objects{VocabKind::kObject, {}};
  Vocabulary predicates{VocabKind::kPredicate, {}};
  DatasetSplit split;

  // Scenes whose ids are listed in `ids`, in the order of `ids`.
  std::vector<const Scene*> select(const std::vector<std::string>& ids) const;
  const Scene& scene(std::string_view image_id) const;  // throws LookupError

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.scenes == b.scenes && a.objects == b.objects && a.predicates == b.predicates &&
           a.split == b.split;
  }
};

// Throws ArgumentError naming the first violated invariant.
void validate_scene(const Scene& scene, std::size_t n_objects, std::size_t n_predicates);

// Every ordered pair (s, o), s != o, of a scene's entities, row-major in s.
std::vector<std::pair<std::size_t, std::size_t>> ordered_pairs(const Scene& scene);

}  // namespace crepe::data
