#include "crepe/data/vg_loader.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "crepe/errors.hpp"

namespace crepe::data {
namespace {

using nlohmann::json;

std::string record_name(std::size_t index, const json& record) {
  std::string name = "record " + std::to_string(index);
  if (record.is_object() && record.contains("image_id")) {
    name += " (image_id " + record["image_id"].dump() + ")";
  }
  return name;
}

double number_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key) || !obj[key].is_number()) {
    throw ParseError(where + ": missing or non-numeric field '" + key + "'");
  }
  const double v = obj[key].get<double>();
  if (!std::isfinite(v)) {
    throw ParseError(where + ": non-finite field '" + key + "'");
  }
  return v;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
    throw ParseError(where + ": missing or non-string field '" + key + "'");
  }
  return obj[key].get<std::string>();
}

std::size_t index_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key) || !obj[key].is_number_integer() ||
      obj[key].get<long long>() < 0) {
    throw ParseError(where + ": missing or invalid index field '" + key + "'");
  }
  return obj[key].get<std::size_t>();
}

struct RawObject {
  std::string label;
  BoundingBox box;
};

struct RawRelation {
  std::size_t subject;
  std::size_t object;
  std::string predicate;
};

struct RawScene {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
  std::vector<RawObject> objects;
  std::vector<RawRelation> relations;
  std::optional<std::string> split;
};

RawScene parse_record(std::size_t index, const json& record) {
  const std::string where = record_name(index, record);
  if (!record.is_object()) {
    throw ParseError(where + ": expected an object");
  }
  RawScene scene;
  if (!record.contains("image_id")) {
    throw ParseError(where + ": missing field 'image_id'");
  }
  const auto& id = record["image_id"];
  if (id.is_string()) {
    scene.image_id = id.get<std::string>();
  } else if (id.is_number_integer()) {
    scene.image_id = std::to_string(id.get<long long>());
  } else {
    throw ParseError(where + ": 'image_id' must be a string or integer");
  }
  scene.width = number_field(record, "width", where);
  scene.height = number_field(record, "height", where);
  if (scene.width < 1.0 || scene.height < 1.0) {
    throw ParseError(where + ": image dimensions must be at least 1 pixel");
  }
  if (record.contains("split")) {
    scene.split = string_field(record, "split", where);
  }

  const auto objects = record.value("objects", json::array());
  if (!objects.is_array()) {
    throw ParseError(where + ": 'objects' must be an array");
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string owhere = where + ", object " + std::to_string(i);
    const auto& o = objects[i];
    RawObject raw;
    raw.label = normalize_label(string_field(o, "label", owhere));
    raw.box = {number_field(o, "x", owhere), number_field(o, "y", owhere),
               number_field(o, "w", owhere), number_field(o, "h", owhere)};
    scene.objects.push_back(std::move(raw));
  }

  const auto rels = record.value("relationships", json::array());
  if (!rels.is_array()) {
    throw ParseError(where + ": 'relationships' must be an array");
  }
  for (std::size_t i = 0; i < rels.size(); ++i) {
    const std::string rwhere = where + ", relationship " + std::to_string(i);
    const auto& r = rels[i];
    RawRelation raw{index_field(r, "subject_index", rwhere), index_field(r, "object_index", rwhere),
                    normalize_label(string_field(r, "predicate", rwhere))};
    if (raw.subject >= scene.objects.size() || raw.object >= scene.objects.size()) {
      throw ParseError(rwhere + ": entity index out of range");
    }
    scene.relations.push_back(std::move(raw));
  }
  return scene;
}

// Clamp to the image; boxes that keep less than one pixel per side are dropped.
std::optional<BoundingBox> clamp_box(const BoundingBox& b, double width, double height) {
  const double x0 = std::clamp(b.x, 0.0, width);
  const double y0 = std::clamp(b.y, 0.0, height);
  const double x1 = std::clamp(b.x + b.w, 0.0, width);
  const double y1 = std::clamp(b.y + b.h, 0.0, height);
  if (x1 - x0 < 1.0 || y1 - y0 < 1.0) {
    return std::nullopt;
  }
  return BoundingBox{x0, y0, x1 - x0, y1 - y0};
}

DatasetSplit split_from_file(const std::filesystem::path& path,
                             const std::set<std::string>& known_ids) {
  std::ifstream in(path);
  if (!in) {
    throw IngestionError("cannot open split file " + path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("split file " + path.string() + ": " + e.what());
  }
  DatasetSplit split;
  auto read_list = [&](const char* key, std::vector<std::string>& out) {
    if (!doc.contains(key)) {
      return;
    }
    for (const auto& id : doc[key]) {
      std::string s = id.is_string() ? id.get<std::string>() : id.dump();
      if (!known_ids.contains(s)) {
        throw IngestionError("split file lists unknown scene '" + s + "'");
      }
      out.push_back(std::move(s));
    }
  };
  read_list("train", split.train);
  read_list("val", split.val);
  read_list("test", split.test);
  return split;
}

void check_disjoint(const DatasetSplit& split) {
  std::set<std::string> seen;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (const auto& id : *part) {
      if (!seen.insert(id).second) {
        throw IngestionError("scene '" + id + "' appears in more than one split");
      }
    }
  }
}

}  // namespace

VocabularyPreset vg150_preset() {
  VocabularyPreset p;
  p.objects = {
      "airplane", "animal",   "arm",        "bag",       "banana",     "basket",   "beach",
      "bear",     "bed",      "bench",      "bike",      "bird",       "board",    "boat",
      "book",     "boot",     "bottle",     "bowl",      "box",        "boy",      "branch",
      "building", "bus",      "cabinet",    "cap",       "car",        "cat",      "chair",
      "child",    "clock",    "coat",       "counter",   "cow",        "cup",      "curtain",
      "desk",     "dog",      "door",       "drawer",    "ear",        "elephant", "engine",
      "eye",      "face",     "fence",      "finger",    "flag",       "flower",   "food",
      "fork",     "fruit",    "giraffe",    "girl",      "glass",      "glove",    "guy",
      "hair",     "hand",     "handle",     "hat",       "head",       "helmet",   "hill",
      "horse",    "house",    "jacket",     "jean",      "kid",        "kite",     "lady",
      "lamp",     "laptop",   "leaf",       "leg",       "letter",     "light",    "logo",
      "man",      "men",      "motorcycle", "mountain",  "mouth",      "neck",     "nose",
      "number",   "orange",   "pant",       "paper",     "paw",        "people",   "person",
      "phone",    "pillow",   "pizza",      "plane",     "plant",      "plate",    "player",
      "pole",     "post",     "pot",        "racket",    "railing",    "rock",     "roof",
      "room",     "screen",   "seat",       "sheep",     "shelf",      "shirt",    "shoe",
      "short",    "sidewalk", "sign",       "sink",      "skateboard", "ski",      "skier",
      "sneaker",  "snow",     "sock",       "stand",     "street",     "surfboard", "table",
      "tail",     "tie",      "tile",       "tire",      "toilet",     "towel",    "tower",
      "track",    "train",    "tree",       "truck",     "trunk",      "umbrella", "vase",
      "vegetable", "vehicle", "wave",       "wheel",     "window",     "windshield", "wing",
      "wire",     "woman",    "zebra"};
  p.predicates = {"above",       "across",       "against",     "along",       "and",
                  "at",          "attached to",  "behind",      "belonging to", "between",
                  "carrying",    "covered in",   "covering",    "eating",      "flying in",
                  "for",         "from",         "growing on",  "hanging from", "has",
                  "holding",     "in",           "in front of", "laying on",   "looking at",
                  "lying on",    "made of",      "mounted on",  "near",        "of",
                  "on",          "on back of",   "over",        "painted on",  "parked on",
                  "part of",     "playing",      "riding",      "says",        "sitting on",
                  "standing on", "to",           "under",       "using",       "walking in",
                  "walking on",  "watching",     "wearing",     "wears",       "with"};
  return p;
}

std::string normalize_label(std::string_view label) {
  std::size_t b = 0;
  std::size_t e = label.size();
  while (b < e && std::isspace(static_cast<unsigned char>(label[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(label[e - 1]))) --e;
  std::string out;
  out.reserve(e - b);
  bool prev_space = false;
  for (std::size_t i = b; i < e; ++i) {
    const auto c = static_cast<unsigned char>(label[i]);
    if (std::isspace(c)) {
      if (!prev_space) out.push_back(' ');
      prev_space = true;
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
      prev_space = false;
    }
  }
  return out;
}

Dataset parse_vg_annotations(const json& doc, const SplitSpec& split_spec,
                             const std::optional<VocabularyPreset>& preset) {
  if (!doc.is_array()) {
    throw ParseError("annotation document must be a top-level array of scene records");
  }
  std::vector<RawScene> raw;
  raw.reserve(doc.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    raw.push_back(parse_record(i, doc[i]));
    if (!ids.insert(raw.back().image_id).second) {
      throw ParseError(record_name(i, doc[i]) + ": duplicate image_id");
    }
  }

  Dataset ds;
  if (preset) {
    std::set<std::string> unknown_objects;
    std::set<std::string> unknown_predicates;
    const std::set<std::string> obj(preset->objects.begin(), preset->objects.end());
    const std::set<std::string> pred(preset->predicates.begin(), preset->predicates.end());
    for (const auto& s : raw) {
      for (const auto& o : s.objects) {
        if (!obj.contains(o.label)) unknown_objects.insert(o.label);
      }
      for (const auto& r : s.relations) {
        if (!pred.contains(r.predicate)) unknown_predicates.insert(r.predicate);
      }
    }
    if (!unknown_objects.empty() || !unknown_predicates.empty()) {
      std::ostringstream msg;
      msg << "unknown labels:";
      for (const auto& l : unknown_objects) msg << " object '" << l << "'";
      for (const auto& l : unknown_predicates) msg << " predicate '" << l << "'";
      throw IngestionError(msg.str());
    }
    ds.objects = Vocabulary(VocabKind::kObject, preset->objects);
    ds.predicates = Vocabulary(VocabKind::kPredicate, preset->predicates);
  } else {
    std::set<std::string> obj;
    std::set<std::string> pred;
    for (const auto& s : raw) {
      for (const auto& o : s.objects) obj.insert(o.label);
      for (const auto& r : s.relations) pred.insert(r.predicate);
    }
    ds.objects = Vocabulary(VocabKind::kObject, {obj.begin(), obj.end()});
    ds.predicates = Vocabulary(VocabKind::kPredicate, {pred.begin(), pred.end()});
  }

  ds.scenes.reserve(raw.size());
  for (const auto& r : raw) {
    Scene scene;
    scene.image_id = r.image_id;
    scene.width = r.width;
    scene.height = r.height;
    std::vector<std::optional<std::size_t>> remap(r.objects.size());
    for (std::size_t i = 0; i < r.objects.size(); ++i) {
      if (auto box = clamp_box(r.objects[i].box, r.width, r.height)) {
        remap[i] = scene.entities.size();
        scene.entities.push_back({ds.objects.id(r.objects[i].label), *box});
      }
    }
    for (const auto& rel : r.relations) {
      if (!remap[rel.subject] || !remap[rel.object] || *remap[rel.subject] == *remap[rel.object]) {
        continue;
      }
      scene.relations.push_back(
          {*remap[rel.subject], *remap[rel.object], ds.predicates.id(rel.predicate)});
    }
    validate_scene(scene, ds.objects.size(), ds.predicates.size());
    ds.scenes.push_back(std::move(scene));
  }

  if (split_spec.split_file) {
    ds.split = split_from_file(*split_spec.split_file, ids);
  } else if (std::any_of(raw.begin(), raw.end(), [](const RawScene& s) { return s.split; })) {
    for (const auto& s : raw) {
      const std::string tag = s.split.value_or("train");
      if (tag == "train") {
        ds.split.train.push_back(s.image_id);
      } else if (tag == "val") {
        ds.split.val.push_back(s.image_id);
      } else if (tag == "test") {
        ds.split.test.push_back(s.image_id);
      } else {
        throw ParseError("scene '" + s.image_id + "': unknown split '" + tag + "'");
      }
    }
  } else {
    if (split_spec.train_fraction < 0.0 || split_spec.val_fraction < 0.0 ||
        split_spec.train_fraction + split_spec.val_fraction > 1.0) {
      throw ArgumentError("split fractions must be nonnegative and sum to at most 1");
    }
    const std::size_t n = raw.size();
    const auto n_train = static_cast<std::size_t>(std::floor(split_spec.train_fraction * n));
    const auto n_val = std::min(
        n - n_train, static_cast<std::size_t>(std::floor(split_spec.val_fraction * n)));
    for (std::size_t i = 0; i < n; ++i) {
      auto& part = i < n_train ? ds.split.train
                               : (i < n_train + n_val ? ds.split.val : ds.split.test);
      part.push_back(raw[i].image_id);
    }
  }
  check_disjoint(ds.split);
  return ds;
}

Dataset load_vg_annotations(const std::filesystem::path& annotation_path,
                            const SplitSpec& split_spec,
                            const std::optional<VocabularyPreset>& preset) {
  std::ifstream in(annotation_path);
  if (!in) {
    throw IngestionError("cannot open annotation file " + annotation_path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(annotation_path.string() + ": " + e.what());
  }
  return parse_vg_annotations(doc, split_spec, preset);
}

json to_annotation_json(const Dataset& dataset) {
  std::map<std::string, std::string> split_of;
  for (const auto& id : dataset.split.train) split_of[id] = "train";
  for (const auto& id : dataset.split.val) split_of[id] = "val";
  for (const auto& id : dataset.split.test) split_of[id] = "test";

  json doc = json::array();
  for (const auto& s : dataset.scenes) {
    json rec;
    rec["image_id"] = s.image_id;
    rec["width"] = s.width;
    rec["height"] = s.height;
    json objects = json::array();
    for (const auto& e : s.entities) {
      objects.push_back({{"label", dataset.objects.name(e.label_id)},
                         {"x", e.box.x},
                         {"y", e.box.y},
                         {"w", e.box.w},
                         {"h", e.box.h}});
    }
    rec["objects"] = std::move(objects);
    json rels = json::array();
    for (const auto& r : s.relations) {
      rels.push_back({{"subject_index", r.subject_idx},
                      {"object_index", r.object_idx},
                      {"predicate", dataset.predicates.name(r.predicate_id)}});
    }
    rec["relationships"] = std::move(rels);
    if (auto it = split_of.find(s.image_id); it != split_of.end()) {
      rec["split"] = it->second;
    }
    doc.push_back(std::move(rec));
  }
  return doc;
}

void save_vg_annotations(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IngestionError("cannot write annotation file " + path.string());
  }
  out << to_annotation_json(dataset).dump(1) << '\n';
}

}  // namespace crepe::data
