#include "crepe/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "crepe/errors.hpp"

namespace crepe::data {
namespace {

Eigen::MatrixXd gaussian_rows(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Eigen::MatrixXd m(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      m(r, c) = normal(rng);
    }
  }
  return m;
}

std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(k, n));
  std::sort(all.begin(), all.end());
  return all;
}

BoundingBox fit_in(BoundingBox b, double x0, double y0, double x1, double y1) {
  b.w = std::clamp(b.w, 1.0, x1 - x0);
  b.h = std::clamp(b.h, 1.0, y1 - y0);
  b.x = std::clamp(b.x, x0, x1 - b.w);
  b.y = std::clamp(b.y, y0, y1 - b.h);
  return b;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : salt) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return mix_seed(seed, h);
}

std::vector<std::string> synthetic_names(const char* prefix, std::size_t n) {
  int width = 2;
  for (std::size_t m = n > 0 ? n - 1 : 0; m >= 100; m /= 10) ++width;
  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string digits = std::to_string(i);
    if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
    names.push_back(prefix + digits);
  }
  return names;
}

void validate(const SyntheticConfig& c) {
  if (c.n_predicates < 2) {
    throw ArgumentError("synthetic dataset needs at least 2 predicates");
  }
  if (c.n_objects < 2) {
    throw ArgumentError("synthetic dataset needs at least 2 object classes");
  }
  if (!c.skew.empty()) {
    if (c.skew.size() != c.n_predicates) {
      throw ArgumentError("skew must have one weight per predicate");
    }
    double total = 0.0;
    for (double w : c.skew) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw ArgumentError("skew weights must be finite and nonnegative");
      }
      total += w;
    }
    if (total <= 0.0) {
      throw ArgumentError("skew weights must not all be zero");
    }
  }
  if (c.min_relations > c.max_relations || c.max_relations == 0) {
    throw ArgumentError("relation count range is empty");
  }
  if (c.planted_dim == 0 || c.subjects_per_predicate == 0 || c.objects_per_predicate == 0) {
    throw ArgumentError("planted dimensions and class counts must be positive");
  }
  if (!(c.layout_jitter >= 0.0) || !std::isfinite(c.layout_jitter)) {
    throw ArgumentError("layout jitter must be finite and nonnegative");
  }
  if (!(c.image_size >= 16.0)) {
    throw ArgumentError("synthetic image size must be at least 16 pixels");
  }
}

PlantedStructure make_planted_structure(const SyntheticConfig& config) {
  validate(config);
  std::mt19937_64 rng(mix_seed(config.seed, "planted"));
  PlantedStructure p;
  p.dim = config.planted_dim;
  p.seed = config.seed;
  p.object_vectors = gaussian_rows(config.n_objects, config.planted_dim, rng);
  p.predicate_offsets = gaussian_rows(config.n_predicates, config.planted_dim, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < config.n_predicates; ++k) {
    p.subject_classes.push_back(random_subset(config.n_objects, config.subjects_per_predicate, rng));
    p.object_classes.push_back(random_subset(config.n_objects, config.objects_per_predicate, rng));
    LayoutPrior layout;
    layout.angle = 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.3 * unit(rng)) /
                   static_cast<double>(config.n_predicates);
    layout.distance = 0.9 + 0.8 * unit(rng);
    layout.size_ratio = 0.6 + 0.8 * unit(rng);
    p.layouts.push_back(layout);
  }
  return p;
}

Dataset sample_scenes(const PlantedStructure& planted, const SyntheticConfig& config,
                      std::uint64_t seed) {
  validate(config);
  if (planted.n_objects() != config.n_objects || planted.n_predicates() != config.n_predicates) {
    throw ArgumentError("planted structure does not match the synthetic configuration");
  }
  std::mt19937_64 rng(mix_seed(seed, "scenes"));
  std::vector<double> weights = config.skew;
  if (weights.empty()) weights.assign(config.n_predicates, 1.0);
  std::discrete_distribution<std::size_t> pick_predicate(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> pick_count(config.min_relations,
                                                        config.max_relations);
  std::uniform_int_distribution<std::size_t> pick_object(0, config.n_objects - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.15);
  std::normal_distribution<double> standard(0.0, 1.0);

  Dataset ds;
  ds.objects = Vocabulary(VocabKind::kObject, synthetic_names("obj", config.n_objects));
  ds.predicates = Vocabulary(VocabKind::kPredicate, synthetic_names("pred", config.n_predicates));

  const double size = config.image_size;
  const std::vector<std::string> ids = synthetic_names("img", config.n_scenes);
  for (std::size_t n = 0; n < config.n_scenes; ++n) {
    Scene scene;
    scene.image_id = ids[n];
    scene.width = size;
    scene.height = size;
    const std::size_t n_rel = pick_count(rng);
    const std::size_t n_tiles = n_rel + config.distractors;
    const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_tiles))));
    const double tile = size / static_cast<double>(grid);
    std::vector<std::size_t> tiles(grid * grid);
    std::iota(tiles.begin(), tiles.end(), 0);
    std::shuffle(tiles.begin(), tiles.end(), rng);

    for (std::size_t t = 0; t < n_tiles; ++t) {
      const double tx = static_cast<double>(tiles[t] % grid) * tile;
      const double ty = static_cast<double>(tiles[t] / grid) * tile;
      if (t >= n_rel) {
        const double side = tile * (0.25 + 0.2 * unit(rng));
        BoundingBox b{tx + unit(rng) * (tile - side), ty + unit(rng) * (tile - side), side,
                      side * (0.8 + 0.4 * unit(rng))};
        scene.entities.push_back({pick_object(rng), fit_in(b, tx, ty, tx + tile, ty + tile)});
        continue;
      }
      const std::size_t k = pick_predicate(rng);
      const auto& subj_classes = planted.subject_classes[k];
      const auto& obj_classes = planted.object_classes[k];
      const std::size_t s_label = subj_classes[rng() % subj_classes.size()];
      const std::size_t o_label = obj_classes[rng() % obj_classes.size()];
      const LayoutPrior& lay = planted.layouts[k];

      const double s_side = tile * (0.22 + 0.08 * unit(rng));
      const double o_side = std::min(s_side * lay.size_ratio, tile * 0.4);
      const double angle = lay.angle + config.layout_jitter * standard(rng);
      const double dist = 0.5 * (s_side + o_side) * lay.distance * (1.0 + 0.5 * jitter(rng));
      const double cx = tx + 0.5 * tile;
      const double cy = ty + 0.5 * tile;
      const double dx = dist * std::cos(angle);
      const double dy = dist * std::sin(angle);
      BoundingBox sb{cx - 0.5 * dx - 0.5 * s_side, cy - 0.5 * dy - 0.5 * s_side, s_side, s_side};
      BoundingBox ob{cx + 0.5 * dx - 0.5 * o_side, cy + 0.5 * dy - 0.5 * o_side, o_side, o_side};
      const std::size_t si = scene.entities.size();
      scene.entities.push_back({s_label, fit_in(sb, tx, ty, tx + tile, ty + tile)});
      scene.entities.push_back({o_label, fit_in(ob, tx, ty, tx + tile, ty + tile)});
      scene.relations.push_back({si, si + 1, k});
    }
    validate_scene(scene, config.n_objects, config.n_predicates);
    ds.scenes.push_back(std::move(scene));
  }

  const std::size_t n_train = static_cast<std::size_t>(config.train_fraction * config.n_scenes);
  const std::size_t n_val = std::min(
      config.n_scenes - n_train, static_cast<std::size_t>(config.val_fraction * config.n_scenes));
  for (std::size_t i = 0; i < config.n_scenes; ++i) {
    auto& part = i < n_train ? ds.split.train : (i < n_train + n_val ? ds.split.val : ds.split.test);
    part.push_back(ds.scenes[i].image_id);
  }
  return ds;
}

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& config) {
  SyntheticDataset out;
  out.planted = make_planted_structure(config);
  out.dataset = sample_scenes(out.planted, config, config.seed);
  return out;
}

PlantedTriple planted_embeddings(const PlantedStructure& planted, std::size_t subject_label,
                                 std::size_t object_label, std::optional<std::size_t> predicate,
                                 double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, noise);
  PlantedTriple t;
  t.subject = planted.object_vectors.row(static_cast<Eigen::Index>(subject_label)).transpose();
  t.object = planted.object_vectors.row(static_cast<Eigen::Index>(object_label)).transpose();
  t.uni = t.subject + t.object;
  if (predicate) {
    t.uni += planted.predicate_offsets.row(static_cast<Eigen::Index>(*predicate)).transpose();
  }
  if (noise > 0.0) {
    for (Eigen::Index i = 0; i < t.uni.size(); ++i) t.uni(i) += normal(rng);
  }
  return t;
}

nlohmann::json to_json(const PlantedStructure& p) {
  auto rows = [](const Eigen::MatrixXd& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
      out.push_back(row);
    }
    return out;
  };
  nlohmann::json layouts = nlohmann::json::array();
  for (const auto& l : p.layouts) {
    layouts.push_back({{"angle", l.angle}, {"distance", l.distance}, {"size_ratio", l.size_ratio}});
  }
  return {{"dim", p.dim},
          {"seed", p.seed},
          {"object_vectors", rows(p.object_vectors)},
          {"predicate_offsets", rows(p.predicate_offsets)},
          {"subject_classes", p.subject_classes},
          {"object_classes", p.object_classes},
          {"layouts", layouts}};
}

PlantedStructure planted_from_json(const nlohmann::json& doc) {
  auto matrix = [](const nlohmann::json& rows, std::size_t dim) {
    Eigen::MatrixXd m(rows.size(), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != dim) throw FormatError("planted structure row has wrong width");
      for (std::size_t c = 0; c < dim; ++c) m(r, c) = rows[r][c].get<double>();
    }
    return m;
  };
  try {
    PlantedStructure p;
    p.dim = doc.at("dim").get<std::size_t>();
    p.seed = doc.at("seed").get<std::uint64_t>();
    p.object_vectors = matrix(doc.at("object_vectors"), p.dim);
    p.predicate_offsets = matrix(doc.at("predicate_offsets"), p.dim);
    p.subject_classes = doc.at("subject_classes").get<std::vector<std::vector<std::size_t>>>();
    p.object_classes = doc.at("object_classes").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& l : doc.at("layouts")) {
      p.layouts.push_back({l.at("angle").get<double>(), l.at("distance").get<double>(),
                           l.at("size_ratio").get<double>()});
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed planted structure: ") + e.what());
  }
}

}  // namespace crepe::data
