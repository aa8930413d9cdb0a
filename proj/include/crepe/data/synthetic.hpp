#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <vector>

#include "crepe/data/scene.hpp"

namespace crepe::data {

// Relative placement of the object box with respect to the subject box.
struct LayoutPrior {
  double angle = 0.0;        // radians, direction from subject center to object center
  double distance = 1.0;     // center distance in units of the mean box side
  double size_ratio = 1.0;   // object side / subject side
};

// Ground truth a synthetic dataset was drawn from. Object vectors and
// predicate offsets form an exact translational model:
//   u = e_subject + e_object + r_predicate.
struct PlantedStructure {
  std::size_t dim = 0;
  Eigen::MatrixXd object_vectors;     // n_objects x dim
  Eigen::MatrixXd predicate_offsets;  // n_predicates x dim
  std::vector<std::vector<std::size_t>> subject_classes;  // per predicate
  std::vector<std::vector<std::size_t>> object_classes;   // per predicate
  std::vector<LayoutPrior> layouts;                       // per predicate
  std::uint64_t seed = 0;

  std::size_t n_objects() const { return static_cast<std::size_t>(object_vectors.rows()); }
  std::size_t n_predicates() const { return static_cast<std::size_t>(predicate_offsets.rows()); }
};

struct SyntheticConfig {
  std::size_t n_scenes = 100;
  std::size_t n_objects = 12;
  std::size_t n_predicates = 10;
  std::vector<double> skew;  // per-predicate sampling weights; empty = uniform
  std::uint64_t seed = 0;
  std::size_t min_relations = 1;  // per scene
  std::size_t max_relations = 3;
  std::size_t distractors = 1;    // unrelated entities per scene
  std::size_t planted_dim = 16;
  // Label plausibility: each predicate admits this many subject / object classes.
  std::size_t subjects_per_predicate = 3;
  std::size_t objects_per_predicate = 3;
  double image_size = 96.0;
  // Std of the relative angle around each predicate's layout prior (radians).
  double layout_jitter = 0.15;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
};

struct SyntheticDataset {
  Dataset dataset;
  PlantedStructure planted;
};

// Throws ArgumentError for degenerate parameters.
void validate(const SyntheticConfig& config);

PlantedStructure make_planted_structure(const SyntheticConfig& config);

// Draws scenes from an existing planted structure; `seed` controls only the
// scene sample, so several corpora can share one world.
Dataset sample_scenes(const PlantedStructure& planted, const SyntheticConfig& config,
                      std::uint64_t seed);

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& config);

// Names used for synthetic labels: "obj03", "pred07".
std::vector<std::string> synthetic_names(const char* prefix, std::size_t n);

// u = e_s + e_o + r_p + N(0, noise^2 I) for the relation's labels.
struct PlantedTriple {
  Eigen::VectorXd subject;
  Eigen::VectorXd object;
  Eigen::VectorXd uni;
};
PlantedTriple planted_embeddings(const PlantedStructure& planted, std::size_t subject_label,
                                 std::size_t object_label, std::optional<std::size_t> predicate,
                                 double noise, std::mt19937_64& rng);

nlohmann::json to_json(const PlantedStructure& planted);
PlantedStructure planted_from_json(const nlohmann::json& doc);

// Deterministic seed derivation (splitmix64 over the inputs).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt);

}  // namespace crepe::data
