#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "crepe/head/predicate_head.hpp"
#include "crepe/data/triplets.hpp"

namespace crepe::pipeline {

// Pseudo-labels of every union of a scene: triplet-vocabulary indices and
// cosine similarities, best first.
struct ScenePseudoLabels {
  std::string image_id;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::vector<std::pair<std::size_t, double>>> labels;  // per pair
};

// Binary: magic "CRPPSL01", u32 version, u32 top_k, u32 scenes, then per
// scene: id, u32 pairs, per pair u32 s, u32 o, u32 n, n x (u32 index, f64 sim).
void save_pseudo_labels(const std::vector<ScenePseudoLabels>& scenes, std::size_t top_k,
                        const std::filesystem::path& path);
std::map<std::string, ScenePseudoLabels> load_pseudo_labels(const std::filesystem::path& path);

// Binary: magic "CRPFEAT1", u32 version, u32 d, u32 scenes, then per scene:
// id, entity matrix, u32 pairs, per pair u32 s, u32 o, candidate matrix.
void save_features(const std::vector<head::SceneFeatures>& scenes, std::size_t dim,
                   const std::filesystem::path& path);
std::map<std::string, head::SceneFeatures> load_features(const std::filesystem::path& path);

// {"entries": [[s, p, o], ...], "texts": [...]}; embeddings are not stored.
void save_triplets(const data::TripletVocabulary& vocab, const std::filesystem::path& path);
data::TripletVocabulary load_triplets(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const nlohmann::json& doc, const std::filesystem::path& path);
void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace crepe::pipeline
