#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crepe/data/scene.hpp"

namespace crepe::data {

// How scenes are assigned to train/val/test.
//
// Precedence: an explicit split file, then per-record "split" fields, then
// the fractions applied to file order (train first, then val, rest test).
struct SplitSpec {
  std::optional<std::filesystem::path> split_file;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
};

// Fixed label lists. When supplied, labels outside them are an error; when
// absent the vocabularies are the sorted unique labels of the file.
struct VocabularyPreset {
  std::vector<std::string> objects;
  std::vector<std::string> predicates;
};

// The 150-object / 50-predicate label lists of the standard VG split.
VocabularyPreset vg150_preset();

// Label normalization applied at ingestion: trim + ASCII lowercase.
std::string normalize_label(std::string_view label);

Dataset parse_vg_annotations(const nlohmann::json& doc, const SplitSpec& split_spec,
                             const std::optional<VocabularyPreset>& preset = std::nullopt);

Dataset load_vg_annotations(const std::filesystem::path& annotation_path,
                            const SplitSpec& split_spec,
                            const std::optional<VocabularyPreset>& preset = std::nullopt);

// Inverse of parse_vg_annotations: one record per scene carrying its split.
nlohmann::json to_annotation_json(const Dataset& dataset);
void save_vg_annotations(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace crepe::data
