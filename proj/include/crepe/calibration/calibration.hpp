#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "crepe/nn.hpp"

namespace crepe::calibration {

using nn::Vec;

inline constexpr double kDefaultFloor = 1e-4;

// Per-predicate frequency estimates beta_k (the no-relation class has none).
struct CalibrationTable {
  std::vector<std::string> class_names;
  std::vector<double> beta;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return beta.size(); }

  // beta_k = 1 for every class: adjust() becomes the identity.
  static CalibrationTable identity(std::vector<std::string> class_names);
};

// beta_k = mean of probs[i](k) over the examples with labels[i] == k.
// Each probability vector has n_predicates entries, optionally followed by
// the no-relation entry. Classes without examples get `floor` and a warning.
CalibrationTable estimate_frequencies(const std::vector<Vec>& probs,
                                      const std::vector<std::size_t>& labels,
                                      const std::vector<std::string>& class_names,
                                      double floor = kDefaultFloor);

// Elementwise P_k / beta_k, not renormalized. A trailing no-relation entry
// passes through unchanged. Throws ArgumentError on a class-count mismatch.
Vec adjust(const Vec& dist, const CalibrationTable& table);

// {"beta": {name: value}, "class_order": [...], "provenance": {...}}
nlohmann::json to_json(const CalibrationTable& table);
CalibrationTable from_json(const nlohmann::json& doc);
void save(const CalibrationTable& table, const std::filesystem::path& path);
CalibrationTable load(const std::filesystem::path& path);

}  // namespace crepe::calibration
