#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crepe/data/scene.hpp"
#include "crepe/head/predicate_head.hpp"

namespace crepe::eval {

inline const std::vector<std::size_t> kRecallKs = {5, 10, 15, 20, 50};

struct RankedTriplet {
  std::size_t subject_idx = 0;
  std::size_t object_idx = 0;
  std::size_t predicate_id = 0;
  double score = 0.0;

  friend bool operator==(const RankedTriplet&, const RankedTriplet&) = default;
};

// One scene's graph-constrained ranking.
struct RankedPrediction {
  std::string image_id;
  std::vector<RankedTriplet> triplets;
};

// Each ordered pair contributes its best predicate among the first
// `n_predicates` entries (a trailing no-relation entry is ignored). Sorted
// by score descending, then pair index (map order), then predicate index.
RankedPrediction rank_scene(const std::string& image_id, const head::PairDistributions& dists,
                            std::size_t n_predicates);

// Per predicate: ground-truth triplets and how many appear in the top K of
// their scene. Scenes without a ranking count as empty rankings.
struct RecallCounts {
  std::vector<std::size_t> hits;
  std::vector<std::size_t> totals;

  std::optional<double> recall(std::size_t predicate) const;
  // Unweighted mean over predicates with at least one ground-truth triplet.
  double mean() const;
};

RecallCounts recall_counts(const std::vector<RankedPrediction>& ranked,
                           const std::vector<const data::Scene*>& gt, std::size_t k,
                           std::size_t n_predicates);

double mean_recall_at_k(const std::vector<RankedPrediction>& ranked,
                        const std::vector<const data::Scene*>& gt, std::size_t k,
                        std::size_t n_predicates);

enum class Group { kHead = 0, kMid = 1, kTail = 2 };
std::string to_string(Group g);

struct PredicateRow {
  std::size_t predicate_id = 0;
  std::string name;
  std::size_t frequency = 0;  // training count
  std::optional<double> recall;
  Group group = Group::kHead;
};

struct EvalReport {
  std::map<std::size_t, double> mean_recall;  // K -> mR@K
  std::size_t report_k = 50;
  std::vector<PredicateRow> rows;  // descending frequency
  std::map<Group, double> group_means;
  nlohmann::json config = nlohmann::json::object();
};

// Rows sorted by descending training frequency (ties by id); the rank r of
// n rows falls in group floor(3r / n). Group means skip undefined recalls.
EvalReport per_predicate_report(const std::vector<RankedPrediction>& ranked,
                                const std::vector<const data::Scene*>& gt,
                                const data::Vocabulary& predicates,
                                const std::vector<std::size_t>& frequency, std::size_t k = 50);

// Full report: mR@K for every K in kRecallKs plus the per-predicate rows.
EvalReport evaluate(const std::vector<RankedPrediction>& ranked,
                    const std::vector<const data::Scene*>& gt, const data::Vocabulary& predicates,
                    const std::vector<std::size_t>& frequency);

// Training-split predicate counts.
std::vector<std::size_t> predicate_frequency(const std::vector<const data::Scene*>& scenes,
                                             std::size_t n_predicates);

nlohmann::json to_json(const EvalReport& report);
// "metric,value" rows.
std::string to_csv(const EvalReport& report);
// "predicate,frequency,recall,group" rows for an external plotter.
std::string plot_csv(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path, const std::filesystem::path& plot_path);

// Reads a prediction dump back into per-scene scores over the predicates;
// predicates absent from a pair's list score -infinity.
std::map<std::string, head::PairDistributions> read_prediction_dump(
    const std::filesystem::path& path, const data::Vocabulary& predicates);

}  // namespace crepe::eval
