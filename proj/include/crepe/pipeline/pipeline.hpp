#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crepe/data/scene.hpp"
#include "crepe/eval/metrics.hpp"
#include "crepe/head/predicate_head.hpp"
#include "crepe/pipeline/config.hpp"

namespace crepe::pipeline {

enum class Stage {
  kSynth,
  kIngest,
  kBuildVocab,
  kEmbed,
  kRetrieve,
  kTrainPrompts,
  kTrainHead,
  kCalibrate,
  kEvaluate,
  kFreq,
};

std::string to_string(Stage stage);
Stage parse_stage(std::string_view name);  // throws ArgumentError

struct StageResult {
  Stage stage = Stage::kIngest;
  bool skipped = false;  // manifest was up to date
  std::filesystem::path manifest;
};

// Empirical predicate distribution per ordered (subject, object) label pair,
// with the global predicate marginal for pairs never seen in training.
class FreqBaseline {
 public:
  FreqBaseline(const std::vector<const data::Scene*>& train, std::size_t n_predicates);

  head::Vec distribution(std::size_t subject_label, std::size_t object_label) const;
  const head::Vec& marginal() const { return marginal_; }

 private:
  std::size_t n_predicates_;
  std::map<std::pair<std::size_t, std::size_t>, head::Vec> table_;
  head::Vec marginal_;
};

// Stage runner over one output directory. Every stage writes its artifacts
// plus a manifest (stage config hash, input and output SHA-256). A stage
// whose manifest matches its current config and inputs is skipped; one
// whose config changed is refused unless `force` is set.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, bool force = false);

  const PipelineConfig& config() const { return config_; }

  StageResult run(Stage stage);
  // Every stage up to evaluate for the configured mode.
  std::vector<StageResult> run_all();
  // The stage order ending at `stage`.
  std::vector<StageResult> run_through(Stage stage);

  std::filesystem::path out() const { return config_.output_dir; }
  std::filesystem::path mode_dir() const { return out() / config_.mode_tag(); }
  std::filesystem::path report_path() const { return mode_dir() / "report.json"; }

  std::filesystem::path artifact(Stage stage, std::string_view name) const;
  std::filesystem::path manifest_path(Stage stage) const;

 private:
  struct Spec {
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
    nlohmann::json stage_config;
  };
  Spec spec(Stage stage) const;
  void execute(Stage stage);

  void do_synth();
  void do_ingest();
  void do_build_vocab();
  void do_embed();
  void do_retrieve();
  void do_train_prompts();
  void do_train_head();
  void do_calibrate();
  void do_evaluate();
  void do_freq();

  PipelineConfig config_;
  bool force_;
};

// Ordered list of pipeline stages for a mode; pseudo-k skips prompt
// training and visual modes skip retrieval.
std::vector<Stage> stages_for(const PipelineConfig& config);

}  // namespace crepe::pipeline
