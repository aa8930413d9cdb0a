#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "crepe/data/synthetic.hpp"
#include "crepe/data/vg_loader.hpp"
#include "crepe/embed/image.hpp"
#include "crepe/embed/stub_clip.hpp"
#include "crepe/head/predicate_head.hpp"

namespace crepe::pipeline {

// Environment variable that overrides the embedding cache directory.
inline constexpr const char* kCacheDirEnv = "CREPE_CACHE_DIR";

struct DatasetConfig {
  // "synthetic": generated by the synth stage; "vg": an annotation file.
  std::string source = "synthetic";
  std::filesystem::path annotations;
  std::optional<std::filesystem::path> split_file;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  // "derived" (sorted labels of the file) or "vg150".
  std::string vocabulary = "derived";
  std::filesystem::path image_dir;  // <image_id>.ppm, for source "vg"
};

struct SynthConfig {
  data::SyntheticConfig scenes;
  embed::RenderConfig render;
  // Separate corpus from the same world used to fit the stub image tower.
  std::size_t align_scenes = 400;
  double align_ridge = 1e-2;
};

struct EncoderConfig {
  std::string id = "stub-clip";
  // Stub weights; for synthetic runs the synth stage writes them.
  std::optional<std::filesystem::path> weights;
  embed::StubClipConfig stub;
};

struct CacheConfig {
  std::optional<std::filesystem::path> dir;  // default <out>/cache
  std::size_t capacity = 0;
};

struct RetrievalConfig {
  std::size_t top_k = 5;  // pseudo-labels stored per union
};

struct PromptConfig {
  std::size_t n_context = 4;
  std::size_t hidden_dim = 0;  // 0 = embed_dim / 16
  std::size_t epochs = 500;
  double learning_rate = 2e-3;
  std::size_t batch_size = 64;
  double momentum = 0.0;
  std::size_t checkpoint_every = 50;
};

struct HeadConfig {
  std::size_t hidden_dim = 512;
  std::size_t output_dim = 512;
  std::size_t attention_hidden = 64;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double no_relation_ratio = 1.0;
  std::vector<head::LrStep> schedule = head::default_schedule();
};

struct CalibrationConfig {
  bool enabled = true;
  double floor = 1e-4;
};

struct PipelineConfig {
  DatasetConfig dataset;
  SynthConfig synthetic;
  EncoderConfig encoder;
  CacheConfig cache;
  RetrievalConfig retrieval;
  PromptConfig prompt;
  HeadConfig head;
  CalibrationConfig calibration;
  head::Mode mode = head::Mode::kCrepe;
  std::size_t k = 1;  // pseudo-labels per union in pseudo-k mode
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";

  std::size_t prompt_hidden() const {
    return prompt.hidden_dim ? prompt.hidden_dim : std::max<std::size_t>(1, encoder.stub.embed_dim / 16);
  }
  // Directory name of the mode-specific stages: "crepe", "pseudo-k3", ...
  std::string mode_tag() const;
};

// Unknown keys are rejected so typos do not silently fall back to defaults.
PipelineConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig load_config(const std::filesystem::path& path);

// Throws ArgumentError naming the first invalid setting.
void validate(const PipelineConfig& config);

// Directory of the persistent embedding cache after the environment override.
std::filesystem::path cache_dir(const PipelineConfig& config);

}  // namespace crepe::pipeline
