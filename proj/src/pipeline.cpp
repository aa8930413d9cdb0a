#include "crepe/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "crepe/calibration/calibration.hpp"
#include "crepe/data/triplets.hpp"
#include "crepe/data/vg_loader.hpp"
#include "crepe/embed/cache.hpp"
#include "crepe/embed/image.hpp"
#include "crepe/embed/retrieval.hpp"
#include "crepe/embed/stub_clip.hpp"
#include "crepe/errors.hpp"
#include "crepe/geometry.hpp"
#include "crepe/pipeline/artifacts.hpp"
#include "crepe/prompt/prompt_learner.hpp"
#include "crepe/util/hash.hpp"
#include "crepe/util/log.hpp"

namespace crepe::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;
// The persistent cache is flushed this often during extraction so an
// interrupted embed stage resumes where it stopped.
constexpr std::size_t kCacheFlushScenes = 500;

struct StageInfo {
  Stage stage;
  const char* name;
};

constexpr StageInfo kStages[] = {
    {Stage::kSynth, "synth"},
    {Stage::kIngest, "ingest"},
    {Stage::kBuildVocab, "build-vocab"},
    {Stage::kEmbed, "embed"},
    {Stage::kRetrieve, "retrieve"},
    {Stage::kTrainPrompts, "train-prompts"},
    {Stage::kTrainHead, "train-head"},
    {Stage::kCalibrate, "calibrate"},
    {Stage::kEvaluate, "evaluate"},
    {Stage::kFreq, "freq"},
};

bool mode_specific(Stage s) {
  return s == Stage::kTrainHead || s == Stage::kCalibrate || s == Stage::kEvaluate;
}

json strip_location(json config) {
  config.erase("output_dir");
  config["cache"].erase("dir");
  return config;
}

data::Dataset load_dataset(const fs::path& dataset, const fs::path& vocab) {
  const json v = read_json(vocab);
  data::VocabularyPreset preset{v.at("objects").get<std::vector<std::string>>(),
                                v.at("predicates").get<std::vector<std::string>>()};
  return data::load_vg_annotations(dataset, data::SplitSpec{}, preset);
}

void save_vocab(const data::Dataset& ds, const fs::path& path) {
  write_json({{"objects", ds.objects.names()}, {"predicates", ds.predicates.names()}}, path);
}

std::vector<const data::Scene*> with_relations(const std::vector<const data::Scene*>& scenes) {
  std::vector<const data::Scene*> out;
  for (const auto* s : scenes) {
    if (!s->relations.empty()) out.push_back(s);
  }
  return out;
}

// Every scene of the three splits, in split order.
std::vector<const data::Scene*> all_split_scenes(const data::Dataset& ds) {
  std::vector<const data::Scene*> out;
  for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
    const auto s = ds.select(*part);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

embed::Vec embedding(const embed::EmbeddingCache& cache, const std::string& key) {
  auto v = cache.get(key);
  if (!v) {
    throw LookupError("embedding artifact has no entry for '" + key + "'; rerun the embed stage");
  }
  return v->as_double();
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(Stage stage) {
  for (const auto& s : kStages) {
    if (s.stage == stage) return s.name;
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (const auto& s : kStages) {
    if (name == s.name) return s.stage;
  }
  throw ArgumentError("unknown stage '" + std::string(name) + "'");
}

std::vector<Stage> stages_for(const PipelineConfig& config) {
  std::vector<Stage> out;
  if (config.dataset.source == "synthetic") out.push_back(Stage::kSynth);
  out.insert(out.end(), {Stage::kIngest, Stage::kBuildVocab, Stage::kEmbed, Stage::kRetrieve});
  if (config.mode == head::Mode::kCrepe) out.push_back(Stage::kTrainPrompts);
  out.push_back(Stage::kTrainHead);
  if (config.calibration.enabled) out.push_back(Stage::kCalibrate);
  out.push_back(Stage::kEvaluate);
  return out;
}

FreqBaseline::FreqBaseline(const std::vector<const data::Scene*>& train, std::size_t n_predicates)
    : n_predicates_(n_predicates), marginal_(head::Vec::Zero(static_cast<Eigen::Index>(n_predicates))) {
  for (const auto* scene : train) {
    for (const auto& r : scene->relations) {
      const auto key = std::make_pair(scene->entities[r.subject_idx].label_id,
                                      scene->entities[r.object_idx].label_id);
      auto [it, inserted] =
          table_.try_emplace(key, head::Vec::Zero(static_cast<Eigen::Index>(n_predicates)));
      it->second(static_cast<Eigen::Index>(r.predicate_id)) += 1.0;
      marginal_(static_cast<Eigen::Index>(r.predicate_id)) += 1.0;
    }
  }
  for (auto& [key, counts] : table_) counts /= counts.sum();
  if (marginal_.sum() > 0.0) {
    marginal_ /= marginal_.sum();
  } else if (n_predicates > 0) {
    marginal_.setConstant(1.0 / static_cast<double>(n_predicates));
  }
}

head::Vec FreqBaseline::distribution(std::size_t subject_label, std::size_t object_label) const {
  auto it = table_.find({subject_label, object_label});
  return it == table_.end() ? marginal_ : it->second;
}

Pipeline::Pipeline(PipelineConfig config, bool force) : config_(std::move(config)), force_(force) {
  validate(config_);
}

fs::path Pipeline::artifact(Stage stage, std::string_view name) const {
  switch (stage) {
    case Stage::kSynth:
      return out() / "synth" / name;
    case Stage::kIngest:
    case Stage::kBuildVocab:
      return out() / "data" / name;
    case Stage::kEmbed:
      return out() / "embed" / name;
    case Stage::kRetrieve:
      return out() / "retrieve" / name;
    case Stage::kTrainPrompts:
      return out() / "prompt" / name;
    case Stage::kFreq:
      return out() / "freq" / name;
    default:
      return mode_dir() / name;
  }
}

fs::path Pipeline::manifest_path(Stage stage) const {
  const fs::path dir = mode_specific(stage) ? mode_dir() : out();
  return dir / "manifests" / (to_string(stage) + ".json");
}

Pipeline::Spec Pipeline::spec(Stage stage) const {
  const json full = to_json(config_);
  const fs::path dataset = artifact(Stage::kIngest, "dataset.json");
  const fs::path vocab = artifact(Stage::kIngest, "vocab.json");
  const fs::path triplets = artifact(Stage::kBuildVocab, "triplets.json");
  const fs::path embeddings = artifact(Stage::kEmbed, "embeddings.embc");
  const fs::path pseudo = artifact(Stage::kRetrieve, "pseudo_labels.bin");
  const fs::path encoder =
      config_.encoder.weights ? *config_.encoder.weights : artifact(Stage::kSynth, "encoder.bin");
  const bool synthetic = config_.dataset.source == "synthetic";
  Spec s;
  switch (stage) {
    case Stage::kSynth:
      s.outputs = {artifact(stage, "annotations.json"), artifact(stage, "vocab.json"),
                   artifact(stage, "planted.json"), artifact(stage, "encoder.bin")};
      s.stage_config = {{"synthetic", full["synthetic"]},
                        {"stub", full["encoder"]["stub"]},
                        {"seed", config_.seed}};
      break;
    case Stage::kIngest:
      if (synthetic) {
        s.inputs = {artifact(Stage::kSynth, "annotations.json"),
                    artifact(Stage::kSynth, "vocab.json")};
      } else {
        s.inputs = {config_.dataset.annotations};
        if (config_.dataset.split_file) s.inputs.push_back(*config_.dataset.split_file);
      }
      s.outputs = {dataset, vocab};
      s.stage_config = strip_location(full)["dataset"];
      s.stage_config.erase("annotations");
      s.stage_config.erase("split_file");
      s.stage_config.erase("image_dir");
      break;
    case Stage::kBuildVocab:
      s.inputs = {dataset, vocab};
      s.outputs = {triplets};
      s.stage_config = json::object();
      break;
    case Stage::kEmbed:
      s.inputs = {dataset, vocab, triplets, encoder};
      if (synthetic) s.inputs.push_back(artifact(Stage::kSynth, "planted.json"));
      s.outputs = {embeddings};
      s.stage_config = {{"encoder", config_.encoder.id},
                        {"render", full["synthetic"]["render"]},
                        {"seed", config_.seed}};
      break;
    case Stage::kRetrieve:
      s.inputs = {dataset, vocab, triplets, embeddings};
      s.outputs = {pseudo};
      s.stage_config = full["retrieval"];
      break;
    case Stage::kTrainPrompts:
      s.inputs = {dataset, vocab, triplets, embeddings, pseudo, encoder};
      s.outputs = {artifact(stage, "prompt.ckpt"), artifact(stage, "loss_trace.csv")};
      s.stage_config = {{"prompt", full["prompt"]}, {"seed", config_.seed}};
      break;
    case Stage::kTrainHead:
      s.inputs = {dataset, vocab, embeddings};
      if (config_.mode == head::Mode::kPseudoK) s.inputs.insert(s.inputs.end(), {triplets, pseudo});
      if (config_.mode == head::Mode::kCrepe) {
        s.inputs.insert(s.inputs.end(), {artifact(Stage::kTrainPrompts, "prompt.ckpt"), encoder});
      }
      s.outputs = {artifact(stage, "features.bin"), artifact(stage, "head.ckpt"),
                   artifact(stage, "head_trace.csv")};
      s.stage_config = {{"head", full["head"]},
                        {"mode", full["mode"]},
                        {"k", config_.k},
                        {"seed", config_.seed}};
      break;
    case Stage::kCalibrate:
      s.inputs = {dataset, vocab, artifact(Stage::kTrainHead, "features.bin"),
                  artifact(Stage::kTrainHead, "head.ckpt")};
      s.outputs = {artifact(stage, "calibration.json")};
      s.stage_config = {{"floor", config_.calibration.floor}};
      break;
    case Stage::kEvaluate:
      s.inputs = {dataset, vocab, artifact(Stage::kTrainHead, "features.bin"),
                  artifact(Stage::kTrainHead, "head.ckpt")};
      if (config_.calibration.enabled) s.inputs.push_back(artifact(Stage::kCalibrate, "calibration.json"));
      s.outputs = {artifact(stage, "predictions.jsonl"), artifact(stage, "report.json"),
                   artifact(stage, "report.csv"), artifact(stage, "recall_plot.csv")};
      s.stage_config = {{"calibration", config_.calibration.enabled}};
      break;
    case Stage::kFreq:
      s.inputs = {dataset, vocab};
      s.outputs = {artifact(stage, "predictions.jsonl"), artifact(stage, "report.json"),
                   artifact(stage, "report.csv"), artifact(stage, "recall_plot.csv")};
      s.stage_config = json::object();
      break;
  }
  return s;
}

StageResult Pipeline::run(Stage stage) {
  const Spec s = spec(stage);
  const std::string name = to_string(stage);
  for (const auto& in : s.inputs) {
    if (!fs::exists(in)) {
      throw DependencyError("stage '" + name + "' needs " + in.string() +
                            ", which does not exist; run the earlier stages first");
    }
  }
  json inputs = json::object();
  for (const auto& in : s.inputs) inputs[in.string()] = util::sha256_file(in);
  const std::string config_hash = util::sha256_hex(s.stage_config.dump());

  StageResult result{stage, false, manifest_path(stage)};
  if (fs::exists(result.manifest)) {
    const json m = read_json(result.manifest);
    if (m.value("config_hash", "") != config_hash && !force_) {
      throw StaleConfigError("stage '" + name + "' in " + out().string() +
                             " was produced with a different configuration; pass --force to "
                             "overwrite it or choose a fresh --out directory");
    }
    bool fresh = m.value("config_hash", "") == config_hash && m.value("inputs", json()) == inputs;
    if (fresh) {
      for (const auto& o : s.outputs) {
        const auto recorded = m["outputs"].find(o.string());
        if (!fs::exists(o) || recorded == m["outputs"].end() ||
            *recorded != util::sha256_file(o)) {
          fresh = false;
          break;
        }
      }
    }
    if (fresh) {
      log::info("[" + name + "] up to date");
      result.skipped = true;
      return result;
    }
  }

  for (const auto& o : s.outputs) fs::create_directories(o.parent_path());
  log::info("[" + name + "] running");
  const auto start = std::chrono::steady_clock::now();
  execute(stage);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  log::info("[" + name + "] finished in " + fixed(elapsed.count(), 1) + " s");

  json outputs = json::object();
  for (const auto& o : s.outputs) outputs[o.string()] = util::sha256_file(o);
  fs::create_directories(result.manifest.parent_path());
  write_json({{"stage", name},
              {"version", kManifestVersion},
              {"config_hash", config_hash},
              {"stage_config", s.stage_config},
              {"config", to_json(config_)},
              {"inputs", inputs},
              {"outputs", outputs}},
             result.manifest);
  return result;
}

std::vector<StageResult> Pipeline::run_all() {
  std::vector<StageResult> out;
  for (Stage s : stages_for(config_)) out.push_back(run(s));
  return out;
}

std::vector<StageResult> Pipeline::run_through(Stage stage) {
  std::vector<StageResult> out;
  for (Stage s : stages_for(config_)) {
    out.push_back(run(s));
    if (s == stage) return out;
  }
  if (stage == Stage::kFreq || stage == Stage::kTrainPrompts || stage == Stage::kCalibrate) {
    out.push_back(run(stage));
  }
  return out;
}

void Pipeline::execute(Stage stage) {
  switch (stage) {
    case Stage::kSynth:
      return do_synth();
    case Stage::kIngest:
      return do_ingest();
    case Stage::kBuildVocab:
      return do_build_vocab();
    case Stage::kEmbed:
      return do_embed();
    case Stage::kRetrieve:
      return do_retrieve();
    case Stage::kTrainPrompts:
      return do_train_prompts();
    case Stage::kTrainHead:
      return do_train_head();
    case Stage::kCalibrate:
      return do_calibrate();
    case Stage::kEvaluate:
      return do_evaluate();
    case Stage::kFreq:
      return do_freq();
  }
}

namespace {

embed::StubClip load_encoder(const PipelineConfig& c, const fs::path& synth_weights) {
  return embed::StubClip::load(c.encoder.weights ? *c.encoder.weights : synth_weights);
}

embed::RenderConfig render_config(const PipelineConfig& c, std::string_view salt) {
  embed::RenderConfig r = c.synthetic.render;
  r.seed = data::mix_seed(c.seed, salt);
  return r;
}

}  // namespace

void Pipeline::do_synth() {
  data::SyntheticConfig sc = config_.synthetic.scenes;
  sc.seed = data::mix_seed(config_.seed, "synthetic");
  const data::SyntheticDataset world = data::generate_synthetic_dataset(sc);
  data::save_vg_annotations(world.dataset, artifact(Stage::kSynth, "annotations.json"));
  save_vocab(world.dataset, artifact(Stage::kSynth, "vocab.json"));
  write_json(data::to_json(world.planted), artifact(Stage::kSynth, "planted.json"));

  // Fit the image tower on an independent corpus drawn from the same world:
  // union crops map to their triplet text, entity crops to their label.
  embed::StubClipConfig stub = config_.encoder.stub;
  stub.image_channels = sc.planted_dim;
  stub.seed = data::mix_seed(config_.seed, "encoder");
  embed::StubClip encoder = embed::StubClip::create(stub);
  data::SyntheticConfig align_cfg = sc;
  align_cfg.n_scenes = config_.synthetic.align_scenes;
  const data::Dataset corpus =
      data::sample_scenes(world.planted, align_cfg, data::mix_seed(config_.seed, "align"));
  const embed::SyntheticImageSource images(world.planted, render_config(config_, "align-render"));
  std::map<std::string, embed::Vec> text_cache;
  auto text = [&](const std::string& t) -> const embed::Vec& {
    auto it = text_cache.find(t);
    if (it == text_cache.end()) {
      it = text_cache.emplace(t, embed::encode_text(encoder, t).as_double()).first;
    }
    return it->second;
  };
  std::vector<embed::Vec> crops, targets;
  const int grid = static_cast<int>(stub.image_grid);
  for (const auto& scene : corpus.scenes) {
    const embed::Image img = images.load(scene);
    for (const auto& r : scene.relations) {
      const auto& s = scene.entities[r.subject_idx];
      const auto& o = scene.entities[r.object_idx];
      crops.push_back(embed::grid_pool(img, geometry::union_box(s.box, o.box), grid));
      targets.push_back(text(render_triplet({s.label_id, r.predicate_id, o.label_id},
                                            corpus.objects, corpus.predicates)));
    }
    for (const auto& e : scene.entities) {
      crops.push_back(embed::grid_pool(img, e.box, grid));
      targets.push_back(text(corpus.objects.name(e.label_id)));
    }
  }
  encoder.align_image_tower(crops, targets, config_.synthetic.align_ridge);
  encoder.save(artifact(Stage::kSynth, "encoder.bin"));
}

void Pipeline::do_ingest() {
  data::Dataset ds;
  if (config_.dataset.source == "synthetic") {
    ds = load_dataset(artifact(Stage::kSynth, "annotations.json"),
                      artifact(Stage::kSynth, "vocab.json"));
  } else {
    data::SplitSpec split{config_.dataset.split_file, config_.dataset.train_fraction,
                          config_.dataset.val_fraction};
    std::optional<data::VocabularyPreset> preset;
    if (config_.dataset.vocabulary == "vg150") preset = data::vg150_preset();
    ds = data::load_vg_annotations(config_.dataset.annotations, split, preset);
  }
  data::save_vg_annotations(ds, artifact(Stage::kIngest, "dataset.json"));
  save_vocab(ds, artifact(Stage::kIngest, "vocab.json"));
  log::info("ingested " + std::to_string(ds.scenes.size()) + " scenes (" +
            std::to_string(ds.split.train.size()) + " train / " +
            std::to_string(ds.split.val.size()) + " val / " +
            std::to_string(ds.split.test.size()) + " test)");
}

void Pipeline::do_build_vocab() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  const auto vocab =
      data::build_triplet_vocabulary(ds.select(ds.split.train), ds.objects, ds.predicates);
  save_triplets(vocab, artifact(Stage::kBuildVocab, "triplets.json"));
  log::info("triplet vocabulary: " + std::to_string(vocab.size()) + " entries");
}

void Pipeline::do_embed() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  const auto triplets = load_triplets(artifact(Stage::kBuildVocab, "triplets.json"));
  const embed::StubClip encoder = load_encoder(config_, artifact(Stage::kSynth, "encoder.bin"));
  const std::size_t d = encoder.embed_dim();

  std::unique_ptr<embed::ImageSource> images;
  if (config_.dataset.source == "synthetic") {
    images = std::make_unique<embed::SyntheticImageSource>(
        data::planted_from_json(read_json(artifact(Stage::kSynth, "planted.json"))),
        render_config(config_, "render"));
  } else {
    images = std::make_unique<embed::PpmDirectorySource>(config_.dataset.image_dir);
  }

  const fs::path dir = cache_dir(config_);
  fs::create_directories(dir);
  const fs::path cache_file = dir / (encoder.fingerprint() + ".embc");
  embed::EmbeddingCache persistent = embed::EmbeddingCache::open(cache_file, d, config_.cache.capacity);
  embed::CachedEncoder cached(encoder, persistent);
  embed::EmbeddingCache out(d);

  for (const auto& name : ds.objects.names()) out.put(embed::cache_key(name), cached.text(name));
  for (const auto& text : triplets.texts) out.put(embed::cache_key(text), cached.text(text));
  std::size_t done = 0;
  for (const auto* scene : with_relations(all_split_scenes(ds))) {
    const embed::Image img = images->load(*scene);
    for (const auto& e : scene->entities) {
      out.put(embed::cache_key(scene->image_id, e.box), cached.image(*scene, img, e.box));
    }
    for (const auto& [s, o] : data::ordered_pairs(*scene)) {
      const auto box = geometry::union_box(scene->entities[s].box, scene->entities[o].box);
      out.put(embed::cache_key(scene->image_id, box), cached.image(*scene, img, box));
    }
    if (++done % kCacheFlushScenes == 0) persistent.save(cache_file);
  }
  persistent.save(cache_file);
  out.save(artifact(Stage::kEmbed, "embeddings.embc"));
  log::info("embedded " + std::to_string(out.size()) + " keys (" +
            std::to_string(cached.hits()) + " cache hits, " + std::to_string(cached.misses()) +
            " computed)");
}

void Pipeline::do_retrieve() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  auto vocab = load_triplets(artifact(Stage::kBuildVocab, "triplets.json"));
  const auto cache = embed::EmbeddingCache::load(artifact(Stage::kEmbed, "embeddings.embc"));
  if (vocab.empty()) {
    throw RetrievalError("the triplet vocabulary is empty; the training split has no relations");
  }
  vocab.embeddings.resize(static_cast<Eigen::Index>(vocab.size()),
                          static_cast<Eigen::Index>(cache.dim()));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    vocab.embeddings.row(static_cast<Eigen::Index>(i)) =
        embedding(cache, embed::cache_key(vocab.texts[i])).cast<float>().transpose();
  }
  std::vector<ScenePseudoLabels> out;
  for (const auto* scene : with_relations(all_split_scenes(ds))) {
    ScenePseudoLabels s;
    s.image_id = scene->image_id;
    for (const auto& [a, b] : data::ordered_pairs(*scene)) {
      const auto box = geometry::union_box(scene->entities[a].box, scene->entities[b].box);
      embed::EmbeddingVector u;
      u.values = embedding(cache, embed::cache_key(scene->image_id, box)).cast<float>();
      u.normalized = true;
      std::vector<std::pair<std::size_t, double>> labels;
      for (const auto& p : embed::retrieve_pseudo_labels(u, vocab, config_.retrieval.top_k)) {
        labels.emplace_back(p.index, p.similarity);
      }
      s.pairs.emplace_back(a, b);
      s.labels.push_back(std::move(labels));
    }
    out.push_back(std::move(s));
  }
  save_pseudo_labels(out, config_.retrieval.top_k, artifact(Stage::kRetrieve, "pseudo_labels.bin"));
}

void Pipeline::do_train_prompts() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  const auto vocab = load_triplets(artifact(Stage::kBuildVocab, "triplets.json"));
  const auto cache = embed::EmbeddingCache::load(artifact(Stage::kEmbed, "embeddings.embc"));
  const auto pseudo = load_pseudo_labels(artifact(Stage::kRetrieve, "pseudo_labels.bin"));
  const embed::StubClip encoder = load_encoder(config_, artifact(Stage::kSynth, "encoder.bin"));

  std::vector<prompt::PromptSample> samples;
  for (const auto* scene : ds.select(ds.split.train)) {
    const auto it = pseudo.find(scene->image_id);
    for (std::size_t i = 0; i < scene->relations.size(); ++i) {
      const auto& r = scene->relations[i];
      if (it == pseudo.end()) {
        throw DependencyError("no pseudo-labels for scene '" + scene->image_id + "'");
      }
      const auto& pl = it->second;
      const auto pos = std::find(pl.pairs.begin(), pl.pairs.end(),
                                 std::make_pair(r.subject_idx, r.object_idx));
      const auto& top = pl.labels[static_cast<std::size_t>(pos - pl.pairs.begin())];
      const auto& s = scene->entities[r.subject_idx];
      const auto& o = scene->entities[r.object_idx];
      prompt::PromptSample sample;
      sample.id = scene->image_id + "#" + std::to_string(i);
      sample.subject = ds.objects.name(s.label_id);
      sample.object = ds.objects.name(o.label_id);
      sample.u_img =
          embedding(cache, embed::cache_key(scene->image_id, geometry::union_box(s.box, o.box)));
      sample.negative = embedding(cache, embed::cache_key(vocab.texts[top.front().first]));
      samples.push_back(std::move(sample));
    }
  }

  const std::uint64_t seed = data::mix_seed(config_.seed, "prompt");
  auto state = prompt::init_prompt_learner(config_.prompt.n_context, encoder.token_dim(),
                                           encoder.embed_dim(), config_.prompt_hidden(), seed);
  prompt::PromptTrainConfig tc;
  tc.epochs = config_.prompt.epochs;
  tc.learning_rate = config_.prompt.learning_rate;
  tc.batch_size = config_.prompt.batch_size;
  tc.momentum = config_.prompt.momentum;
  tc.seed = seed;
  tc.checkpoint_every = config_.prompt.checkpoint_every;
  const fs::path ckpt_dir = artifact(Stage::kTrainPrompts, "checkpoints");
  fs::create_directories(ckpt_dir);
  const std::string fp = encoder.fingerprint();
  tc.on_checkpoint = [&](const prompt::PromptLearnerState& s) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04llu.ckpt", static_cast<unsigned long long>(s.epoch));
    prompt::save_checkpoint(s, fp, ckpt_dir / name);
  };
  const double initial = prompt::mean_loss(state, encoder, samples);
  auto result = prompt::train_prompt_learner(std::move(state), samples, encoder, tc);
  prompt::save_checkpoint(result.state, fp, artifact(Stage::kTrainPrompts, "prompt.ckpt"));
  prompt::write_loss_trace(result.loss_trace, artifact(Stage::kTrainPrompts, "loss_trace.csv"));
  log::info("prompt learner: mean loss " + csv_number(initial) + " -> " +
            csv_number(prompt::mean_loss(result.state, encoder, samples)) + " over " +
            std::to_string(samples.size()) + " relations");
}

void Pipeline::do_train_head() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  const auto cache = embed::EmbeddingCache::load(artifact(Stage::kEmbed, "embeddings.embc"));
  const std::size_t d = cache.dim();
  const head::Mode mode = config_.mode;

  data::TripletVocabulary vocab;
  std::map<std::string, ScenePseudoLabels> pseudo;
  if (mode == head::Mode::kPseudoK) {
    vocab = load_triplets(artifact(Stage::kBuildVocab, "triplets.json"));
    pseudo = load_pseudo_labels(artifact(Stage::kRetrieve, "pseudo_labels.bin"));
  }
  std::optional<embed::StubClip> encoder;
  std::optional<prompt::PromptLearnerState> prompts;
  if (mode == head::Mode::kCrepe) {
    encoder = load_encoder(config_, artifact(Stage::kSynth, "encoder.bin"));
    std::string fp;
    prompts = prompt::load_checkpoint(artifact(Stage::kTrainPrompts, "prompt.ckpt"), &fp);
    if (fp != encoder->fingerprint()) {
      throw StaleConfigError("the prompt checkpoint was trained against a different encoder");
    }
  }

  // Materialize the head inputs of every candidate pair.
  std::vector<head::SceneFeatures> features;
  for (const auto* scene : with_relations(all_split_scenes(ds))) {
    head::SceneFeatures f;
    f.image_id = scene->image_id;
    f.entities.resize(static_cast<Eigen::Index>(scene->entities.size()),
                      static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < scene->entities.size(); ++i) {
      const auto& e = scene->entities[i];
      const std::string key = mode == head::Mode::kVisual
                                  ? embed::cache_key(scene->image_id, e.box)
                                  : embed::cache_key(ds.objects.name(e.label_id));
      f.entities.row(static_cast<Eigen::Index>(i)) = embedding(cache, key).transpose();
    }
    const ScenePseudoLabels* pl = nullptr;
    if (mode == head::Mode::kPseudoK) {
      auto it = pseudo.find(scene->image_id);
      if (it == pseudo.end()) {
        throw DependencyError("no pseudo-labels for scene '" + scene->image_id + "'");
      }
      pl = &it->second;
    }
    const auto pairs = data::ordered_pairs(*scene);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [s, o] = pairs[p];
      const auto box = geometry::union_box(scene->entities[s].box, scene->entities[o].box);
      const embed::Vec u_img = embedding(cache, embed::cache_key(scene->image_id, box));
      head::Mat u;
      switch (mode) {
        case head::Mode::kVisual:
        case head::Mode::kVisualLanguage:
          u = u_img.transpose();
          break;
        case head::Mode::kPseudoK: {
          const auto& labels = pl->labels.at(p);
          const std::size_t k = std::min(config_.k, labels.size());
          u.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
          for (std::size_t i = 0; i < k; ++i) {
            u.row(static_cast<Eigen::Index>(i)) =
                embedding(cache, embed::cache_key(vocab.texts[labels[i].first])).transpose();
          }
          break;
        }
        case head::Mode::kCrepe: {
          const embed::EmbeddingVector img = embed::EmbeddingVector::from(u_img, false);
          u = prompt::union_text_embedding(*prompts, *encoder,
                                           ds.objects.name(scene->entities[s].label_id),
                                           ds.objects.name(scene->entities[o].label_id), img)
                  .as_double()
                  .transpose();
          break;
        }
      }
      f.pairs.push_back(pairs[p]);
      f.unions.push_back(std::move(u));
    }
    features.push_back(std::move(f));
  }
  save_features(features, d, artifact(Stage::kTrainHead, "features.bin"));
  std::map<std::string, const head::SceneFeatures*> by_id;
  for (const auto& f : features) by_id[f.image_id] = &f;

  const std::size_t K = ds.predicates.size();
  const std::uint64_t seed = data::mix_seed(config_.seed, "head");
  std::vector<head::HeadExample> train, val;
  for (const auto* scene : with_relations(ds.select(ds.split.train))) {
    const auto& f = *by_id.at(scene->image_id);
    for (const auto& r : scene->relations) {
      train.push_back(head::make_example(*scene, f, r.subject_idx, r.object_idx, r.predicate_id));
    }
    for (const auto& [s, o] : head::sample_no_relation_pairs(
             *scene, config_.head.no_relation_ratio, data::mix_seed(seed, "no-relation"))) {
      train.push_back(head::make_example(*scene, f, s, o, K));
    }
  }
  for (const auto* scene : with_relations(ds.select(ds.split.val))) {
    const auto& f = *by_id.at(scene->image_id);
    for (const auto& r : scene->relations) {
      val.push_back(head::make_example(*scene, f, r.subject_idx, r.object_idx, r.predicate_id));
    }
  }

  head::HeadDims dims;
  dims.embed_dim = d;
  dims.hidden_dim = config_.head.hidden_dim;
  dims.output_dim = config_.head.output_dim;
  dims.n_predicates = K;
  dims.attention_hidden =
      mode == head::Mode::kPseudoK && config_.k > 1 ? config_.head.attention_hidden : 0;
  head::HeadTrainConfig tc;
  tc.epochs = config_.head.epochs;
  tc.batch_size = config_.head.batch_size;
  tc.momentum = config_.head.momentum;
  tc.schedule = config_.head.schedule;
  tc.seed = seed;
  const auto result = head::train_head(head::init_head(dims, seed), train, val, tc);
  head::save_checkpoint(result.state, artifact(Stage::kTrainHead, "head.ckpt"));

  std::ostringstream trace;
  trace << "epoch,mean_loss,learning_rate,val_mean_class_accuracy\n";
  for (std::size_t e = 0; e < result.loss_trace.size(); ++e) {
    trace << (e + 1) << ',' << csv_number(result.loss_trace[e]) << ','
          << csv_number(result.lr_trace[e]) << ','
          << (e < result.val_trace.size() ? csv_number(result.val_trace[e]) : "") << '\n';
  }
  write_text(trace.str(), artifact(Stage::kTrainHead, "head_trace.csv"));
  log::info("head: " + std::to_string(train.size()) + " training examples, best epoch " +
            std::to_string(result.best_epoch));
}

void Pipeline::do_calibrate() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  const auto features = load_features(artifact(Stage::kTrainHead, "features.bin"));
  const fs::path ckpt = artifact(Stage::kTrainHead, "head.ckpt");
  const auto state = head::load_checkpoint(ckpt);
  std::vector<head::Vec> probs;
  std::vector<std::size_t> labels;
  for (const auto* scene : with_relations(ds.select(ds.split.val))) {
    const auto& f = features.at(scene->image_id);
    for (const auto& r : scene->relations) {
      probs.push_back(head::predict(
          state, head::make_example(*scene, f, r.subject_idx, r.object_idx, r.predicate_id)));
      labels.push_back(r.predicate_id);
    }
  }
  auto table = calibration::estimate_frequencies(probs, labels, ds.predicates.names(),
                                                 config_.calibration.floor);
  table.provenance = {{"split", "val"},
                      {"examples", probs.size()},
                      {"mode", config_.mode_tag()},
                      {"head_checkpoint_sha256", util::sha256_file(ckpt)}};
  calibration::save(table, artifact(Stage::kCalibrate, "calibration.json"));
}

namespace {

void write_report_files(const eval::EvalReport& report, const fs::path& dir) {
  eval::write_report(report, dir / "report.json", dir / "report.csv", dir / "recall_plot.csv");
}

eval::EvalReport report_from_dump(const fs::path& dump, const data::Dataset& ds) {
  const auto dists = eval::read_prediction_dump(dump, ds.predicates);
  const auto test = ds.select(ds.split.test);
  std::vector<eval::RankedPrediction> ranked;
  for (const auto& [id, d] : dists) ranked.push_back(eval::rank_scene(id, d, ds.predicates.size()));
  return eval::evaluate(ranked, test, ds.predicates,
                        eval::predicate_frequency(ds.select(ds.split.train), ds.predicates.size()));
}

}  // namespace

void Pipeline::do_evaluate() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  const auto features = load_features(artifact(Stage::kTrainHead, "features.bin"));
  const auto state = head::load_checkpoint(artifact(Stage::kTrainHead, "head.ckpt"));
  std::optional<calibration::CalibrationTable> table;
  if (config_.calibration.enabled) {
    table = calibration::load(artifact(Stage::kCalibrate, "calibration.json"));
  }
  const fs::path dump = artifact(Stage::kEvaluate, "predictions.jsonl");
  {
    std::ofstream out(dump);
    if (!out) throw Error("cannot write " + dump.string());
    for (const auto* scene : ds.select(ds.split.test)) {
      head::PairDistributions dists;
      if (!scene->relations.empty()) {
        const auto it = features.find(scene->image_id);
        if (it == features.end()) {
          throw LookupError("no features for test scene '" + scene->image_id + "'");
        }
        dists = head::predict_scene(state, *scene, it->second, table ? &*table : nullptr);
      }
      out << head::prediction_line(scene->image_id, dists, ds.predicates, ds.predicates.size())
          << '\n';
    }
  }
  eval::EvalReport report = report_from_dump(dump, ds);
  report.config = strip_location(to_json(config_));
  report.config["mode_tag"] = config_.mode_tag();
  write_report_files(report, mode_dir());
  std::string line = config_.mode_tag() + ":";
  for (const auto& [k, v] : report.mean_recall) line += " mR@" + std::to_string(k) + "=" + csv_number(v);
  log::info(line);
}

void Pipeline::do_freq() {
  const data::Dataset ds =
      load_dataset(artifact(Stage::kIngest, "dataset.json"), artifact(Stage::kIngest, "vocab.json"));
  const FreqBaseline freq(ds.select(ds.split.train), ds.predicates.size());
  const fs::path dump = artifact(Stage::kFreq, "predictions.jsonl");
  {
    std::ofstream out(dump);
    if (!out) throw Error("cannot write " + dump.string());
    for (const auto* scene : ds.select(ds.split.test)) {
      head::PairDistributions dists;
      if (!scene->relations.empty()) {
        for (const auto& [s, o] : data::ordered_pairs(*scene)) {
          head::Vec p = freq.distribution(scene->entities[s].label_id, scene->entities[o].label_id);
          // prediction_line expects a trailing no-relation entry.
          head::Vec full(p.size() + 1);
          full << p, 0.0;
          dists.emplace(std::make_pair(s, o), std::move(full));
        }
      }
      out << head::prediction_line(scene->image_id, dists, ds.predicates, ds.predicates.size())
          << '\n';
    }
  }
  eval::EvalReport report = report_from_dump(dump, ds);
  report.config = {{"baseline", "freq"}};
  write_report_files(report, out() / "freq");
}

}  // namespace crepe::pipeline
