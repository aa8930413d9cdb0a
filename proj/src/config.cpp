#include "crepe/pipeline/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "crepe/errors.hpp"

namespace crepe::pipeline {
namespace {

using nlohmann::json;

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) {
      throw ArgumentError("config section '" + path_ + "' must be an object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!doc_.contains(key)) return;
    seen_.insert(key);
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ArgumentError("config key '" + where(key) + "' has the wrong type");
    }
  }

  void get_path(const char* key, std::filesystem::path& out) {
    std::string s;
    get(key, s);
    if (doc_.contains(key)) out = s;
  }

  void get_path(const char* key, std::optional<std::filesystem::path>& out) {
    if (!doc_.contains(key)) return;
    seen_.insert(key);
    if (doc_.at(key).is_null()) {
      out.reset();
      return;
    }
    std::string s;
    get(key, s);
    out = s;
  }

  std::optional<Section> child(const char* key) {
    if (!doc_.contains(key)) return std::nullopt;
    seen_.insert(key);
    return Section(doc_.at(key), where(key));
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return doc_.at(key);
  }
  bool has(const char* key) const { return doc_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.contains(key)) {
        throw ArgumentError("unknown config key '" + where(key) + "'");
      }
    }
  }

 private:
  std::string where(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json& doc_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

json opt_path(const std::optional<std::filesystem::path>& p) {
  return p ? json(p->string()) : json(nullptr);
}

void resolve(std::filesystem::path& p, const std::filesystem::path& base) {
  if (!p.empty() && p.is_relative()) p = base / p;
}

void resolve(std::optional<std::filesystem::path>& p, const std::filesystem::path& base) {
  if (p) resolve(*p, base);
}

}  // namespace

std::string PipelineConfig::mode_tag() const {
  if (mode == head::Mode::kPseudoK) return "pseudo-k" + std::to_string(k);
  return head::to_string(mode);
}

PipelineConfig config_from_json(const json& doc) {
  PipelineConfig c;
  Section root(doc, "");
  if (auto s = root.child("dataset")) {
    s->get("source", c.dataset.source);
    s->get_path("annotations", c.dataset.annotations);
    s->get_path("split_file", c.dataset.split_file);
    s->get("train_fraction", c.dataset.train_fraction);
    s->get("val_fraction", c.dataset.val_fraction);
    s->get("vocabulary", c.dataset.vocabulary);
    s->get_path("image_dir", c.dataset.image_dir);
    s->finish();
  }
  if (auto s = root.child("synthetic")) {
    auto& sc = c.synthetic.scenes;
    s->get("n_scenes", sc.n_scenes);
    s->get("n_objects", sc.n_objects);
    s->get("n_predicates", sc.n_predicates);
    s->get("skew", sc.skew);
    s->get("min_relations", sc.min_relations);
    s->get("max_relations", sc.max_relations);
    s->get("distractors", sc.distractors);
    s->get("planted_dim", sc.planted_dim);
    s->get("subjects_per_predicate", sc.subjects_per_predicate);
    s->get("objects_per_predicate", sc.objects_per_predicate);
    s->get("image_size", sc.image_size);
    s->get("layout_jitter", sc.layout_jitter);
    s->get("train_fraction", sc.train_fraction);
    s->get("val_fraction", sc.val_fraction);
    s->get("align_scenes", c.synthetic.align_scenes);
    s->get("align_ridge", c.synthetic.align_ridge);
    if (auto r = s->child("render")) {
      r->get("background_noise", c.synthetic.render.background_noise);
      r->get("pixel_noise", c.synthetic.render.pixel_noise);
      r->get("instance_noise", c.synthetic.render.instance_noise);
      r->get("predicate_strength", c.synthetic.render.predicate_strength);
      r->finish();
    }
    s->finish();
  }
  if (auto s = root.child("encoder")) {
    s->get("id", c.encoder.id);
    s->get_path("weights", c.encoder.weights);
    if (auto t = s->child("stub")) {
      auto& st = c.encoder.stub;
      t->get("vocab_size", st.vocab_size);
      t->get("token_dim", st.token_dim);
      t->get("n_layers", st.n_layers);
      t->get("n_heads", st.n_heads);
      t->get("ffn_mult", st.ffn_mult);
      t->get("embed_dim", st.embed_dim);
      t->get("image_grid", st.image_grid);
      t->get("image_hidden", st.image_hidden);
      t->finish();
    }
    s->finish();
  }
  if (auto s = root.child("cache")) {
    s->get_path("dir", c.cache.dir);
    s->get("capacity", c.cache.capacity);
    s->finish();
  }
  if (auto s = root.child("retrieval")) {
    s->get("top_k", c.retrieval.top_k);
    s->finish();
  }
  if (auto s = root.child("prompt")) {
    s->get("n_context", c.prompt.n_context);
    s->get("hidden_dim", c.prompt.hidden_dim);
    s->get("epochs", c.prompt.epochs);
    s->get("learning_rate", c.prompt.learning_rate);
    s->get("batch_size", c.prompt.batch_size);
    s->get("momentum", c.prompt.momentum);
    s->get("checkpoint_every", c.prompt.checkpoint_every);
    s->finish();
  }
  if (auto s = root.child("head")) {
    s->get("hidden_dim", c.head.hidden_dim);
    s->get("output_dim", c.head.output_dim);
    s->get("attention_hidden", c.head.attention_hidden);
    s->get("epochs", c.head.epochs);
    s->get("batch_size", c.head.batch_size);
    s->get("momentum", c.head.momentum);
    s->get("no_relation_ratio", c.head.no_relation_ratio);
    if (s->has("schedule")) {
      c.head.schedule.clear();
      const json& steps = s->raw("schedule");
      if (!steps.is_array()) throw ArgumentError("config key 'head.schedule' must be an array");
      for (const auto& step : steps) {
        Section st(step, "head.schedule[]");
        head::LrStep lr;
        st.get("first_epoch", lr.first_epoch);
        st.get("learning_rate", lr.learning_rate);
        st.finish();
        c.head.schedule.push_back(lr);
      }
    }
    s->finish();
  }
  if (auto s = root.child("calibration")) {
    s->get("enabled", c.calibration.enabled);
    s->get("floor", c.calibration.floor);
    s->finish();
  }
  std::string mode = head::to_string(c.mode);
  root.get("mode", mode);
  c.mode = head::parse_mode(mode);
  root.get("k", c.k);
  root.get("seed", c.seed);
  root.get_path("output_dir", c.output_dir);
  root.finish();
  // The image tower reads the rendered channels; keep the two in step.
  c.encoder.stub.image_channels = c.synthetic.scenes.planted_dim;
  return c;
}

json to_json(const PipelineConfig& c) {
  const auto& sc = c.synthetic.scenes;
  const auto& r = c.synthetic.render;
  const auto& st = c.encoder.stub;
  json schedule = json::array();
  for (const auto& s : c.head.schedule) {
    schedule.push_back({{"first_epoch", s.first_epoch}, {"learning_rate", s.learning_rate}});
  }
  return {
      {"dataset",
       {{"source", c.dataset.source},
        {"annotations", c.dataset.annotations.string()},
        {"split_file", opt_path(c.dataset.split_file)},
        {"train_fraction", c.dataset.train_fraction},
        {"val_fraction", c.dataset.val_fraction},
        {"vocabulary", c.dataset.vocabulary},
        {"image_dir", c.dataset.image_dir.string()}}},
      {"synthetic",
       {{"n_scenes", sc.n_scenes},
        {"n_objects", sc.n_objects},
        {"n_predicates", sc.n_predicates},
        {"skew", sc.skew},
        {"min_relations", sc.min_relations},
        {"max_relations", sc.max_relations},
        {"distractors", sc.distractors},
        {"planted_dim", sc.planted_dim},
        {"subjects_per_predicate", sc.subjects_per_predicate},
        {"objects_per_predicate", sc.objects_per_predicate},
        {"image_size", sc.image_size},
        {"layout_jitter", sc.layout_jitter},
        {"train_fraction", sc.train_fraction},
        {"val_fraction", sc.val_fraction},
        {"align_scenes", c.synthetic.align_scenes},
        {"align_ridge", c.synthetic.align_ridge},
        {"render",
         {{"background_noise", r.background_noise},
          {"pixel_noise", r.pixel_noise},
          {"instance_noise", r.instance_noise},
          {"predicate_strength", r.predicate_strength}}}}},
      {"encoder",
       {{"id", c.encoder.id},
        {"weights", opt_path(c.encoder.weights)},
        {"stub",
         {{"vocab_size", st.vocab_size},
          {"token_dim", st.token_dim},
          {"n_layers", st.n_layers},
          {"n_heads", st.n_heads},
          {"ffn_mult", st.ffn_mult},
          {"embed_dim", st.embed_dim},
          {"image_grid", st.image_grid},
          {"image_hidden", st.image_hidden}}}}},
      {"cache", {{"dir", opt_path(c.cache.dir)}, {"capacity", c.cache.capacity}}},
      {"retrieval", {{"top_k", c.retrieval.top_k}}},
      {"prompt",
       {{"n_context", c.prompt.n_context},
        {"hidden_dim", c.prompt.hidden_dim},
        {"epochs", c.prompt.epochs},
        {"learning_rate", c.prompt.learning_rate},
        {"batch_size", c.prompt.batch_size},
        {"momentum", c.prompt.momentum},
        {"checkpoint_every", c.prompt.checkpoint_every}}},
      {"head",
       {{"hidden_dim", c.head.hidden_dim},
        {"output_dim", c.head.output_dim},
        {"attention_hidden", c.head.attention_hidden},
        {"epochs", c.head.epochs},
        {"batch_size", c.head.batch_size},
        {"momentum", c.head.momentum},
        {"no_relation_ratio", c.head.no_relation_ratio},
        {"schedule", schedule}}},
      {"calibration", {{"enabled", c.calibration.enabled}, {"floor", c.calibration.floor}}},
      {"mode", head::to_string(c.mode)},
      {"k", c.k},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()}};
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DependencyError("missing config file " + path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  PipelineConfig c = config_from_json(doc);
  const auto base = path.parent_path();
  resolve(c.dataset.annotations, base);
  resolve(c.dataset.split_file, base);
  resolve(c.dataset.image_dir, base);
  resolve(c.encoder.weights, base);
  resolve(c.cache.dir, base);
  resolve(c.output_dir, base);
  return c;
}

void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& msg) { throw ArgumentError("invalid config: " + msg); };
  if (c.dataset.source == "synthetic") {
    data::validate(c.synthetic.scenes);
    if (c.synthetic.align_scenes == 0) fail("synthetic.align_scenes must be positive");
    if (!(c.synthetic.align_ridge > 0.0)) fail("synthetic.align_ridge must be positive");
  } else if (c.dataset.source == "vg") {
    if (c.dataset.annotations.empty()) fail("dataset.annotations is required for source 'vg'");
    if (c.dataset.vocabulary != "derived" && c.dataset.vocabulary != "vg150") {
      fail("dataset.vocabulary must be 'derived' or 'vg150'");
    }
    if (c.dataset.image_dir.empty()) fail("dataset.image_dir is required for source 'vg'");
    if (!c.encoder.weights) fail("encoder.weights is required for source 'vg'");
  } else {
    fail("dataset.source must be 'synthetic' or 'vg'");
  }
  if (c.encoder.id != "stub-clip") {
    fail("encoder.id '" + c.encoder.id + "' is not available in this build (only 'stub-clip')");
  }
  if (c.retrieval.top_k == 0) fail("retrieval.top_k must be positive");
  if (c.k == 0) fail("k must be at least 1");
  if (c.mode == head::Mode::kPseudoK && c.k > c.retrieval.top_k) {
    fail("k = " + std::to_string(c.k) + " exceeds retrieval.top_k = " +
         std::to_string(c.retrieval.top_k));
  }
  if (c.prompt.n_context == 0) fail("prompt.n_context must be at least 1");
  if (c.prompt.batch_size == 0 || !(c.prompt.learning_rate > 0.0)) {
    fail("prompt.batch_size and prompt.learning_rate must be positive");
  }
  if (c.head.hidden_dim == 0 || c.head.output_dim == 0 || c.head.batch_size == 0) {
    fail("head dimensions and batch size must be positive");
  }
  if (c.head.epochs == 0) fail("head.epochs must be positive");
  if (!(c.head.no_relation_ratio > 0.0)) fail("head.no_relation_ratio must be positive");
  if (c.head.schedule.empty() || c.head.schedule.front().first_epoch != 1) {
    fail("head.schedule must start at epoch 1");
  }
  for (std::size_t i = 0; i < c.head.schedule.size(); ++i) {
    if (!(c.head.schedule[i].learning_rate > 0.0)) fail("head.schedule rates must be positive");
    if (i > 0 && c.head.schedule[i].first_epoch <= c.head.schedule[i - 1].first_epoch) {
      fail("head.schedule epochs must increase");
    }
  }
  if (!(c.calibration.floor > 0.0)) fail("calibration.floor must be positive");
  if (c.output_dir.empty()) fail("output_dir must not be empty");
}

std::filesystem::path cache_dir(const PipelineConfig& config) {
  if (const char* env = std::getenv(kCacheDirEnv); env && *env) return env;
  if (config.cache.dir) return *config.cache.dir;
  return config.output_dir / "cache";
}

}  // namespace crepe::pipeline
