#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crepe/calibration/calibration.hpp"
#include "crepe/data/scene.hpp"
#include "crepe/geometry.hpp"
#include "crepe/nn.hpp"

namespace crepe::head {

using nn::Mat;
using nn::Vec;

// Which representations feed the head.
//   visual:          subject, object and union are image embeddings
//   visual-language: union image embedding, subject/object label text
//   pseudo-k:        union = attention over the top-K retrieved triplet texts
//   crepe:           union = learned-prompt text embedding
enum class Mode { kVisual, kVisualLanguage, kPseudoK, kCrepe };

std::string to_string(Mode mode);
Mode parse_mode(std::string_view text);  // throws ArgumentError

struct HeadDims {
  std::size_t embed_dim = 512;    // d
  std::size_t hidden_dim = 512;   // h
  std::size_t output_dim = 512;   // e
  std::size_t location_hidden = 32;
  std::size_t location_out = 16;
  std::size_t n_predicates = 0;   // K, without the no-relation class
  std::size_t attention_hidden = 0;  // 0 = no attention pooling
};

struct PredicateHeadState {
  nn::Mlp2 f_s;
  nn::Mlp2 f_o;
  nn::Mlp2 f_u;
  nn::Mlp2 location;
  nn::Linear f_p;          // (e + location_out) -> K + 1
  nn::Linear attention_v;  // d -> attention_hidden, tanh
  Vec attention_w;         // attention_hidden; empty when unused
  std::uint64_t seed = 0;

  std::size_t embed_dim() const { return f_u.in_dim(); }
  std::size_t output_dim() const { return f_u.out_dim(); }
  std::size_t n_classes() const { return f_p.out_dim(); }
  std::size_t n_predicates() const { return n_classes() - 1; }
  std::size_t no_relation() const { return n_classes() - 1; }
  bool has_attention() const { return attention_w.size() > 0; }
  HeadDims dims() const;

  nn::ParamViews params();
  nn::ConstParamViews params() const;

  friend bool operator==(const PredicateHeadState& a, const PredicateHeadState& b);
};

PredicateHeadState init_head(const HeadDims& dims, std::uint64_t seed);
PredicateHeadState zeros_like(const PredicateHeadState& state);

// f_u(u) - f_s(s) - f_o(o).
Vec predicate_embedding(const PredicateHeadState& state, const Vec& s_emb, const Vec& o_emb,
                        const Vec& u_emb);

// softmax(f_p([pred_emb ; location(loc)])).
Vec classify(const PredicateHeadState& state, const Vec& pred_emb,
             const geometry::LocationFeature& loc);

// Convex combination of the candidate rows (K x d) weighted by a softmax over
// w . tanh(V c_i + b). A single candidate is returned unchanged.
Vec attention_pool(const PredicateHeadState& state, const Mat& candidates,
                   Vec* weights = nullptr);

// One head input: subject/object representations, union candidates (one row
// unless pooling), the 19 location terms and the class label.
struct HeadExample {
  Vec s;
  Vec o;
  Mat u;
  std::array<double, geometry::LocationFeature::kDim> location{};
  std::size_t label = 0;
};

Vec predict(const PredicateHeadState& state, const HeadExample& example);

// Mean cross-entropy of a batch; accumulates mean gradients when asked.
double batch_loss(const PredicateHeadState& state, const std::vector<const HeadExample*>& batch,
                  PredicateHeadState* grads = nullptr);

// Ordered pairs without an annotated relation:
// min(ceil(ratio * |relations|), available) of them, seeded.
std::vector<std::pair<std::size_t, std::size_t>> sample_no_relation_pairs(const data::Scene& scene,
                                                                          double ratio,
                                                                          std::uint64_t seed);

// Piecewise-constant schedule: each step applies from its first epoch on.
struct LrStep {
  std::size_t first_epoch = 1;
  double learning_rate = 1e-3;
};
std::vector<LrStep> default_schedule();
double learning_rate_at(const std::vector<LrStep>& schedule, std::size_t epoch);

struct HeadTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  std::vector<LrStep> schedule = default_schedule();
  std::uint64_t seed = 0;
};

struct HeadTrainResult {
  PredicateHeadState state;        // best on validation
  PredicateHeadState final_state;  // after the last epoch
  std::vector<double> loss_trace;  // mean training loss per epoch
  std::vector<double> lr_trace;    // learning rate used in each epoch
  std::vector<double> val_trace;   // validation mean per-class accuracy per epoch
  std::size_t best_epoch = 0;
};

// Mean over predicate classes present in `examples` of top-1 accuracy,
// with the no-relation class excluded from the argmax.
double mean_class_accuracy(const PredicateHeadState& state,
                           const std::vector<HeadExample>& examples);

// Without validation examples the final state is kept.
HeadTrainResult train_head(PredicateHeadState state, const std::vector<HeadExample>& train,
                           const std::vector<HeadExample>& val, const HeadTrainConfig& config);

// Per-scene head inputs for every ordered entity pair.
struct SceneFeatures {
  std::string image_id;
  Mat entities;  // n_entities x d
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<Mat> unions;  // per pair: candidates x d

  const Mat& union_for(std::size_t s, std::size_t o) const;  // throws LookupError
};

HeadExample make_example(const data::Scene& scene, const SceneFeatures& features, std::size_t s,
                         std::size_t o, std::size_t label);

using PairDistributions = std::map<std::pair<std::size_t, std::size_t>, Vec>;

// Class scores for every ordered pair of a scene with at least one
// annotated relation (empty otherwise). The last entry is no-relation;
// calibration, when given, rescales the predicate entries.
PairDistributions predict_scene(const PredicateHeadState& state, const data::Scene& scene,
                                const SceneFeatures& features,
                                const calibration::CalibrationTable* calibration = nullptr);

// Versioned binary checkpoint: magic "CRPHEAD1", u32 version, dims header,
// u64 seed, then every parameter tensor.
void save_checkpoint(const PredicateHeadState& state, const std::filesystem::path& path);
PredicateHeadState load_checkpoint(const std::filesystem::path& path);

// One JSON line per scene:
// {"image_id", "pairs": [{"s", "o", "top": [[predicate, score], ...]}]}
// with the no-relation class masked out and `top_n` predicates per pair.
std::string prediction_line(const std::string& image_id, const PairDistributions& dists,
                            const data::Vocabulary& predicates, std::size_t top_n);

}  // namespace crepe::head
