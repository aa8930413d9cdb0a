#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "crepe/embed/embedding.hpp"
#include "crepe/embed/encoder.hpp"
#include "crepe/nn.hpp"

namespace crepe::prompt {

using nn::Mat;
using nn::Vec;

// Token id carried by learned context positions; they have no vocabulary row.
inline constexpr int kContextToken = -1;

// Learnable union-box prompt generator: M context vectors in the encoder's
// token-embedding space plus a bias MLP mapping the union image embedding
// to a shift added to every context vector.
struct PromptLearnerState {
  Mat context;       // M x token_dim
  nn::Mlp2 bias_mlp; // embed_dim -> hidden -> token_dim
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;

  std::size_t n_context() const { return static_cast<std::size_t>(context.rows()); }
  std::size_t token_dim() const { return static_cast<std::size_t>(context.cols()); }
  std::size_t embed_dim() const { return bias_mlp.in_dim(); }
  std::size_t hidden_dim() const { return bias_mlp.hidden_dim(); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(context.size()) + bias_mlp.parameter_count();
  }

  nn::ParamViews params();
  nn::ConstParamViews params() const;

  friend bool operator==(const PromptLearnerState& a, const PromptLearnerState& b);
};

// Context ~ N(0, 0.02^2); bias MLP with fan-in uniform init.
PromptLearnerState init_prompt_learner(std::size_t n_context, std::size_t token_dim,
                                       std::size_t embed_dim, std::size_t hidden_dim,
                                       std::uint64_t seed);

// pi = h(u_img). Throws ArgumentError on a dimension mismatch.
Vec compute_bias(const PromptLearnerState& state, const Vec& u_img,
                 nn::Mlp2::Trace* trace = nullptr);
Vec compute_bias(const PromptLearnerState& state, const embed::EmbeddingVector& u_img);

// [SOS] subject (v_1+pi .. v_M+pi) object [EOS].
struct AssembledPrompt {
  embed::TokenSequence sequence;
  std::size_t context_begin = 0;
  std::size_t n_context = 0;
};

AssembledPrompt assemble_prompt(const PromptLearnerState& state,
                                const embed::VisionLanguageEncoder& encoder,
                                std::string_view subject_label, std::string_view object_label,
                                const Vec& u_img);

// Unit-norm text embedding of the assembled prompt.
embed::EmbeddingVector union_text_embedding(const PromptLearnerState& state,
                                            const embed::VisionLanguageEncoder& encoder,
                                            std::string_view subject_label,
                                            std::string_view object_label,
                                            const embed::EmbeddingVector& u_img);

// -log(e^a / (e^a + e^b)) with a = cos(u_img, u_txt), b = cos(u_img, u_hat).
double contrastive_loss(const Vec& u_img, const Vec& u_txt, const Vec& u_hat);
double contrastive_loss(const embed::EmbeddingVector& u_img, const embed::EmbeddingVector& u_txt,
                        const embed::EmbeddingVector& u_hat);
// Same loss from the two similarities.
double contrastive_loss_from_sims(double sim_pos, double sim_neg);

// One training relation: labels, its union image embedding and the text
// embedding of its retrieved pseudo-label.
struct PromptSample {
  std::string id;
  std::string subject;
  std::string object;
  Vec u_img;
  Vec negative;
};

struct PromptGradients {
  Mat context;
  nn::Mlp2 bias_mlp;

  static PromptGradients zeros_like(const PromptLearnerState& state);
  nn::ConstParamViews params() const;
};

struct SampleResult {
  double loss = 0.0;
  double sim_pos = 0.0;
  double sim_neg = 0.0;
};

// Loss of one sample; accumulates d(loss)/d(phi) into `grads` when given.
SampleResult sample_loss(const PromptLearnerState& state,
                         const embed::VisionLanguageEncoder& encoder, const PromptSample& sample,
                         PromptGradients* grads = nullptr);

double mean_loss(const PromptLearnerState& state, const embed::VisionLanguageEncoder& encoder,
                 const std::vector<PromptSample>& samples);

struct PromptTrainConfig {
  std::size_t epochs = 500;
  double learning_rate = 2e-3;
  std::size_t batch_size = 64;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables
  std::function<void(const PromptLearnerState&)> on_checkpoint;
};

struct PromptTrainResult {
  PromptLearnerState state;
  std::vector<double> loss_trace;  // mean loss seen during each epoch
};

// Minibatch SGD on the mean loss. Only the learner's parameters move.
// Throws TrainingError naming the epoch and sample on a non-finite loss.
PromptTrainResult train_prompt_learner(PromptLearnerState state,
                                       const std::vector<PromptSample>& samples,
                                       const embed::VisionLanguageEncoder& encoder,
                                       const PromptTrainConfig& config);

// Versioned binary checkpoint: magic "CRPPRMT1", u32 version, u32 M,
// u32 token_dim, u32 embed_dim, u32 hidden, u64 seed, u64 epoch, encoder
// fingerprint string, then context matrix and bias MLP.
void save_checkpoint(const PromptLearnerState& state, const std::string& encoder_fingerprint,
                     const std::filesystem::path& path);
PromptLearnerState load_checkpoint(const std::filesystem::path& path,
                                   std::string* encoder_fingerprint = nullptr);

// "epoch,mean_loss" rows, epochs counted from 1.
void write_loss_trace(const std::vector<double>& trace, const std::filesystem::path& path);

}  // namespace crepe::prompt
