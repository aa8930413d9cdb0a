#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "crepe/embed/encoder.hpp"

namespace crepe::embed {

struct StubClipConfig {
  std::size_t vocab_size = 4096;  // hashed word buckets, ids 0..2 reserved
  std::size_t token_dim = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 4;
  std::size_t embed_dim = 64;
  std::size_t image_channels = 16;
  std::size_t image_grid = 2;
  std::size_t image_hidden = 0;  // fixed random ReLU features ahead of the projection; 0 = linear
  std::uint64_t seed = 0;
};

// A miniature CLIP with frozen random weights: a hashed word-level
// tokenizer, a pre-LN causal transformer text tower read at the
// end-of-sequence position, and a grid-pooled image tower (linear, or
// linear plus a frozen random ReLU layer). The image projection can be fitted to the text tower so the two towers share one
// embedding space.
class StubClip final : public VisionLanguageEncoder {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;

  static StubClip create(const StubClipConfig& config);
  static StubClip load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const StubClipConfig& config() const { return config_; }

  std::string id() const override { return "stub-clip"; }
  std::string fingerprint() const override { return fingerprint_; }
  std::size_t embed_dim() const override { return config_.embed_dim; }
  std::size_t token_dim() const override { return config_.token_dim; }

  std::vector<int> tokenize(std::string_view text) const override;
  int sos_token() const override { return kSos; }
  int eos_token() const override { return kEos; }
  Mat embed_tokens(std::span<const int> ids) const override;

  Vec text_forward(const Mat& tokens, std::unique_ptr<TextTrace>* trace) const override;
  Mat text_backward(const TextTrace& trace, const Vec& grad_out) const override;

  Vec image_forward(const Image& image, const data::BoundingBox& box) const override;

  // Standardized grid-pooled crop: the image tower's input features.
  Vec image_features(const Image& image, const data::BoundingBox& box) const;
  std::size_t image_feature_dim() const {
    return config_.image_grid * config_.image_grid * config_.image_channels;
  }
  // Input width of the image projection: standardized features plus hidden units.
  std::size_t image_projection_dim() const { return image_feature_dim() + config_.image_hidden; }

  // Least-squares fit of the image projection (ridge-regularized, bias
  // unpenalized) mapping raw pooled crops to target embeddings. Also sets
  // the feature standardization from the sample statistics.
  void align_image_tower(const std::vector<Vec>& pooled_crops, const std::vector<Vec>& targets,
                         double ridge);

  // Copy of every frozen weight, for bit-identity checks.
  std::vector<double> flat_weights() const;

 private:
  struct Block {
    Vec ln1_gain, ln1_bias;
    Mat w_q, w_k, w_v, w_o;  // out x in
    Vec b_q, b_k, b_v, b_o;
    Vec ln2_gain, ln2_bias;
    Mat w_fc, w_proj;
    Vec b_fc, b_proj;
  };

  StubClip() = default;
  void refresh_fingerprint();

  StubClipConfig config_;
  Mat token_embedding_;  // vocab x token_dim
  Mat positional_;       // max_tokens x token_dim
  std::vector<Block> blocks_;
  Vec lnf_gain_, lnf_bias_;
  Mat text_projection_;   // embed_dim x token_dim
  Vec expand(const Vec& standardized) const;

  Vec feature_mean_, feature_std_;
  Mat hidden_weight_;     // image_hidden x feature_dim
  Vec hidden_bias_;
  Mat image_projection_;  // embed_dim x projection_dim
  Vec image_bias_;
  std::string fingerprint_;
};

}  // namespace crepe::embed
