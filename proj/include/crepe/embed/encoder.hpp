#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crepe/data/scene.hpp"
#include "crepe/embed/embedding.hpp"

namespace crepe::embed {

inline constexpr std::size_t kMaxTokens = 77;

// Opaque forward state kept for the backward pass of the text tower.
struct TextTrace {
  virtual ~TextTrace() = default;
};

// A frozen dual-tower vision-language encoder with token-level access to the
// text tower. Weights never change through this interface; the text tower
// exposes gradients with respect to its input token embeddings only.
class VisionLanguageEncoder {
 public:
  virtual ~VisionLanguageEncoder() = default;

  virtual std::string id() const = 0;
  // Stable digest of the weights; scopes caches and manifests.
  virtual std::string fingerprint() const = 0;
  virtual std::size_t embed_dim() const = 0;
  virtual std::size_t token_dim() const = 0;
  virtual std::size_t max_tokens() const { return kMaxTokens; }

  // Word tokens without start/end markers.
  virtual std::vector<int> tokenize(std::string_view text) const = 0;
  virtual int sos_token() const = 0;
  virtual int eos_token() const = 0;
  virtual Mat embed_tokens(std::span<const int> ids) const = 0;

  // Unnormalized text feature of a marker-bounded sequence of token
  // embeddings, read at the end-of-sequence position.
  virtual Vec text_forward(const Mat& tokens, std::unique_ptr<TextTrace>* trace) const = 0;
  // d(loss)/d(tokens) given d(loss)/d(text feature).
  virtual Mat text_backward(const TextTrace& trace, const Vec& grad_out) const = 0;

  // Unnormalized image feature of a region; throws ArgumentError for crops
  // under one pixel.
  virtual Vec image_forward(const Image& image, const data::BoundingBox& box) const = 0;
};

// [SOS] + tokens(text) + [EOS]; throws TokenLimitError past max_tokens().
TokenSequence tokenize_sequence(const VisionLanguageEncoder& encoder, std::string_view text);

// Unit-norm text embedding of a raw string (no template).
EmbeddingVector encode_text(const VisionLanguageEncoder& encoder, std::string_view text);

// Unit-norm embedding of an explicit token-embedding sequence.
EmbeddingVector encode_token_sequence(const VisionLanguageEncoder& encoder,
                                      const TokenSequence& sequence);

// Unit-norm image embedding of a box crop.
EmbeddingVector encode_image_region(const VisionLanguageEncoder& encoder, const Image& image,
                                    const data::BoundingBox& box);

void check_sequence(const VisionLanguageEncoder& encoder, const TokenSequence& sequence);

}  // namespace crepe::embed
