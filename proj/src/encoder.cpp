#include "crepe/embed/encoder.hpp"

#include "crepe/errors.hpp"
#include "crepe/nn.hpp"

namespace crepe::embed {

EmbeddingVector EmbeddingVector::from(const Vec& v, bool normalize) {
  EmbeddingVector e;
  e.values = (normalize ? nn::normalized(v) : v).cast<float>();
  e.normalized = normalize;
  return e;
}

double cosine_sim(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw ArgumentError("cosine similarity: dimension mismatch (" + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()) + ")");
  }
  return nn::cosine(a, b);
}

double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_sim(a.as_double(), b.as_double());
}

void check_sequence(const VisionLanguageEncoder& encoder, const TokenSequence& sequence) {
  if (sequence.size() > encoder.max_tokens()) {
    throw TokenLimitError("token sequence of length " + std::to_string(sequence.size()) +
                          " exceeds the limit of " + std::to_string(encoder.max_tokens()));
  }
  if (sequence.size() < 2 || sequence.ids.front() != encoder.sos_token() ||
      sequence.ids.back() != encoder.eos_token()) {
    throw ArgumentError("token sequence must be bounded by start and end markers");
  }
  if (sequence.embeddings.rows() != static_cast<Eigen::Index>(sequence.size()) ||
      sequence.embeddings.cols() != static_cast<Eigen::Index>(encoder.token_dim())) {
    throw ArgumentError("token embedding matrix does not match the sequence");
  }
}

TokenSequence tokenize_sequence(const VisionLanguageEncoder& encoder, std::string_view text) {
  const auto words = encoder.tokenize(text);
  if (words.size() + 2 > encoder.max_tokens()) {
    throw TokenLimitError("text '" + std::string(text) + "' needs " +
                          std::to_string(words.size() + 2) + " tokens; the limit is " +
                          std::to_string(encoder.max_tokens()));
  }
  TokenSequence seq;
  seq.ids.reserve(words.size() + 2);
  seq.ids.push_back(encoder.sos_token());
  seq.ids.insert(seq.ids.end(), words.begin(), words.end());
  seq.ids.push_back(encoder.eos_token());
  seq.embeddings = encoder.embed_tokens(seq.ids);
  return seq;
}

EmbeddingVector encode_token_sequence(const VisionLanguageEncoder& encoder,
                                      const TokenSequence& sequence) {
  check_sequence(encoder, sequence);
  return EmbeddingVector::from(encoder.text_forward(sequence.embeddings, nullptr), true);
}

EmbeddingVector encode_text(const VisionLanguageEncoder& encoder, std::string_view text) {
  return encode_token_sequence(encoder, tokenize_sequence(encoder, text));
}

EmbeddingVector encode_image_region(const VisionLanguageEncoder& encoder, const Image& image,
                                    const data::BoundingBox& box) {
  return EmbeddingVector::from(encoder.image_forward(image, box), true);
}

}  // namespace crepe::embed
