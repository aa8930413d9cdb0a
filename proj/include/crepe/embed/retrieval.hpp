#pragma once

#include <string>
#include <vector>

#include "crepe/data/triplets.hpp"
#include "crepe/embed/cache.hpp"
#include "crepe/embed/embedding.hpp"

namespace crepe::embed {

struct PseudoLabel {
  std::size_t index = 0;  // position in the triplet vocabulary
  std::string text;
  double similarity = 0.0;
};

// Encodes every vocabulary entry (through the cache) and attaches the rows.
void attach_text_embeddings(data::TripletVocabulary& vocab, CachedEncoder& encoder);

// Exact full scan: top-min(k, |vocab|) entries by descending cosine
// similarity, ties by ascending vocabulary index.
std::vector<PseudoLabel> retrieve_pseudo_labels(const EmbeddingVector& query,
                                                const data::TripletVocabulary& vocab,
                                                std::size_t k);

}  // namespace crepe::embed
