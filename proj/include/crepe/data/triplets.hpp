#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "crepe/data/scene.hpp"

namespace crepe::data {

struct Triplet {
  std::size_t subject = 0;
  std::size_t predicate = 0;
  std::size_t object = 0;

  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

// Observed <subject, predicate, object> label triplets, ordered
// lexicographically by their rendered text. Text embeddings (one row per
// entry) are attached by the embedding backend.
struct TripletVocabulary {
  std::vector<Triplet> entries;
  std::vector<std::string> texts;
  Eigen::MatrixXf embeddings;  // |entries| x d once attached, else 0 x 0

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool has_embeddings() const {
    return embeddings.rows() == static_cast<Eigen::Index>(entries.size()) && !entries.empty();
  }
};

// "{subject} {predicate} {object}".
std::string render_triplet(const Triplet& t, const Vocabulary& objects,
                           const Vocabulary& predicates);

TripletVocabulary build_triplet_vocabulary(const std::vector<const Scene*>& scenes,
                                           const Vocabulary& objects,
                                           const Vocabulary& predicates);

}  // namespace crepe::data
