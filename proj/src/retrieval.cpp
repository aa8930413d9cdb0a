#include "crepe/embed/retrieval.hpp"

#include <algorithm>
#include <numeric>

#include "crepe/errors.hpp"

namespace crepe::embed {

void attach_text_embeddings(data::TripletVocabulary& vocab, CachedEncoder& encoder) {
  const auto d = static_cast<Eigen::Index>(encoder.encoder().embed_dim());
  vocab.embeddings.resize(static_cast<Eigen::Index>(vocab.size()), d);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    vocab.embeddings.row(static_cast<Eigen::Index>(i)) = encoder.text(vocab.texts[i]).values;
  }
}

std::vector<PseudoLabel> retrieve_pseudo_labels(const EmbeddingVector& query,
                                                const data::TripletVocabulary& vocab,
                                                std::size_t k) {
  if (vocab.empty()) {
    throw RetrievalError("cannot retrieve pseudo-labels from an empty triplet vocabulary");
  }
  if (!vocab.has_embeddings()) {
    throw RetrievalError("triplet vocabulary has no text embeddings attached");
  }
  if (k == 0) {
    throw ArgumentError("pseudo-label count k must be at least 1");
  }
  if (static_cast<Eigen::Index>(query.dim()) != vocab.embeddings.cols()) {
    throw ArgumentError("query dimension does not match the vocabulary embeddings");
  }
  const Vec q = query.as_double();
  const double qn = q.norm();
  if (!(qn > 0.0)) {
    throw ArgumentError("cannot retrieve with a zero query vector");
  }
  std::vector<double> sims(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const Vec row = vocab.embeddings.row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
    sims[i] = q.dot(row) / (qn * row.norm());
  }
  std::vector<std::size_t> order(vocab.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = std::min(k, vocab.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return sims[a] != sims[b] ? sims[a] > sims[b] : a < b;
                    });
  std::vector<PseudoLabel> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({order[i], vocab.texts[order[i]], sims[order[i]]});
  }
  return out;
}

}  // namespace crepe::embed
