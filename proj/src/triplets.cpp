#include "crepe/data/triplets.hpp"

#include <map>

namespace crepe::data {

std::string render_triplet(const Triplet& t, const Vocabulary& objects,
                           const Vocabulary& predicates) {
  return objects.name(t.subject) + " " + predicates.name(t.predicate) + " " +
         objects.name(t.object);
}

TripletVocabulary build_triplet_vocabulary(const std::vector<const Scene*>& scenes,
                                           const Vocabulary& objects,
                                           const Vocabulary& predicates) {
  // Keyed by text so ordering is lexicographic on the rendered string.
  std::map<std::string, Triplet> unique;
  for (const Scene* scene : scenes) {
    for (const auto& r : scene->relations) {
      const Triplet t{scene->entities[r.subject_idx].label_id, r.predicate_id,
                      scene->entities[r.object_idx].label_id};
      unique.emplace(render_triplet(t, objects, predicates), t);
    }
  }
  TripletVocabulary vocab;
  vocab.entries.reserve(unique.size());
  vocab.texts.reserve(unique.size());
  for (auto& [text, t] : unique) {
    vocab.texts.push_back(text);
    vocab.entries.push_back(t);
  }
  return vocab;
}

}  // namespace crepe::data
