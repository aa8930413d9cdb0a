#include "crepe/pipeline/artifacts.hpp"

#include <fstream>

#include "crepe/errors.hpp"
#include "crepe/util/binary_io.hpp"

namespace crepe::pipeline {
namespace {

constexpr char kPseudoMagic[] = "CRPPSL01";
constexpr char kFeatureMagic[] = "CRPFEAT1";
constexpr std::uint32_t kVersion = 1;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("missing artifact " + path.string());
  return in;
}

void write_u32(std::ostream& out, std::size_t v) {
  io::write_u32(out, static_cast<std::uint32_t>(v));
}

}  // namespace

void save_pseudo_labels(const std::vector<ScenePseudoLabels>& scenes, std::size_t top_k,
                        const std::filesystem::path& path) {
  auto out = open_out(path);
  io::write_bytes(out, {kPseudoMagic, 8});
  io::write_u32(out, kVersion);
  write_u32(out, top_k);
  write_u32(out, scenes.size());
  for (const auto& s : scenes) {
    io::write_string(out, s.image_id);
    write_u32(out, s.pairs.size());
    for (std::size_t i = 0; i < s.pairs.size(); ++i) {
      write_u32(out, s.pairs[i].first);
      write_u32(out, s.pairs[i].second);
      write_u32(out, s.labels[i].size());
      for (const auto& [index, sim] : s.labels[i]) {
        write_u32(out, index);
        io::write_f64(out, sim);
      }
    }
  }
}

std::map<std::string, ScenePseudoLabels> load_pseudo_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  io::expect_magic(in, {kPseudoMagic, 8}, "pseudo-label file");
  if (io::read_u32(in) != kVersion) throw FormatError("unsupported pseudo-label file version");
  io::read_u32(in);  // top_k
  const std::uint32_t n = io::read_u32(in);
  std::map<std::string, ScenePseudoLabels> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    ScenePseudoLabels s;
    s.image_id = io::read_string(in);
    const std::uint32_t pairs = io::read_u32(in);
    for (std::uint32_t p = 0; p < pairs; ++p) {
      const std::size_t a = io::read_u32(in);
      const std::size_t b = io::read_u32(in);
      s.pairs.emplace_back(a, b);
      std::vector<std::pair<std::size_t, double>> labels(io::read_u32(in));
      for (auto& l : labels) {
        l.first = io::read_u32(in);
        l.second = io::read_f64(in);
      }
      s.labels.push_back(std::move(labels));
    }
    out.emplace(s.image_id, std::move(s));
  }
  return out;
}

void save_features(const std::vector<head::SceneFeatures>& scenes, std::size_t dim,
                   const std::filesystem::path& path) {
  auto out = open_out(path);
  io::write_bytes(out, {kFeatureMagic, 8});
  io::write_u32(out, kVersion);
  write_u32(out, dim);
  write_u32(out, scenes.size());
  for (const auto& s : scenes) {
    io::write_string(out, s.image_id);
    io::write_matrix(out, s.entities);
    write_u32(out, s.pairs.size());
    for (std::size_t i = 0; i < s.pairs.size(); ++i) {
      write_u32(out, s.pairs[i].first);
      write_u32(out, s.pairs[i].second);
      io::write_matrix(out, s.unions[i]);
    }
  }
}

std::map<std::string, head::SceneFeatures> load_features(const std::filesystem::path& path) {
  auto in = open_in(path);
  io::expect_magic(in, {kFeatureMagic, 8}, "feature file");
  if (io::read_u32(in) != kVersion) throw FormatError("unsupported feature file version");
  const std::uint32_t dim = io::read_u32(in);
  const std::uint32_t n = io::read_u32(in);
  std::map<std::string, head::SceneFeatures> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    head::SceneFeatures s;
    s.image_id = io::read_string(in);
    s.entities = io::read_matrix(in);
    const std::uint32_t pairs = io::read_u32(in);
    for (std::uint32_t p = 0; p < pairs; ++p) {
      const std::size_t a = io::read_u32(in);
      const std::size_t b = io::read_u32(in);
      s.pairs.emplace_back(a, b);
      s.unions.push_back(io::read_matrix(in));
      if (s.unions.back().cols() != static_cast<Eigen::Index>(dim)) {
        throw FormatError("feature file " + path.string() + " has a union of the wrong width");
      }
    }
    out.emplace(s.image_id, std::move(s));
  }
  return out;
}

void save_triplets(const data::TripletVocabulary& vocab, const std::filesystem::path& path) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : vocab.entries) entries.push_back({t.subject, t.predicate, t.object});
  write_json({{"entries", entries}, {"texts", vocab.texts}}, path);
}

data::TripletVocabulary load_triplets(const std::filesystem::path& path) {
  const auto doc = read_json(path);
  data::TripletVocabulary v;
  try {
    for (const auto& e : doc.at("entries")) {
      v.entries.push_back(
          {e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<std::size_t>()});
    }
    v.texts = doc.at("texts").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed triplet vocabulary " + path.string() + ": " + e.what());
  }
  if (v.texts.size() != v.entries.size()) {
    throw FormatError("triplet vocabulary " + path.string() + " has mismatched lists");
  }
  return v;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing artifact " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& doc, const std::filesystem::path& path) {
  write_text(doc.dump(2) + "\n", path);
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace crepe::pipeline
