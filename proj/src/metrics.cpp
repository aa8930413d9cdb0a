#include "crepe/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "crepe/errors.hpp"

namespace crepe::eval {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

RankedPrediction rank_scene(const std::string& image_id, const head::PairDistributions& dists,
                            std::size_t n_predicates) {
  struct Entry {
    RankedTriplet t;
    std::size_t pair_index;
  };
  std::vector<Entry> entries;
  entries.reserve(dists.size());
  std::size_t pair_index = 0;
  for (const auto& [pair, dist] : dists) {
    const auto n = std::min<Eigen::Index>(dist.size(), static_cast<Eigen::Index>(n_predicates));
    if (n == 0) {
      ++pair_index;
      continue;
    }
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < n; ++k) {
      if (dist(k) > dist(best)) best = k;
    }
    entries.push_back({{pair.first, pair.second, static_cast<std::size_t>(best), dist(best)},
                       pair_index++});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.t.score != b.t.score) return a.t.score > b.t.score;
    if (a.pair_index != b.pair_index) return a.pair_index < b.pair_index;
    return a.t.predicate_id < b.t.predicate_id;
  });
  RankedPrediction out;
  out.image_id = image_id;
  out.triplets.reserve(entries.size());
  for (const auto& e : entries) out.triplets.push_back(e.t);
  return out;
}

std::optional<double> RecallCounts::recall(std::size_t predicate) const {
  if (totals.at(predicate) == 0) return std::nullopt;
  return static_cast<double>(hits[predicate]) / static_cast<double>(totals[predicate]);
}

double RecallCounts::mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < totals.size(); ++c) {
    if (auto r = recall(c)) {
      sum += *r;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

RecallCounts recall_counts(const std::vector<RankedPrediction>& ranked,
                           const std::vector<const data::Scene*>& gt, std::size_t k,
                           std::size_t n_predicates) {
  std::unordered_map<std::string, const RankedPrediction*> by_id;
  for (const auto& r : ranked) by_id.emplace(r.image_id, &r);
  RecallCounts counts;
  counts.hits.assign(n_predicates, 0);
  counts.totals.assign(n_predicates, 0);
  for (const data::Scene* scene : gt) {
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> top;
    if (auto it = by_id.find(scene->image_id); it != by_id.end()) {
      const auto& list = it->second->triplets;
      for (std::size_t i = 0; i < std::min(k, list.size()); ++i) {
        top.emplace(list[i].subject_idx, list[i].object_idx, list[i].predicate_id);
      }
    }
    for (const auto& rel : scene->relations) {
      if (rel.predicate_id >= n_predicates) {
        throw ArgumentError("ground-truth predicate " + std::to_string(rel.predicate_id) +
                            " is outside the vocabulary");
      }
      ++counts.totals[rel.predicate_id];
      if (top.contains({rel.subject_idx, rel.object_idx, rel.predicate_id})) {
        ++counts.hits[rel.predicate_id];
      }
    }
  }
  return counts;
}

double mean_recall_at_k(const std::vector<RankedPrediction>& ranked,
                        const std::vector<const data::Scene*>& gt, std::size_t k,
                        std::size_t n_predicates) {
  return recall_counts(ranked, gt, k, n_predicates).mean();
}

std::string to_string(Group g) {
  switch (g) {
    case Group::kHead:
      return "head";
    case Group::kMid:
      return "mid";
    case Group::kTail:
      return "tail";
  }
  return "tail";
}

std::vector<std::size_t> predicate_frequency(const std::vector<const data::Scene*>& scenes,
                                             std::size_t n_predicates) {
  std::vector<std::size_t> freq(n_predicates, 0);
  for (const auto* s : scenes) {
    for (const auto& r : s->relations) {
      if (r.predicate_id < n_predicates) ++freq[r.predicate_id];
    }
  }
  return freq;
}

EvalReport per_predicate_report(const std::vector<RankedPrediction>& ranked,
                                const std::vector<const data::Scene*>& gt,
                                const data::Vocabulary& predicates,
                                const std::vector<std::size_t>& frequency, std::size_t k) {
  const std::size_t K = predicates.size();
  if (frequency.size() != K) {
    throw ArgumentError("frequency counts do not match the predicate vocabulary");
  }
  const RecallCounts counts = recall_counts(ranked, gt, k, K);
  EvalReport report;
  report.report_k = k;
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frequency[a] > frequency[b]; });
  std::map<Group, std::pair<double, std::size_t>> sums;
  for (std::size_t r = 0; r < K; ++r) {
    PredicateRow row;
    row.predicate_id = order[r];
    row.name = predicates.name(order[r]);
    row.frequency = frequency[order[r]];
    row.recall = counts.recall(order[r]);
    row.group = static_cast<Group>(std::min<std::size_t>(2, 3 * r / K));
    if (row.recall) {
      sums[row.group].first += *row.recall;
      ++sums[row.group].second;
    }
    report.rows.push_back(std::move(row));
  }
  for (const auto& [g, s] : sums) report.group_means[g] = s.first / static_cast<double>(s.second);
  return report;
}

EvalReport evaluate(const std::vector<RankedPrediction>& ranked,
                    const std::vector<const data::Scene*>& gt, const data::Vocabulary& predicates,
                    const std::vector<std::size_t>& frequency) {
  EvalReport report = per_predicate_report(ranked, gt, predicates, frequency, 50);
  for (std::size_t k : kRecallKs) {
    report.mean_recall[k] = mean_recall_at_k(ranked, gt, k, predicates.size());
  }
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json mr = nlohmann::json::object();
  for (const auto& [k, v] : report.mean_recall) mr["mR@" + std::to_string(k)] = v;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"predicate", r.name},
                    {"frequency", r.frequency},
                    {"recall_at_" + std::to_string(report.report_k),
                     r.recall ? nlohmann::json(*r.recall) : nlohmann::json(nullptr)},
                    {"group", to_string(r.group)}});
  }
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [g, v] : report.group_means) groups[to_string(g)] = v;
  return {{"mean_recall", mr},
          {"per_predicate", rows},
          {"group_means", groups},
          {"config", report.config}};
}

std::string to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "metric,value\n";
  for (const auto& [k, v] : report.mean_recall) os << "mR@" << k << ',' << fmt(v) << '\n';
  for (const auto& [g, v] : report.group_means) {
    os << to_string(g) << "_R@" << report.report_k << ',' << fmt(v) << '\n';
  }
  return os.str();
}

std::string plot_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "predicate,frequency,recall_at_" << report.report_k << ",group\n";
  for (const auto& r : report.rows) {
    os << r.name << ',' << r.frequency << ',' << (r.recall ? fmt(*r.recall) : "") << ','
       << to_string(r.group) << '\n';
  }
  return os.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path, const std::filesystem::path& plot_path) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
  };
  write(json_path, to_json(report).dump(2) + "\n");
  write(csv_path, to_csv(report));
  write(plot_path, plot_csv(report));
}

std::map<std::string, head::PairDistributions> read_prediction_dump(
    const std::filesystem::path& path, const data::Vocabulary& predicates) {
  std::ifstream in(path);
  if (!in) {
    throw DependencyError("missing prediction dump " + path.string());
  }
  std::map<std::string, head::PairDistributions> out;
  std::string line;
  std::size_t line_no = 0;
  const auto K = static_cast<Eigen::Index>(predicates.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      head::PairDistributions dists;
      for (const auto& p : doc.at("pairs")) {
        head::Vec scores = head::Vec::Constant(K, -std::numeric_limits<double>::infinity());
        for (const auto& entry : p.at("top")) {
          scores(static_cast<Eigen::Index>(predicates.id(entry.at(0).get<std::string>()))) =
              entry.at(1).get<double>();
        }
        dists.emplace(std::make_pair(p.at("s").get<std::size_t>(), p.at("o").get<std::size_t>()),
                      std::move(scores));
      }
      out[doc.at("image_id").get<std::string>()] = std::move(dists);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("prediction dump " + path.string() + " line " + std::to_string(line_no) +
                       ": " + e.what());
    }
  }
  return out;
}

}  // namespace crepe::eval
