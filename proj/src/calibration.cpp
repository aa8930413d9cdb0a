#include "crepe/calibration/calibration.hpp"

#include <cmath>
#include <fstream>

#include "crepe/errors.hpp"
#include "crepe/util/log.hpp"

namespace crepe::calibration {

CalibrationTable CalibrationTable::identity(std::vector<std::string> class_names) {
  CalibrationTable t;
  t.beta.assign(class_names.size(), 1.0);
  t.class_names = std::move(class_names);
  return t;
}

CalibrationTable estimate_frequencies(const std::vector<Vec>& probs,
                                      const std::vector<std::size_t>& labels,
                                      const std::vector<std::string>& class_names,
                                      double floor) {
  if (probs.size() != labels.size()) {
    throw ArgumentError("calibration: prediction and label counts differ");
  }
  if (!(floor > 0.0) || !std::isfinite(floor)) {
    throw ArgumentError("calibration floor must be positive and finite");
  }
  const std::size_t K = class_names.size();
  std::vector<double> sum(K, 0.0);
  std::vector<std::size_t> count(K, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto n = static_cast<std::size_t>(probs[i].size());
    if (n != K && n != K + 1) {
      throw ArgumentError("calibration: prediction " + std::to_string(i) + " has " +
                          std::to_string(n) + " classes, expected " + std::to_string(K));
    }
    if (labels[i] >= K) {
      throw ArgumentError("calibration: label " + std::to_string(labels[i]) +
                          " is not a predicate class");
    }
    sum[labels[i]] += probs[i](static_cast<Eigen::Index>(labels[i]));
    ++count[labels[i]];
  }
  CalibrationTable t;
  t.class_names = class_names;
  t.beta.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (count[k] == 0) {
      log::warn("calibration: predicate '" + class_names[k] +
                "' has no validation examples; using the floor " + std::to_string(floor));
      t.beta[k] = floor;
    } else if (sum[k] > 0.0) {
      t.beta[k] = sum[k] / static_cast<double>(count[k]);
    } else {
      log::warn("calibration: predicate '" + class_names[k] +
                "' received zero probability on every example; using the floor");
      t.beta[k] = floor;
    }
  }
  return t;
}

Vec adjust(const Vec& dist, const CalibrationTable& table) {
  const std::size_t K = table.size();
  const auto n = static_cast<std::size_t>(dist.size());
  if (n != K && n != K + 1) {
    throw ArgumentError("calibration: distribution has " + std::to_string(n) +
                        " classes but the table has " + std::to_string(K));
  }
  Vec out = dist;
  for (std::size_t k = 0; k < K; ++k) out(static_cast<Eigen::Index>(k)) /= table.beta[k];
  return out;
}

nlohmann::json to_json(const CalibrationTable& table) {
  nlohmann::json beta = nlohmann::json::object();
  for (std::size_t k = 0; k < table.size(); ++k) beta[table.class_names[k]] = table.beta[k];
  return {{"beta", beta}, {"class_order", table.class_names}, {"provenance", table.provenance}};
}

CalibrationTable from_json(const nlohmann::json& doc) {
  try {
    CalibrationTable t;
    t.class_names = doc.at("class_order").get<std::vector<std::string>>();
    const auto& beta = doc.at("beta");
    for (const auto& name : t.class_names) {
      const double b = beta.at(name).get<double>();
      if (!(b > 0.0) || !std::isfinite(b)) {
        throw FormatError("calibration table has a non-positive beta for '" + name + "'");
      }
      t.beta.push_back(b);
    }
    t.provenance = doc.value("provenance", nlohmann::json::object());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed calibration table: ") + e.what());
  }
}

void save(const CalibrationTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write calibration table " + path.string());
  }
  out << to_json(table).dump(2) << '\n';
}

CalibrationTable load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DependencyError("missing calibration table " + path.string());
  }
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("calibration table " + path.string() + ": " + e.what());
  }
}

}  // namespace crepe::calibration
