#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <random>
#include <string>

#include "crepe/calibration/calibration.hpp"
#include "crepe/data/scene.hpp"
#include "crepe/embed/stub_clip.hpp"
#include "crepe/head/predicate_head.hpp"
#include "crepe/nn.hpp"
#include "crepe/prompt/prompt_learner.hpp"

namespace crepe::testing {

// A deliberately small encoder so gradient checks and toy runs stay fast.
inline embed::StubClip tiny_encoder(std::uint64_t seed = 11, std::size_t embed_dim = 16) {
  embed::StubClipConfig c;
  c.vocab_size = 256;
  c.token_dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.embed_dim = embed_dim;
  c.image_channels = 3;
  c.image_grid = 2;
  c.seed = seed;
  return embed::StubClip::create(c);
}

// |a - n| / max(|a|, |n|), with a floor that keeps exact zeros comparable.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-10});
  return std::abs(analytic - numeric) / scale;
}

// Central difference of f with respect to *x.
inline double central_difference(double* x, const std::function<double()>& f, double h = 1e-5) {
  const double saved = *x;
  *x = saved + h;
  const double up = f();
  *x = saved - h;
  const double down = f();
  *x = saved;
  return (up - down) / (2.0 * h);
}

// Result of a finite-difference comparison over sampled coordinates.
struct GradCheck {
  std::size_t checked = 0;
  double worst = 0.0;
};

// Samples `count` coordinates uniformly over the flattened parameter views
// and compares analytic gradients against central differences of `loss`.
inline GradCheck check_gradients(const nn::ParamViews& params, const nn::ConstParamViews& grads,
                                 const std::function<double()>& loss, std::size_t count,
                                 std::uint64_t seed, double h = 1e-5) {
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) coords.emplace_back(t, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  GradCheck out;
  for (std::size_t c = 0; c < std::min(count, coords.size()); ++c) {
    const auto [t, i] = coords[c];
    const double numeric = central_difference(&params[t][i], loss, h);
    out.worst = std::max(out.worst, relative_error(grads[t][i], numeric));
    ++out.checked;
  }
  return out;
}

inline data::Scene make_scene(std::string id, double w, double h,
                              std::vector<data::Entity> entities,
                              std::vector<data::RelationInstance> relations) {
  data::Scene s;
  s.image_id = std::move(id);
  s.width = w;
  s.height = h;
  s.entities = std::move(entities);
  s.relations = std::move(relations);
  return s;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("crepe-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Toy contrastive problem: each union image embedding is the text embedding
// of its true triplet, and the negative is the text of a triplet with a
// different subject and object.
inline std::vector<prompt::PromptSample> toy_prompt_samples(const embed::VisionLanguageEncoder& enc,
                                                            std::size_t n, std::uint64_t seed) {
  const std::vector<std::string> objects = {"dog", "cat", "man", "horse", "table", "grass"};
  const std::vector<std::string> predicates = {"on", "under", "riding", "near"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> obj(0, objects.size() - 1);
  std::uniform_int_distribution<std::size_t> pred(0, predicates.size() - 1);
  std::vector<prompt::PromptSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = obj(rng), o = obj(rng), p = pred(rng);
    std::size_t s2 = obj(rng), o2 = obj(rng);
    while (s2 == s) s2 = obj(rng);
    while (o2 == o) o2 = obj(rng);
    prompt::PromptSample x;
    x.id = "toy" + std::to_string(i);
    x.subject = objects[s];
    x.object = objects[o];
    x.u_img = embed::encode_text(enc, objects[s] + " " + predicates[p] + " " + objects[o]).as_double();
    x.negative =
        embed::encode_text(enc, objects[s2] + " " + predicates[p] + " " + objects[o2]).as_double();
    out.push_back(std::move(x));
  }
  return out;
}

// Planted predicate problem: entities carry a class vector, and the union
// embedding adds a per-predicate vector on top of both classes. Labels are
// uniform; the head must recover the predicate from u - s - o structure.
struct PlantedHeadProblem {
  std::vector<head::HeadExample> train;
  std::vector<head::HeadExample> test;
};

inline PlantedHeadProblem planted_head_problem(std::size_t n_predicates, std::size_t n_relations,
                                               std::size_t dim, std::uint64_t seed,
                                               double test_fraction = 0.2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_unit = [&] {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    for (auto& x : v) x = normal(rng);
    return Eigen::VectorXd(v.normalized());
  };
  const std::size_t n_objects = 8;
  std::vector<Eigen::VectorXd> objects, predicates;
  for (std::size_t i = 0; i < n_objects; ++i) objects.push_back(random_unit());
  for (std::size_t i = 0; i < n_predicates; ++i) predicates.push_back(random_unit());
  std::uniform_int_distribution<std::size_t> obj(0, n_objects - 1);
  std::uniform_int_distribution<std::size_t> pred(0, n_predicates - 1);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  PlantedHeadProblem out;
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(n_relations));
  for (std::size_t i = 0; i < n_relations; ++i) {
    const std::size_t s = obj(rng), o = obj(rng), p = pred(rng);
    head::HeadExample ex;
    ex.s = (objects[s] + 0.1 * random_unit()).normalized();
    ex.o = (objects[o] + 0.1 * random_unit()).normalized();
    ex.u = (objects[s] + objects[o] + predicates[p] + 0.1 * random_unit()).normalized().transpose();
    for (auto& x : ex.location) x = uniform(rng);
    ex.label = p;
    (i < n_relations - n_test ? out.train : out.test).push_back(std::move(ex));
  }
  return out;
}

// A biased classifier on a 0.9/0.05/0.05 skewed problem: its logits carry
// the class signal plus the log prior. Returns mean per-class recall@1 on a
// test draw without and with frequencies estimated on a validation draw.
struct SkewedCalibrationResult {
  double uncalibrated = 0.0;
  double calibrated = 0.0;
};

inline SkewedCalibrationResult skewed_calibration_check(std::uint64_t seed, std::size_t n = 4000) {
  const std::vector<double> prior = {0.9, 0.05, 0.05};
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> label(prior.begin(), prior.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  auto draw = [&](std::vector<Eigen::VectorXd>& probs, std::vector<std::size_t>& labels) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = label(rng);
      Eigen::VectorXd logits(3);
      for (Eigen::Index k = 0; k < 3; ++k) {
        logits(k) = (static_cast<std::size_t>(k) == y ? 1.5 : 0.0) +
                    std::log(prior[static_cast<std::size_t>(k)]) + noise(rng);
      }
      probs.push_back(nn::softmax(logits));
      labels.push_back(y);
    }
  };
  std::vector<Eigen::VectorXd> val_p, test_p;
  std::vector<std::size_t> val_y, test_y;
  draw(val_p, val_y);
  draw(test_p, test_y);
  const auto table = calibration::estimate_frequencies(val_p, val_y, {"a", "b", "c"});
  auto recall = [&](bool calibrate) {
    std::vector<double> hit(3, 0.0), total(3, 0.0);
    for (std::size_t i = 0; i < test_p.size(); ++i) {
      const Eigen::VectorXd s = calibrate ? calibration::adjust(test_p[i], table) : test_p[i];
      Eigen::Index best = 0;
      s.maxCoeff(&best);
      total[test_y[i]] += 1.0;
      if (static_cast<std::size_t>(best) == test_y[i]) hit[test_y[i]] += 1.0;
    }
    return (hit[0] / total[0] + hit[1] / total[1] + hit[2] / total[2]) / 3.0;
  };
  return {recall(false), recall(true)};
}

// Random small evaluation instance: up to 5 scenes of 3 entities, up to 4
// scored pairs each, up to 4 predicates, scores on a coarse grid so ties occur.
struct MetricInstance {
  std::vector<data::Scene> scenes;
  std::vector<head::PairDistributions> dists;
  std::size_t n_predicates = 0;
};

inline MetricInstance random_metric_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n_scenes(1, 5), n_preds(1, 4), n_pairs(1, 4);
  std::uniform_int_distribution<int> grid(0, 4);
  MetricInstance inst;
  inst.n_predicates = n_preds(rng);
  std::uniform_int_distribution<std::size_t> pred(0, inst.n_predicates - 1);
  const std::size_t scenes = n_scenes(rng);
  for (std::size_t i = 0; i < scenes; ++i) {
    data::Scene sc = make_scene("m" + std::to_string(i), 30, 30,
                                {{0, {0, 0, 5, 5}}, {0, {10, 0, 5, 5}}, {0, {0, 10, 5, 5}}}, {});
    auto pairs = data::ordered_pairs(sc);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(n_pairs(rng));
    head::PairDistributions d;
    for (const auto& p : pairs) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(inst.n_predicates + 1));
      for (auto& x : v) x = 0.25 * grid(rng);
      d[p] = v;
    }
    std::uniform_int_distribution<std::size_t> n_rel(0, 3);
    const auto all = data::ordered_pairs(sc);
    std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
    for (std::size_t r = n_rel(rng); r > 0; --r) {
      const auto p = all[pick(rng)];
      sc.relations.push_back({p.first, p.second, pred(rng)});
    }
    inst.scenes.push_back(std::move(sc));
    inst.dists.push_back(std::move(d));
  }
  return inst;
}

// Exhaustive reference: a ground-truth triplet is recalled when its pair
// predicts its predicate (lowest index among maxima) and fewer than K other
// scored pairs of the scene outrank that pair.
inline double brute_force_mean_recall(const MetricInstance& inst, std::size_t k) {
  std::vector<double> hit(inst.n_predicates, 0.0), total(inst.n_predicates, 0.0);
  for (std::size_t i = 0; i < inst.scenes.size(); ++i) {
    const auto& d = inst.dists[i];
    auto best = [&](const Eigen::VectorXd& v) {
      std::size_t b = 0;
      for (std::size_t c = 1; c < inst.n_predicates; ++c) {
        if (v(static_cast<Eigen::Index>(c)) > v(static_cast<Eigen::Index>(b))) b = c;
      }
      return b;
    };
    for (const auto& rel : inst.scenes[i].relations) {
      total[rel.predicate_id] += 1.0;
      const auto it = d.find({rel.subject_idx, rel.object_idx});
      if (it == d.end() || best(it->second) != rel.predicate_id) continue;
      const double mine = it->second(static_cast<Eigen::Index>(rel.predicate_id));
      std::size_t ahead = 0;
      for (const auto& [pair, v] : d) {
        const double theirs = v(static_cast<Eigen::Index>(best(v)));
        if (theirs > mine || (theirs == mine && pair < it->first)) ++ahead;
      }
      if (ahead < k) hit[rel.predicate_id] += 1.0;
    }
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < inst.n_predicates; ++c) {
    if (total[c] > 0) {
      sum += hit[c] / total[c];
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Pipeline configuration small enough for every stage to finish in seconds.
inline nlohmann::json tiny_pipeline_json(const std::filesystem::path& out) {
  return {
      {"dataset", {{"source", "synthetic"}}},
      {"synthetic",
       {{"n_scenes", 60}, {"n_objects", 6}, {"n_predicates", 4}, {"planted_dim", 8},
        {"align_scenes", 60}}},
      {"encoder", {{"stub", {{"token_dim", 8}, {"embed_dim", 16}, {"n_layers", 1}}}}},
      {"prompt", {{"epochs", 2}, {"checkpoint_every", 1}}},
      {"head", {{"hidden_dim", 8}, {"output_dim", 8}, {"attention_hidden", 4}, {"epochs", 3}}},
      {"k", 2},
      {"seed", 5},
      {"output_dir", out.string()},
  };
}

}  // namespace crepe::testing
