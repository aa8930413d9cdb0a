#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "crepe/errors.hpp"
#include "crepe/pipeline/artifacts.hpp"
#include "crepe/pipeline/pipeline.hpp"
#include "support.hpp"

using namespace crepe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

pipeline::PipelineConfig tiny_config(const fs::path& out) {
  return pipeline::config_from_json(testing::tiny_pipeline_json(out));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

data::Scene labelled_scene(std::string id, std::vector<data::RelationInstance> rels) {
  return testing::make_scene(std::move(id), 20, 20,
                             {{0, {0, 0, 5, 5}}, {1, {10, 10, 5, 5}}, {2, {0, 10, 5, 5}}},
                             std::move(rels));
}

}  // namespace

TEST_SUITE("cli-pipeline") {
  TEST_CASE("stage names round-trip") {
    for (auto s : {pipeline::Stage::kSynth, pipeline::Stage::kBuildVocab,
                   pipeline::Stage::kTrainPrompts, pipeline::Stage::kFreq}) {
      CHECK(pipeline::parse_stage(pipeline::to_string(s)) == s);
    }
    CHECK(pipeline::to_string(pipeline::Stage::kTrainHead) == "train-head");
    CHECK_THROWS_AS(pipeline::parse_stage("train"), ArgumentError);
  }

  TEST_CASE("configs reject unknown keys and invalid values") {
    auto doc = testing::tiny_pipeline_json("x");
    doc["head"]["epoch"] = 3;
    CHECK_THROWS_AS(pipeline::config_from_json(doc), ArgumentError);
    auto bad = tiny_config(fs::path("x"));
    bad.head.batch_size = 0;
    CHECK_THROWS_AS(pipeline::validate(bad), ArgumentError);
    const auto good = tiny_config(fs::path("x"));
    CHECK(pipeline::to_json(pipeline::config_from_json(pipeline::to_json(good))) ==
          pipeline::to_json(good));
  }

  TEST_CASE("mode tags and stage lists") {
    auto c = tiny_config(fs::path("x"));
    c.mode = head::Mode::kPseudoK;
    CHECK(c.mode_tag() == "pseudo-k2");
    const auto pk = pipeline::stages_for(c);
    CHECK(std::find(pk.begin(), pk.end(), pipeline::Stage::kTrainPrompts) == pk.end());
    CHECK(std::find(pk.begin(), pk.end(), pipeline::Stage::kRetrieve) != pk.end());
    c.mode = head::Mode::kCrepe;
    CHECK(c.mode_tag() == "crepe");
    const auto cr = pipeline::stages_for(c);
    CHECK(std::find(cr.begin(), cr.end(), pipeline::Stage::kTrainPrompts) != cr.end());
    CHECK(cr.back() == pipeline::Stage::kEvaluate);
  }

  TEST_CASE("the cache directory honours the environment override") {
    auto c = tiny_config(fs::path("runs/x"));
    ::unsetenv(pipeline::kCacheDirEnv);
    CHECK(pipeline::cache_dir(c) == fs::path("runs/x") / "cache");
    c.cache.dir = "/tmp/configured";
    CHECK(pipeline::cache_dir(c) == fs::path("/tmp/configured"));
    ::setenv(pipeline::kCacheDirEnv, "/tmp/from-env", 1);
    CHECK(pipeline::cache_dir(c) == fs::path("/tmp/from-env"));
    ::unsetenv(pipeline::kCacheDirEnv);
  }

  TEST_CASE("a stage with missing inputs raises a dependency error") {
    const auto dir = testing::scratch_dir("pipeline-deps");
    pipeline::Pipeline p(tiny_config(dir));
    CHECK_THROWS_AS(p.run(pipeline::Stage::kEmbed), DependencyError);
    CHECK_THROWS_AS(p.run(pipeline::Stage::kEvaluate), DependencyError);
  }

  TEST_CASE("end-to-end run, no-op rerun and stale configuration") {
    const auto dir = testing::scratch_dir("pipeline-smoke");
    const auto cfg = tiny_config(dir);
    {
      pipeline::Pipeline p(cfg);
      const auto results = p.run_all();
      for (const auto& r : results) CHECK_FALSE(r.skipped);
      REQUIRE(fs::exists(p.report_path()));
      const auto report = pipeline::read_json(p.report_path());
      for (const char* k : {"mR@5", "mR@10", "mR@15", "mR@20", "mR@50"}) {
        const double v = report.at("mean_recall").at(k).get<double>();
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      CHECK(fs::exists(p.mode_dir() / "predictions.jsonl"));
      CHECK(fs::exists(p.mode_dir() / "calibration.json"));
      CHECK(fs::exists(p.mode_dir() / "report.csv"));
      CHECK(fs::exists(p.mode_dir() / "recall_plot.csv"));
      CHECK(fs::exists(p.out() / "prompt" / "prompt.ckpt"));
      CHECK(fs::exists(p.out() / "prompt" / "loss_trace.csv"));
      const auto manifest = pipeline::read_json(p.manifest_path(pipeline::Stage::kTrainHead));
      CHECK(manifest.contains("config_hash"));
      CHECK(manifest.contains("inputs"));
      CHECK(manifest.contains("outputs"));
    }

    std::map<fs::path, std::string> manifests;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.path().parent_path().filename() == "manifests") manifests[e.path()] = slurp(e.path());
    }
    CHECK_FALSE(manifests.empty());
    {
      pipeline::Pipeline again(cfg);
      for (const auto& r : again.run_all()) CHECK(r.skipped);
    }
    for (const auto& [path, text] : manifests) CHECK(slurp(path) == text);

    auto changed = cfg;
    changed.head.epochs = 4;
    {
      pipeline::Pipeline stale(changed);
      CHECK_THROWS_AS(stale.run(pipeline::Stage::kTrainHead), StaleConfigError);
      // Earlier stages are unaffected by a head setting.
      CHECK(stale.run(pipeline::Stage::kEmbed).skipped);
    }
    {
      pipeline::Pipeline forced(changed, true);
      CHECK_FALSE(forced.run(pipeline::Stage::kTrainHead).skipped);
    }

    auto pk = cfg;
    pk.mode = head::Mode::kPseudoK;
    pipeline::Pipeline pseudo(pk);
    pseudo.run_all();
    CHECK(fs::exists(pseudo.report_path()));
    CHECK(pseudo.run(pipeline::Stage::kFreq).stage == pipeline::Stage::kFreq);
    CHECK(fs::exists(pseudo.out() / "freq" / "report.json"));
  }

  TEST_CASE("frequency baseline examples") {
    const auto a = labelled_scene("a", {{0, 1, 0}, {0, 2, 1}});
    const auto b = labelled_scene("b", {{0, 1, 0}, {1, 2, 1}});
    const auto c = labelled_scene("c", {{0, 1, 0}, {0, 1, 1}});
    const pipeline::FreqBaseline f({&a, &b, &c}, 3);
    // Labels are entity indices here: pair (0, 1) was seen 3 x p0 and 1 x p1.
    const auto d = f.distribution(0, 1);
    REQUIRE(d.size() >= 3);
    CHECK(d(0) == doctest::Approx(0.75));
    CHECK(d(1) == doctest::Approx(0.25));
    CHECK(d(2) == 0.0);
    // Unseen label pairs fall back to the predicate marginal.
    const auto m = f.distribution(2, 0);
    CHECK(m(0) == doctest::Approx(0.5));
    CHECK(m(1) == doctest::Approx(0.5));
    CHECK(m(2) == 0.0);
    CHECK((f.marginal().head(3) - m.head(3)).norm() < 1e-12);
  }
}
