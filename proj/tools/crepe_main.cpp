// Command-line front end: one subcommand per pipeline stage plus `run`
// (every stage of the configured mode) and `ablate` (all four modes and the
// frequency baseline on one output directory).

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <sstream>

#include "crepe/errors.hpp"
#include "crepe/pipeline/artifacts.hpp"
#include "crepe/pipeline/pipeline.hpp"
#include "crepe/util/log.hpp"

namespace {

using crepe::pipeline::Pipeline;
using crepe::pipeline::PipelineConfig;
using crepe::pipeline::Stage;

struct Options {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::size_t> k;
  bool force = false;
};

PipelineConfig resolve(const Options& o) {
  PipelineConfig c = crepe::pipeline::load_config(o.config);
  if (o.out) c.output_dir = *o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.mode = crepe::head::parse_mode(*o.mode);
  if (o.k) c.k = *o.k;
  crepe::pipeline::validate(c);
  return c;
}

void report(const std::vector<crepe::pipeline::StageResult>& results) {
  for (const auto& r : results) {
    std::cout << crepe::pipeline::to_string(r.stage) << ": " << (r.skipped ? "up to date" : "done")
              << " (" << r.manifest.string() << ")\n";
  }
}

std::string summary_row(const std::string& name, const std::filesystem::path& report_json) {
  const auto doc = crepe::pipeline::read_json(report_json);
  std::ostringstream row;
  row << std::left << std::setw(16) << name << std::right << std::fixed << std::setprecision(4);
  for (const char* k : {"mR@5", "mR@10", "mR@15", "mR@20", "mR@50"}) {
    row << std::setw(10) << doc.at("mean_recall").at(k).get<double>();
  }
  return row.str();
}

int run_ablation(const Options& o) {
  PipelineConfig base = resolve(o);
  std::vector<std::pair<std::string, std::filesystem::path>> rows;
  bool freq_done = false;
  for (const auto mode : {crepe::head::Mode::kVisual, crepe::head::Mode::kVisualLanguage,
                          crepe::head::Mode::kPseudoK, crepe::head::Mode::kCrepe}) {
    PipelineConfig c = base;
    c.mode = mode;
    Pipeline p(c, o.force);
    report(p.run_all());
    if (!freq_done) {
      report({p.run(Stage::kFreq)});
      rows.emplace_back("freq", p.out() / "freq" / "report.json");
      freq_done = true;
    }
    rows.emplace_back(c.mode_tag(), p.report_path());
  }
  std::cout << std::left << std::setw(16) << "mode" << std::right;
  for (const char* k : {"mR@5", "mR@10", "mR@15", "mR@20", "mR@50"}) std::cout << std::setw(10) << k;
  std::cout << '\n';
  for (const auto& [name, path] : rows) std::cout << summary_row(name, path) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-graph predicate classification with learned vision-language prompts"};
  app.require_subcommand(1);
  Options opts;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config, "Pipeline configuration (JSON)")->required();
    cmd->add_option("--out", opts.out, "Output directory (overrides output_dir)");
    cmd->add_option("--seed", opts.seed, "Master seed (overrides seed)");
    cmd->add_option("--mode", opts.mode, "Ablation mode")
        ->check(CLI::IsMember({"visual", "visual-language", "pseudo-k", "crepe"}));
    cmd->add_option("--k", opts.k, "Pseudo-labels per union in pseudo-k mode");
    cmd->add_flag("--force", opts.force, "Overwrite stages produced under a different config");
  };

  const std::vector<std::pair<Stage, const char*>> stages = {
      {Stage::kSynth, "Generate the synthetic dataset and fit the stub encoder"},
      {Stage::kIngest, "Load and split the annotation file"},
      {Stage::kBuildVocab, "Build the triplet vocabulary from the training split"},
      {Stage::kEmbed, "Extract text and region embeddings"},
      {Stage::kRetrieve, "Retrieve triplet pseudo-labels for every union box"},
      {Stage::kTrainPrompts, "Train the prompt learner"},
      {Stage::kTrainHead, "Train the predicate head for the configured mode"},
      {Stage::kCalibrate, "Estimate class frequencies on the validation split"},
      {Stage::kEvaluate, "Predict the test split and write the evaluation report"},
      {Stage::kFreq, "Evaluate the label-pair frequency baseline"},
  };
  std::optional<Stage> chosen;
  for (const auto& [stage, help] : stages) {
    auto* cmd = app.add_subcommand(crepe::pipeline::to_string(stage), help);
    add_common(cmd);
    cmd->callback([&chosen, s = stage] { chosen = s; });
  }
  auto* run = app.add_subcommand("run", "Run every stage of the configured mode");
  add_common(run);
  auto* ablate = app.add_subcommand("ablate", "Run all four modes and the frequency baseline");
  add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (ablate->parsed()) return run_ablation(opts);
    Pipeline p(resolve(opts), opts.force);
    if (run->parsed()) {
      report(p.run_all());
    } else {
      report({p.run(*chosen)});
    }
    return 0;
  } catch (const crepe::ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const crepe::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const crepe::DependencyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const crepe::StaleConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
