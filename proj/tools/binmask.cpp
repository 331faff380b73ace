// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Batch driver: binmask <stage> --config run.json [--set key=value ...]

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "binmask/pipeline.hpp"

namespace {

using namespace binmask;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string output_dir;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set train.epochs=20")
      ->type_name("KEY=VALUE");
  cmd->add_option("-o,--output-dir", c.output_dir, "Output directory (overrides output_dir)");
  cmd->add_flag("-f,--force", c.force, "Rebuild artifacts whose config hash is stale");
  cmd->add_flag("-q,--quiet", c.quiet, "Only print warnings and errors");
}

RunConfig resolve(const Common& c, const std::vector<std::string>& extra) {
  Json j = c.config.empty() ? Json::object() : load_json_file(c.config);
  for (const auto& o : c.overrides) apply_override(j, o);
  for (const auto& o : extra) apply_override(j, o);
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  return run_config_from_json(j);
}

int finish(const std::string& stage, const StageReport& r, bool quiet) {
  if (!quiet)
    std::cerr << stage << ": " << r.computed << " computed, " << r.skipped << " up to date, " << r.failed
              << " failed\n";
  return r.failed > 0 ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binaural mask-driven speech enhancement pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "binmask 0.1.0");

  Common common;
  std::string mask_source, reference;
  const std::vector<std::string> stages{"spatialize", "target-mask", "features", "train", "enhance", "evaluate"};
  const std::vector<std::string> help{
      "Render clean and noisy binaural scenes for every utterance and scene cell",
      "Optimize the binary target mask of each ear",
      "Extract the 90-dimensional feature vectors of each ear",
      "Train the mask estimator on a 70/30 utterance split",
      "Apply the common OM-LSA gain driven by the fused masks",
      "Score enhanced scenes and write reports, summary table and plots"};
  std::vector<CLI::App*> cmds;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    CLI::App* cmd = app.add_subcommand(stages[i], help[i]);
    add_common(cmd, common);
    cmds.push_back(cmd);
  }
  CLI::App* enhance = cmds[4];
  enhance->add_option("--mask-source", mask_source, "Where masks come from")
      ->check(CLI::IsMember({"model", "oracle", "identity"}));
  enhance->add_option("--reference-channel", reference, "Statistics feeding the common gain")
      ->check(CLI::IsMember({"better-ear", "average", "left"}));
  CLI::App* run = app.add_subcommand("run", "Run every stage in order");
  add_common(run, common);
  run->add_option("--mask-source", mask_source, "Where masks come from")
      ->check(CLI::IsMember({"model", "oracle", "identity"}));
  CLI::App* show = app.add_subcommand("print-config", "Print the effective configuration");
  add_common(show, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::vector<std::string> extra;
    if (!mask_source.empty()) extra.push_back("enhance.mask_source=\"" + mask_source + "\"");
    if (!reference.empty()) extra.push_back("enhance.reference_channel=\"" + reference + "\"");
    const RunConfig cfg = resolve(common, extra);
    if (show->parsed()) {
      std::cout << to_json(cfg).dump(2) << "\n";
      return 0;
    }
    std::ostringstream sink;
    StageOptions opt{common.force, common.quiet ? static_cast<std::ostream*>(&sink) : &std::cerr};
    const Workspace ws(cfg);
    auto stage = [&](const std::string& name) {
      if (name == "spatialize") return run_spatialize(ws, opt);
      if (name == "target-mask") return run_target_mask(ws, opt);
      if (name == "features") return run_features(ws, opt);
      if (name == "train") return run_train(ws, opt);
      if (name == "enhance") return run_enhance(ws, opt);
      return run_evaluate(ws, opt).report;
    };
    if (run->parsed()) {
      int code = 0;
      for (const auto& name : stages) {
        if (name == "train" && cfg.mask_source != MaskSource::model) continue;
        if (name == "features" && cfg.mask_source != MaskSource::model) continue;
        if (name == "target-mask" && cfg.mask_source == MaskSource::identity) continue;
        code = std::max(code, finish(name, stage(name), common.quiet));
      }
      return code;
    }
    for (std::size_t i = 0; i < stages.size(); ++i)
      if (cmds[i]->parsed()) return finish(stages[i], stage(stages[i]), common.quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
