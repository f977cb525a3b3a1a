#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fmm/error.hpp"
#include "fmm/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out;
  std::optional<std::string> measure;
  std::optional<double> alpha;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed-override", f.seed_override, "run a single seed instead of the configured list");
  cmd->add_option("--out", f.out, "output directory (overrides config and $FMM_OUTPUT_ROOT)");
  cmd->add_option("--alpha", f.alpha, "significance level of the OOD gate");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Faithfulness-measurable masked classifier pipeline"};
  app.require_subcommand(1);
  Flags flags;

  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {
      {"gen-data", "generate train/validation/test datasets"},
      {"train", "masked fine-tuning for every strategy and seed"},
      {"ood", "fit MaSF calibrations and score masked test data"},
      {"explain", "importance scores / masking orders per test observation"},
      {"faithfulness", "masking curves and ACU/RACU summaries"},
      {"report", "consolidated report, SVG plots and CSV tables"},
  };
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, flags);
    if (std::string(c.name) == "explain") sub->add_option("--measure", flags.measure, "importance measure id");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto config = fmm::pipeline::load_config(flags.config);
    if (flags.seed_override) config.seeds = {*flags.seed_override};
    if (flags.alpha) config.alpha = *flags.alpha;
    config.validate();
    const auto out = fmm::pipeline::resolve_output(config, flags.out);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") {
      fmm::pipeline::cmd_gen_data(config, out);
    } else if (cmd == "train") {
      fmm::pipeline::cmd_train(config, out);
    } else if (cmd == "ood") {
      fmm::pipeline::cmd_ood(config, out);
    } else if (cmd == "explain") {
      fmm::pipeline::cmd_explain(config, out, flags.measure);
    } else if (cmd == "faithfulness") {
      fmm::pipeline::cmd_faithfulness(config, out);
    } else {
      fmm::pipeline::cmd_report(config, out);
    }
  } catch (const std::exception& e) {
    std::cerr << fmm::pipeline::error_record(e).dump() << "\n";
    return 2;
  }
  return 0;
}
