// Experiment runner: one subcommand per experiment kind.
//
//   opd_lab efficiency_race --config configs/efficiency_race.cfg --out runs/race
//   opd_lab distill --config my.cfg --set train.group_size=4 --seed 3
//
// Exit status: 0 ok, 1 configuration or usage error, 2 training failure
// (teacher quality or divergence), 3 I/O error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "opd/config.hpp"
#include "opd/errors.hpp"
#include "opd/experiments.hpp"
#include "opd/text_io.hpp"

namespace {

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
  bool print_config = false;
};

int Run(opd::ExperimentKind kind, const Flags& flags) {
  std::vector<std::string> overrides;
  if (flags.seed) overrides.push_back("seeds=" + std::to_string(*flags.seed));
  if (!flags.out_dir.empty()) overrides.push_back("out_dir=" + flags.out_dir);
  overrides.insert(overrides.end(), flags.overrides.begin(),
                   flags.overrides.end());
  std::optional<std::filesystem::path> path;
  if (!flags.config_path.empty()) path = flags.config_path;

  const opd::ExperimentConfig config =
      opd::ResolveConfig(path, overrides, kind);
  if (flags.print_config) {
    std::cout << opd::ResolvedConfigText(config);
    return 0;
  }
  const opd::ExperimentResult result = opd::RunExperiment(config, &std::cerr);
  for (const opd::SummaryRow& row : result.summary) {
    if (row.seed == "median") {
      std::cout << row.method << " " << row.metric << " "
                << opd::FormatDouble(row.value) << "\n";
    }
  }
  std::cout << "wrote " << (config.out_dir / "summary.csv").string() << "\n";
  return 0;
}

const char* Describe(opd::ExperimentKind kind) {
  using K = opd::ExperimentKind;
  switch (kind) {
    case K::kTrainTeacher: return "Train and save a tabular teacher per seed";
    case K::kSftInit: return "Supervised init from teacher demos";
    case K::kDistill: return "On-policy distillation from a saved teacher";
    case K::kGrpo: return "Outcome-reward GRPO from the SFT init";
    case K::kDistillGrpo: return "Distillation followed by GRPO";
    case K::kOfflineSft: return "Offline SFT on a fixed demo set";
    case K::kEfficiencyRace: return "Distill, GRPO and Distill+GRPO from one init";
    case K::kForgetting: return "Seen vs unseen success while fine-tuning a generalist";
    case K::kEntropyAblation: return "Reverse KL, forward KL and hard CE entropy on OOD probes";
    case K::kGroupSizeAblation: return "GRPO over several group sizes";
  }
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher-guided on-policy distillation experiments"};
  app.require_subcommand(1);
  Flags flags;
  std::optional<opd::ExperimentKind> chosen;

  for (opd::ExperimentKind kind : opd::AllExperimentKinds()) {
    CLI::App* sub = app.add_subcommand(opd::ToString(kind), Describe(kind));
    sub->add_option("--config", flags.config_path, "Config file")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Run a single seed");
    sub->add_option("--out", flags.out_dir, "Output directory");
    sub->add_option("--set", flags.overrides, "key=value override")
        ->allow_extra_args(false);
    sub->add_flag("--print-config", flags.print_config,
                  "Print the resolved config and exit");
    sub->callback([&chosen, kind] { chosen = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    return Run(*chosen, flags);
  } catch (const opd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const opd::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const opd::TeacherQualityError& e) {
    std::cerr << "teacher quality: " << e.what() << "\n";
    return 2;
  } catch (const opd::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 2;
  } catch (const opd::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  }
}
