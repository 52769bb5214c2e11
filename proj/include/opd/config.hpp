#ifndef OPD_CONFIG_HPP_
#define OPD_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "opd/envsim.hpp"
#include "opd/teacher.hpp"
#include "opd/trainer.hpp"

namespace opd {

enum class ExperimentKind {
  kTrainTeacher,
  kSftInit,
  kDistill,
  kGrpo,
  kDistillGrpo,
  kOfflineSft,
  kEfficiencyRace,
  kForgetting,
  kEntropyAblation,
  kGroupSizeAblation,
};

std::string ToString(ExperimentKind kind);
ExperimentKind ParseExperimentKind(const std::string& name);
const std::vector<ExperimentKind>& AllExperimentKinds();

// Settings of GRPO arms and of the second Distill+GRPO stage. Unset fields
// fall back to the train section.
struct GrpoStageConfig {
  std::optional<int> max_iterations;
  std::optional<double> learning_rate;

  bool operator==(const GrpoStageConfig&) const = default;
};

struct AnalysisConfig {
  // Efficiency target as a fraction of the teacher's success rate.
  double target_fraction = 0.9;
  // OOD probes: states whose teacher entropy exceeds this fraction of ln K.
  double probe_threshold = 0.9;
  std::vector<int> group_sizes = {2, 4, 8};

  bool operator==(const AnalysisConfig&) const = default;
};

struct ForgettingConfig {
  std::vector<int> seen = {0, 1};
  std::vector<int> unseen = {2, 3, 4, 5};
  int generalist_demos = 20;
  int generalist_epochs = 200;

  bool operator==(const ForgettingConfig&) const = default;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kDistill;
  EnvSpec env;
  TeacherTrainOptions teacher;
  TrainConfig train;
  GrpoStageConfig grpo;
  AnalysisConfig analysis;
  ForgettingConfig forgetting;
  // Demos per task in offline SFT datasets.
  int sft_dataset_demos = 20;
  std::vector<std::uint64_t> seeds = {1};
  std::filesystem::path out_dir = "runs";
  std::optional<std::filesystem::path> teacher_path;

  bool operator==(const ExperimentConfig& other) const;
};

// Every accepted key, in the order the resolved echo writes them.
const std::vector<std::string>& ConfigKeys();

// Applies one `key=value` assignment. Throws ConfigError naming the key on
// unknown keys and malformed values.
void ApplyConfigValue(ExperimentConfig& config, const std::string& key,
                      const std::string& value);

// Parses flat `key = value` text. Blank lines and lines starting with '#'
// are ignored; a key may appear at most once.
ExperimentConfig ParseConfigText(const std::string& text,
                                 ExperimentConfig base = {});

// File values, then `key=value` overrides in order. Validates the result.
ExperimentConfig ResolveConfig(
    const std::optional<std::filesystem::path>& path,
    const std::vector<std::string>& overrides,
    std::optional<ExperimentKind> experiment = std::nullopt);

// Cross-field checks, including required fields per experiment.
void ValidateExperimentConfig(const ExperimentConfig& config);

// Canonical text listing every key; ParseConfigText of it yields an equal
// config.
std::string ResolvedConfigText(const ExperimentConfig& config);

// Values each run of the experiment derives from the run seed.
TeacherTrainOptions TeacherOptionsForSeed(const ExperimentConfig& config,
                                          std::uint64_t seed);
TrainConfig TrainConfigForSeed(const ExperimentConfig& config,
                               std::uint64_t seed);
TrainConfig GrpoConfigForSeed(const ExperimentConfig& config,
                              std::uint64_t seed);

}  // namespace opd

#endif  // OPD_CONFIG_HPP_
