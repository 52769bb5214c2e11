#include "opd/config.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "opd/errors.hpp"
#include "opd/text_io.hpp"

namespace opd {
namespace {

struct KeyBinding {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

int ToInt(const std::string& key, const std::string& value) {
  const long long v = ParseInt(value, key);
  if (v < std::numeric_limits<int>::min() ||
      v > std::numeric_limits<int>::max()) {
    throw ConfigError(key + ": value out of range");
  }
  return static_cast<int>(v);
}

std::uint64_t ToU64(const std::string& key, const std::string& value) {
  const long long v = ParseInt(value, key);
  if (v < 0) throw ConfigError(key + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

bool ToBool(const std::string& key, const std::string& value) {
  const std::string t = Trim(value);
  if (t == "true") return true;
  if (t == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + t + "'");
}

std::vector<int> ToIntList(const std::string& key, const std::string& value) {
  std::vector<int> out;
  if (Trim(value).empty()) return out;
  for (const std::string& item : Split(value, ',')) {
    out.push_back(ToInt(key, item));
  }
  return out;
}

std::vector<std::uint64_t> ToU64List(const std::string& key,
                                     const std::string& value) {
  std::vector<std::uint64_t> out;
  if (Trim(value).empty()) return out;
  for (const std::string& item : Split(value, ',')) {
    out.push_back(ToU64(key, item));
  }
  return out;
}

template <typename T>
std::string JoinList(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

// Wraps parse errors that do not already name the key.
template <typename F>
auto Named(const std::string& key, F&& parse) -> decltype(parse()) {
  try {
    return parse();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(key, 0) == 0) throw;
    throw ConfigError(key + ": " + what);
  }
}

template <typename S>
KeyBinding Int(const std::string& key, S ExperimentConfig::*section,
               int S::*field) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) {
            c.*section.*field = ToInt(key, v);
          },
          [=](const ExperimentConfig& c) {
            return std::to_string(c.*section.*field);
          }};
}

template <typename S>
KeyBinding Real(const std::string& key, S ExperimentConfig::*section,
                double S::*field) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) {
            c.*section.*field = ParseDouble(v, key);
          },
          [=](const ExperimentConfig& c) {
            return FormatDouble(c.*section.*field);
          }};
}

template <typename S>
KeyBinding Bool(const std::string& key, S ExperimentConfig::*section,
                bool S::*field) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) {
            c.*section.*field = ToBool(key, v);
          },
          [=](const ExperimentConfig& c) {
            return std::string(c.*section.*field ? "true" : "false");
          }};
}

template <typename S>
KeyBinding IntList(const std::string& key, S ExperimentConfig::*section,
                   std::vector<int> S::*field) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) {
            c.*section.*field = ToIntList(key, v);
          },
          [=](const ExperimentConfig& c) {
            return JoinList(c.*section.*field);
          }};
}

template <typename S>
KeyBinding OptReal(const std::string& key, S ExperimentConfig::*section,
                   std::optional<double> S::*field) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) {
            if (Trim(v) == "none") {
              (c.*section.*field).reset();
            } else {
              c.*section.*field = ParseDouble(v, key);
            }
          },
          [=](const ExperimentConfig& c) {
            const auto& f = c.*section.*field;
            return f ? FormatDouble(*f) : std::string("none");
          }};
}

template <typename S>
KeyBinding OptInt(const std::string& key, S ExperimentConfig::*section,
                  std::optional<int> S::*field) {
  return {key,
          [=](ExperimentConfig& c, const std::string& v) {
            if (Trim(v) == "none") {
              (c.*section.*field).reset();
            } else {
              c.*section.*field = ToInt(key, v);
            }
          },
          [=](const ExperimentConfig& c) {
            const auto& f = c.*section.*field;
            return f ? std::to_string(*f) : std::string("none");
          }};
}

std::vector<KeyBinding> BuildBindings() {
  using C = ExperimentConfig;
  std::vector<KeyBinding> b;
  b.push_back({"experiment",
               [](C& c, const std::string& v) {
                 c.experiment = ParseExperimentKind(Trim(v));
               },
               [](const C& c) { return ToString(c.experiment); }});
  b.push_back({"seeds",
               [](C& c, const std::string& v) {
                 c.seeds = ToU64List("seeds", v);
               },
               [](const C& c) { return JoinList(c.seeds); }});
  b.push_back({"out_dir",
               [](C& c, const std::string& v) { c.out_dir = Trim(v); },
               [](const C& c) { return c.out_dir.string(); }});
  b.push_back({"teacher_path",
               [](C& c, const std::string& v) {
                 const std::string t = Trim(v);
                 if (t.empty()) {
                   c.teacher_path.reset();
                 } else {
                   c.teacher_path = t;
                 }
               },
               [](const C& c) {
                 return c.teacher_path ? c.teacher_path->string()
                                       : std::string();
               }});
  b.push_back({"sft.dataset_demos",
               [](C& c, const std::string& v) {
                 c.sft_dataset_demos = ToInt("sft.dataset_demos", v);
               },
               [](const C& c) { return std::to_string(c.sft_dataset_demos); }});

  b.push_back({"env.id",
               [](C& c, const std::string& v) {
                 c.env.env_id =
                     Named("env.id", [&] { return ParseEnvId(Trim(v)); });
               },
               [](const C& c) { return ToString(c.env.env_id); }});
  b.push_back(Int("env.grid_size", &C::env, &EnvSpec::grid_size));
  b.push_back(Int("env.horizon", &C::env, &EnvSpec::horizon));
  b.push_back(
      Int("env.action_vocab_size", &C::env, &EnvSpec::action_vocab_size));
  b.push_back(Real("env.gamma", &C::env, &EnvSpec::gamma));
  b.push_back(Int("env.num_tasks", &C::env, &EnvSpec::num_tasks));
  b.push_back(Real("env.p_slip", &C::env, &EnvSpec::p_slip));

  using T = TeacherTrainOptions;
  b.push_back(Int("teacher.episodes", &C::teacher, &T::episodes));
  b.push_back(Real("teacher.epsilon", &C::teacher, &T::epsilon));
  b.push_back(Real("teacher.learning_rate", &C::teacher, &T::learning_rate));
  b.push_back(Real("teacher.discount", &C::teacher, &T::discount));
  b.push_back(Real("teacher.goal_reward", &C::teacher, &T::goal_reward));
  b.push_back(Real("teacher.temperature", &C::teacher, &T::temperature));
  b.push_back(Real("teacher.label_floor", &C::teacher, &T::label_floor));
  b.push_back(Int("teacher.eval_episodes", &C::teacher, &T::eval_episodes));
  b.push_back(Real("teacher.min_success", &C::teacher, &T::min_success));

  using R = TrainConfig;
  b.push_back({"train.objective",
               [](C& c, const std::string& v) {
                 c.train.objective = ParseObjective(Trim(v));
               },
               [](const C& c) { return ToString(c.train.objective); }});
  b.push_back(Int("train.group_size", &C::train, &R::group_size));
  b.push_back(Int("train.batch_size", &C::train, &R::batch_size));
  b.push_back(Real("train.learning_rate", &C::train, &R::learning_rate));
  b.push_back(Real("train.clip_eps", &C::train, &R::clip_eps));
  b.push_back(Int("train.grpo_epochs", &C::train, &R::grpo_epochs));
  b.push_back(Int("train.max_iterations", &C::train, &R::max_iterations));
  b.push_back(Int("train.eval_every", &C::train, &R::eval_every));
  b.push_back(Int("train.eval_episodes", &C::train, &R::eval_episodes));
  b.push_back(
      Real("train.teacher_temperature", &C::train, &R::teacher_temperature));
  b.push_back(Int("train.init_demos", &C::train, &R::init_demos));
  b.push_back(Int("train.hidden_dim", &C::train, &R::hidden_dim));
  b.push_back({"train.optimizer",
               [](C& c, const std::string& v) {
                 c.train.optimizer = Named("train.optimizer", [&] {
                   return ParseOptimizerKind(Trim(v));
                 });
               },
               [](const C& c) { return ToString(c.train.optimizer); }});
  b.push_back(Real("train.momentum", &C::train, &R::momentum));
  b.push_back(Real("train.grad_clip_norm", &C::train, &R::grad_clip_norm));
  b.push_back(
      Int("train.updates_per_batch", &C::train, &R::updates_per_batch));
  b.push_back(Int("train.sft_epochs", &C::train, &R::sft_epochs));
  b.push_back(
      Real("train.sft_learning_rate", &C::train, &R::sft_learning_rate));
  b.push_back(
      Bool("train.forward_kl_sampled", &C::train, &R::forward_kl_sampled));
  b.push_back(
      Int("train.forward_kl_samples", &C::train, &R::forward_kl_samples));
  b.push_back(
      OptReal("train.early_stop_success", &C::train, &R::early_stop_success));
  b.push_back(IntList("train.tasks", &C::train, &R::tasks));

  b.push_back(OptInt("grpo.max_iterations", &C::grpo,
                     &GrpoStageConfig::max_iterations));
  b.push_back(OptReal("grpo.learning_rate", &C::grpo,
                      &GrpoStageConfig::learning_rate));

  b.push_back(Real("analysis.target_fraction", &C::analysis,
                   &AnalysisConfig::target_fraction));
  b.push_back(Real("analysis.probe_threshold", &C::analysis,
                   &AnalysisConfig::probe_threshold));
  b.push_back(IntList("analysis.group_sizes", &C::analysis,
                      &AnalysisConfig::group_sizes));

  b.push_back(
      IntList("forgetting.seen", &C::forgetting, &ForgettingConfig::seen));
  b.push_back(
      IntList("forgetting.unseen", &C::forgetting, &ForgettingConfig::unseen));
  b.push_back(Int("forgetting.generalist_demos", &C::forgetting,
                  &ForgettingConfig::generalist_demos));
  b.push_back(Int("forgetting.generalist_epochs", &C::forgetting,
                  &ForgettingConfig::generalist_epochs));
  return b;
}

const std::vector<KeyBinding>& Bindings() {
  static const std::vector<KeyBinding> bindings = BuildBindings();
  return bindings;
}

std::pair<std::string, std::string> SplitAssignment(const std::string& line,
                                                    const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    throw ConfigError(where + ": expected key=value, got '" + line + "'");
  }
  return {Trim(std::string_view(line).substr(0, eq)),
          Trim(std::string_view(line).substr(eq + 1))};
}

bool IsDistillObjective(Objective o) {
  return o == Objective::kReverseKl || o == Objective::kForwardKl ||
         o == Objective::kHardCe;
}

void CheckTasks(const std::vector<int>& tasks, int num_tasks,
                const std::string& key) {
  for (int t : tasks) {
    if (t < 0 || t >= num_tasks) {
      throw ConfigError(key + ": task " + std::to_string(t) +
                        " outside [0, env.num_tasks)");
    }
  }
}

}  // namespace

std::string ToString(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kTrainTeacher: return "train_teacher";
    case ExperimentKind::kSftInit: return "sft_init";
    case ExperimentKind::kDistill: return "distill";
    case ExperimentKind::kGrpo: return "grpo";
    case ExperimentKind::kDistillGrpo: return "distill_grpo";
    case ExperimentKind::kOfflineSft: return "offline_sft";
    case ExperimentKind::kEfficiencyRace: return "efficiency_race";
    case ExperimentKind::kForgetting: return "forgetting";
    case ExperimentKind::kEntropyAblation: return "entropy_ablation";
    case ExperimentKind::kGroupSizeAblation: return "group_size_ablation";
  }
  return "?";
}

const std::vector<ExperimentKind>& AllExperimentKinds() {
  static const std::vector<ExperimentKind> kinds = {
      ExperimentKind::kTrainTeacher,     ExperimentKind::kSftInit,
      ExperimentKind::kDistill,          ExperimentKind::kGrpo,
      ExperimentKind::kDistillGrpo,      ExperimentKind::kOfflineSft,
      ExperimentKind::kEfficiencyRace,   ExperimentKind::kForgetting,
      ExperimentKind::kEntropyAblation,  ExperimentKind::kGroupSizeAblation};
  return kinds;
}

ExperimentKind ParseExperimentKind(const std::string& name) {
  for (ExperimentKind k : AllExperimentKinds()) {
    if (ToString(k) == name) return k;
  }
  throw ConfigError("experiment: unknown experiment '" + name + "'");
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return experiment == other.experiment && env == other.env &&
         teacher.episodes == other.teacher.episodes &&
         teacher.epsilon == other.teacher.epsilon &&
         teacher.learning_rate == other.teacher.learning_rate &&
         teacher.discount == other.teacher.discount &&
         teacher.goal_reward == other.teacher.goal_reward &&
         teacher.temperature == other.teacher.temperature &&
         teacher.label_floor == other.teacher.label_floor &&
         teacher.eval_episodes == other.teacher.eval_episodes &&
         teacher.min_success == other.teacher.min_success &&
         train == other.train && grpo == other.grpo &&
         analysis == other.analysis && forgetting == other.forgetting &&
         sft_dataset_demos == other.sft_dataset_demos &&
         seeds == other.seeds && out_dir == other.out_dir &&
         teacher_path == other.teacher_path;
}

const std::vector<std::string>& ConfigKeys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeyBinding& b : Bindings()) k.push_back(b.key);
    return k;
  }();
  return keys;
}

void ApplyConfigValue(ExperimentConfig& config, const std::string& key,
                      const std::string& value) {
  for (const KeyBinding& b : Bindings()) {
    if (b.key == key) {
      b.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

ExperimentConfig ParseConfigText(const std::string& text,
                                 ExperimentConfig base) {
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto [key, value] =
        SplitAssignment(t, "line " + std::to_string(line_no));
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate key '" + key + "' on line " +
                        std::to_string(line_no));
    }
    ApplyConfigValue(base, key, value);
  }
  return base;
}

ExperimentConfig ResolveConfig(
    const std::optional<std::filesystem::path>& path,
    const std::vector<std::string>& overrides,
    std::optional<ExperimentKind> experiment) {
  ExperimentConfig config;
  if (experiment) config.experiment = *experiment;
  if (path) config = ParseConfigText(ReadFile(*path), config);
  // The subcommand wins over the file's experiment key.
  if (experiment) config.experiment = *experiment;
  for (const std::string& o : overrides) {
    const auto [key, value] = SplitAssignment(o, "--set");
    ApplyConfigValue(config, key, value);
  }
  ValidateExperimentConfig(config);
  return config;
}

void ValidateExperimentConfig(const ExperimentConfig& c) {
  ValidateSpec(c.env);
  ValidateTrainConfig(c.train);
  if (c.seeds.empty()) throw ConfigError("seeds: at least one seed required");
  if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (c.teacher.episodes <= 0) {
    throw ConfigError("teacher.episodes must be positive");
  }
  if (!(c.teacher.temperature > 0.0)) {
    throw ConfigError("teacher.temperature must be positive");
  }
  if (!(c.teacher.label_floor >= 0.0 && c.teacher.label_floor < 1.0)) {
    throw ConfigError("teacher.label_floor must lie in [0, 1)");
  }
  if (c.grpo.max_iterations && *c.grpo.max_iterations <= 0) {
    throw ConfigError("grpo.max_iterations must be positive");
  }
  if (c.grpo.learning_rate && !(*c.grpo.learning_rate >= 0.0)) {
    throw ConfigError("grpo.learning_rate must be >= 0");
  }
  if (c.sft_dataset_demos <= 0) {
    throw ConfigError("sft.dataset_demos must be positive");
  }
  if (!(c.analysis.target_fraction > 0.0 &&
        c.analysis.target_fraction <= 1.0)) {
    throw ConfigError("analysis.target_fraction must lie in (0, 1]");
  }
  if (!(c.analysis.probe_threshold > 0.0 &&
        c.analysis.probe_threshold < 1.0)) {
    throw ConfigError("analysis.probe_threshold must lie in (0, 1)");
  }
  CheckTasks(c.train.tasks, c.env.num_tasks, "train.tasks");

  switch (c.experiment) {
    case ExperimentKind::kDistill:
    case ExperimentKind::kDistillGrpo:
      if (!c.teacher_path) {
        throw ConfigError("teacher_path is required for " +
                          ToString(c.experiment));
      }
      if (!IsDistillObjective(c.train.objective)) {
        throw ConfigError("train.objective must be ReverseKL, ForwardKL or "
                          "HardCE for " + ToString(c.experiment));
      }
      if (c.experiment == ExperimentKind::kDistillGrpo &&
          c.train.objective != Objective::kReverseKl) {
        throw ConfigError("train.objective must be ReverseKL for "
                          "distill_grpo");
      }
      break;
    case ExperimentKind::kSftInit:
      if (c.train.init_demos <= 0) {
        throw ConfigError("train.init_demos must be positive for sft_init");
      }
      break;
    case ExperimentKind::kGrpo:
    case ExperimentKind::kEfficiencyRace:
      if (c.train.init_demos <= 0) {
        throw ConfigError("train.init_demos must be positive for " +
                          ToString(c.experiment));
      }
      break;
    case ExperimentKind::kEntropyAblation:
      if (c.train.init_demos <= 0) {
        throw ConfigError(
            "train.init_demos must be positive for entropy_ablation");
      }
      if (c.train.group_size < 2) {
        throw ConfigError("train.group_size must be >= 2 for "
                          "entropy_ablation");
      }
      break;
    case ExperimentKind::kGroupSizeAblation:
      if (c.analysis.group_sizes.empty()) {
        throw ConfigError("analysis.group_sizes must not be empty");
      }
      for (int g : c.analysis.group_sizes) {
        if (g < 2) {
          throw ConfigError("analysis.group_sizes entries must be >= 2");
        }
      }
      break;
    case ExperimentKind::kForgetting: {
      const ForgettingConfig& f = c.forgetting;
      if (c.env.env_id != EnvId::kMultiTask) {
        throw ConfigError("env.id must be MultiTask for forgetting");
      }
      if (f.seen.empty() || f.unseen.empty()) {
        throw ConfigError("forgetting.seen and forgetting.unseen must not be "
                          "empty");
      }
      CheckTasks(f.seen, c.env.num_tasks, "forgetting.seen");
      CheckTasks(f.unseen, c.env.num_tasks, "forgetting.unseen");
      for (int t : f.seen) {
        if (std::find(f.unseen.begin(), f.unseen.end(), t) != f.unseen.end()) {
          throw ConfigError("forgetting.seen and forgetting.unseen overlap");
        }
      }
      if (f.generalist_demos <= 0 || f.generalist_epochs <= 0) {
        throw ConfigError("forgetting.generalist_demos and "
                          "forgetting.generalist_epochs must be positive");
      }
      break;
    }
    case ExperimentKind::kTrainTeacher:
    case ExperimentKind::kOfflineSft:
      break;
  }
}

std::string ResolvedConfigText(const ExperimentConfig& config) {
  std::string out;
  for (const KeyBinding& b : Bindings()) {
    out += b.key + " = " + b.get(config) + "\n";
  }
  return out;
}

TeacherTrainOptions TeacherOptionsForSeed(const ExperimentConfig& config,
                                          std::uint64_t seed) {
  TeacherTrainOptions o = config.teacher;
  o.seed = seed;
  return o;
}

TrainConfig TrainConfigForSeed(const ExperimentConfig& config,
                               std::uint64_t seed) {
  TrainConfig t = config.train;
  t.seed = seed;
  return t;
}

TrainConfig GrpoConfigForSeed(const ExperimentConfig& config,
                              std::uint64_t seed) {
  TrainConfig t = TrainConfigForSeed(config, seed);
  t.objective = Objective::kGrpo;
  if (config.grpo.max_iterations) {
    t.max_iterations = *config.grpo.max_iterations;
  }
  if (config.grpo.learning_rate) t.learning_rate = *config.grpo.learning_rate;
  return t;
}

}  // namespace opd
