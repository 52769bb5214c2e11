#ifndef OPD_TRAINER_HPP_
#define OPD_TRAINER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "opd/envsim.hpp"
#include "opd/metrics.hpp"
#include "opd/netcore.hpp"
#include "opd/objectives.hpp"
#include "opd/teacher.hpp"

namespace opd {

enum class Objective { kReverseKl, kForwardKl, kHardCe, kGrpo, kOfflineSft };

std::string ToString(Objective objective);
Objective ParseObjective(const std::string& name);

struct TrainConfig {
  Objective objective = Objective::kReverseKl;
  int group_size = 8;
  int batch_size = 64;
  double learning_rate = 0.1;
  double clip_eps = 0.2;
  int grpo_epochs = 2;
  int max_iterations = 100;
  int eval_every = 5;
  int eval_episodes = 200;
  std::uint64_t seed = 0;
  double teacher_temperature = 0.5;
  int init_demos = 1;

  int hidden_dim = 64;
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  double momentum = 0.9;
  double grad_clip_norm = 10.0;
  // Optimizer steps per collected batch for the distillation objectives.
  int updates_per_batch = 1;
  int sft_epochs = 200;
  double sft_learning_rate = 0.05;
  // Estimate forward KL from teacher samples instead of the exact sum.
  bool forward_kl_sampled = false;
  int forward_kl_samples = 4;
  // Stop once evaluated success >= this value on 3 consecutive evaluations.
  std::optional<double> early_stop_success;
  // Tasks that prompts cycle through (empty: the environment's own draw).
  std::vector<int> tasks;

  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError naming the offending field.
void ValidateTrainConfig(const TrainConfig& config);

// Logging context shared by the training loops.
struct RunOptions {
  std::string run_id = "run";
  std::string stage = "train";
  // Optional teacher used only for logged KL statistics.
  const TeacherPolicy* metrics_teacher = nullptr;
  std::vector<EnvState> ood_probes;
  std::vector<int> eval_tasks;  // empty: environment draw
  // Offsets so that composed stages continue the same counters.
  int iteration_offset = 0;
  std::uint64_t env_steps_offset = 0;
};

struct TrainResult {
  PolicyNet net;
  std::vector<MetricsRecord> metrics;
  std::vector<Checkpoint> checkpoints;  // one per evaluation
  std::uint64_t env_steps = 0;          // including env_steps_offset
  int iterations = 0;                   // iterations run in this stage
  bool early_stopped = false;
  // GRPO only: ratio statistics for epochs >= 2.
  std::int64_t late_epoch_tokens = 0;
  std::int64_t late_epoch_in_band = 0;
};

// Greedy (argmax) rollouts on a dedicated evaluation stream derived from
// `seed`; returns the success fraction. Episode e uses tasks[e % size]
// when tasks are given.
double Evaluate(const PolicyNet& net, const EnvSpec& spec, int episodes,
                std::uint64_t seed, const std::vector<int>& tasks = {});

// Greedy teacher rollouts; keeps successful ones until `per_task` demos per
// task are collected. Recorded actions are the teacher's choices.
DemoDataset CollectDemos(const TeacherPolicy& teacher, int per_task,
                         std::uint64_t seed, const std::vector<int>& tasks = {});

// Behavior cloning on the demo set for config.sft_epochs full-batch steps
// from a fresh initialization. Throws ConfigError on an empty demo set.
PolicyNet SftInit(const EnvSpec& spec, const DemoDataset& demos,
                  const TrainConfig& config);

// Phase 1: B prompts x G student trajectories run to termination.
// Randomness of member i of prompt j at `iteration` comes from its own
// substream, so results do not depend on collection order.
std::vector<GroupRollout> CollectRollouts(const PolicyNet& net,
                                          Environment& env, int batch_size,
                                          int group_size, std::uint64_t seed,
                                          int iteration,
                                          const std::vector<int>& tasks = {});

// Phase 2: sets teacher_logprob and intrinsic_reward on every record.
// Takes no environment, so it cannot step one.
void LabelRollouts(std::vector<GroupRollout>& groups,
                   const TeacherPolicy& teacher);

// Alternating sample / label / optimize loop for ReverseKL, ForwardKL or
// HardCE.
TrainResult TrainOpd(const TrainConfig& config, const EnvSpec& spec,
                     const TeacherPolicy& teacher, const PolicyNet& init,
                     const RunOptions& options = {});

// Outcome-reward GRPO; never consults a teacher.
TrainResult TrainGrpo(const TrainConfig& config, const EnvSpec& spec,
                      const PolicyNet& init, const RunOptions& options = {});

// ReverseKL distillation followed by GRPO from the distilled parameters.
// Metrics rows carry stage "distill" then "grpo".
TrainResult TrainDistillThenGrpo(const TrainConfig& distill_config,
                                 const TrainConfig& grpo_config,
                                 const EnvSpec& spec,
                                 const TeacherPolicy& teacher,
                                 const PolicyNet& init,
                                 const RunOptions& options = {});

// Full-batch behavior cloning on a static dataset with the same evaluation
// cadence as the online loops.
TrainResult OfflineSftTrain(const TrainConfig& config, const EnvSpec& spec,
                            const DemoDataset& dataset, const PolicyNet& init,
                            const RunOptions& options = {});

}  // namespace opd

#endif  // OPD_TRAINER_HPP_
