#include "opd/trainer.hpp"

#include <cmath>
#include <limits>

#include "opd/errors.hpp"

namespace opd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct BatchStats {
  double mean_reverse_kl = kNaN;
  double mean_intrinsic_reward = kNaN;
  double grad_norm = 0.0;
};

// Evaluation, entropy profiles and checkpointing at a fixed cadence.
class RunLogger {
 public:
  RunLogger(const TrainConfig& config, const EnvSpec& spec,
            const RunOptions& options)
      : config_(config), spec_(spec), options_(options) {
    Environment env(spec);
    all_states_ = options.eval_tasks.empty()
                      ? env.EnumerateStates()
                      : env.EnumerateStates(options.eval_tasks);
  }

  // Returns the evaluated success rate.
  double Log(int iteration, std::uint64_t env_steps, const PolicyNet& net,
             const BatchStats& stats, TrainResult& result) const {
    MetricsRecord rec;
    rec.run_id = options_.run_id;
    rec.stage = options_.stage;
    rec.iteration = options_.iteration_offset + iteration;
    rec.env_steps_cumulative = env_steps;
    rec.success_rate = Evaluate(net, spec_, config_.eval_episodes,
                                config_.seed, options_.eval_tasks);
    rec.mean_entropy_all = ComputeEntropyProfile(net, all_states_).mean;
    if (!options_.ood_probes.empty()) {
      rec.mean_entropy_ood = ComputeEntropyProfile(net, options_.ood_probes).mean;
    }
    rec.mean_reverse_kl = stats.mean_reverse_kl;
    rec.mean_intrinsic_reward = stats.mean_intrinsic_reward;
    rec.grad_norm = stats.grad_norm;
    rec.seed = config_.seed;
    result.metrics.push_back(rec);
    result.checkpoints.push_back({rec.iteration, net});
    return rec.success_rate;
  }

  bool ShouldLog(int iteration) const {
    return iteration % config_.eval_every == 0 ||
           iteration == config_.max_iterations;
  }

 private:
  const TrainConfig& config_;
  const EnvSpec& spec_;
  const RunOptions& options_;
  std::vector<EnvState> all_states_;
};

class EarlyStop {
 public:
  explicit EarlyStop(std::optional<double> target) : target_(target) {}
  bool Update(double success) {
    if (!target_) return false;
    streak_ = success >= *target_ ? streak_ + 1 : 0;
    return streak_ >= 3;
  }

 private:
  std::optional<double> target_;
  int streak_ = 0;
};

BatchStats DistillBatchStats(const std::vector<GroupRollout>& groups,
                             const PolicyNet& net,
                             const TeacherPolicy& teacher) {
  double kl = 0.0;
  double reward = 0.0;
  std::int64_t tokens = 0;
  for (const GroupRollout& group : groups) {
    for (const Trajectory& tau : group.trajectories) {
      for (const TokenRecord& rec : tau.records) {
        kl += KlDivergence(Forward(net, rec.state), teacher.Label(rec.state));
        reward += rec.intrinsic_reward.value_or(0.0);
        ++tokens;
      }
    }
  }
  BatchStats stats;
  if (tokens > 0) {
    stats.mean_reverse_kl = kl / tokens;
    stats.mean_intrinsic_reward = reward / tokens;
  }
  return stats;
}

// Phase 3 gradient for one group under the configured objective, in the
// ascent direction, normalized as (1/G) sum_i sum_t.
GradBuffer DistillGroupGradient(const TrainConfig& config,
                                const GroupRollout& group,
                                const PolicyNet& net,
                                const TeacherPolicy& teacher, Rng& rng) {
  if (config.objective == Objective::kReverseKl) {
    return OpdGroupGradient(group, net);
  }
  GradBuffer grad(net);
  for (const Trajectory& tau : group.trajectories) {
    for (const TokenRecord& rec : tau.records) {
      const CategoricalDist target = teacher.Label(rec.state);
      LossAndGrad lg;
      if (config.objective == Objective::kHardCe) {
        lg = HardCeLoss(net, rec.state, target);
      } else if (config.forward_kl_sampled) {
        lg = ForwardKlSampledLoss(net, rec.state, target, rng,
                                  config.forward_kl_samples);
      } else {
        lg = ForwardKlLoss(net, rec.state, target);
      }
      grad.Merge(lg.grad);
    }
  }
  grad.Scale(-1.0 / group.group_size());
  grad.set_accumulation_count(1);
  return grad;
}

}  // namespace

std::string ToString(Objective objective) {
  switch (objective) {
    case Objective::kReverseKl: return "ReverseKL";
    case Objective::kForwardKl: return "ForwardKL";
    case Objective::kHardCe: return "HardCE";
    case Objective::kGrpo: return "GRPO";
    case Objective::kOfflineSft: return "OfflineSFT";
  }
  return "?";
}

Objective ParseObjective(const std::string& name) {
  if (name == "ReverseKL") return Objective::kReverseKl;
  if (name == "ForwardKL") return Objective::kForwardKl;
  if (name == "HardCE") return Objective::kHardCe;
  if (name == "GRPO") return Objective::kGrpo;
  if (name == "OfflineSFT") return Objective::kOfflineSft;
  throw ConfigError("train.objective: unknown objective '" + name + "'");
}

void ValidateTrainConfig(const TrainConfig& c) {
  auto positive = [](int v, const char* key) {
    if (v <= 0) throw ConfigError(std::string(key) + " must be positive");
  };
  positive(c.group_size, "train.group_size");
  positive(c.batch_size, "train.batch_size");
  positive(c.grpo_epochs, "train.grpo_epochs");
  positive(c.max_iterations, "train.max_iterations");
  positive(c.eval_every, "train.eval_every");
  positive(c.eval_episodes, "train.eval_episodes");
  positive(c.hidden_dim, "train.hidden_dim");
  positive(c.updates_per_batch, "train.updates_per_batch");
  positive(c.sft_epochs, "train.sft_epochs");
  positive(c.forward_kl_samples, "train.forward_kl_samples");
  if (c.init_demos < 0) throw ConfigError("train.init_demos must be >= 0");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("train.learning_rate must be a finite value >= 0");
  }
  if (!(c.sft_learning_rate > 0.0)) {
    throw ConfigError("train.sft_learning_rate must be positive");
  }
  if (!(c.clip_eps > 0.0 && c.clip_eps < 1.0)) {
    throw ConfigError("train.clip_eps must lie in (0, 1)");
  }
  if (!(c.teacher_temperature > 0.0)) {
    throw ConfigError("train.teacher_temperature must be positive");
  }
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw ConfigError("train.momentum must lie in [0, 1)");
  }
  if (!(c.grad_clip_norm > 0.0)) {
    throw ConfigError("train.grad_clip_norm must be positive");
  }
  if ((c.objective == Objective::kReverseKl ||
       c.objective == Objective::kGrpo) &&
      c.group_size < 2) {
    throw ConfigError("train.group_size must be >= 2 for " +
                      ToString(c.objective));
  }
}

double Evaluate(const PolicyNet& net, const EnvSpec& spec, int episodes,
                std::uint64_t seed, const std::vector<int>& tasks) {
  if (episodes < 1) throw UsageError("evaluation needs at least one episode");
  Environment env(spec);
  Rng rng = Rng::Derive(seed, {StreamId(Stream::kEval)});
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    std::optional<int> task;
    if (!tasks.empty()) task = tasks[e % tasks.size()];
    EnvState s = env.Reset(rng.NextU64(), task);
    while (!s.terminal) s = env.Step(s, Argmax(Forward(net, s)), rng);
    successes += s.succeeded;
  }
  return static_cast<double>(successes) / episodes;
}

DemoDataset CollectDemos(const TeacherPolicy& teacher, int per_task,
                         std::uint64_t seed, const std::vector<int>& tasks) {
  Environment env(teacher.spec());
  std::vector<int> task_list = tasks;
  if (task_list.empty()) {
    for (int t = 0; t < teacher.spec().num_tasks; ++t) task_list.push_back(t);
  }
  DemoDataset data;
  Rng rng = Rng::Derive(seed, {StreamId(Stream::kDemo)});
  for (int task : task_list) {
    int collected = 0;
    // Bounded retry budget: a qualified teacher succeeds >= 95% of the time.
    for (int attempt = 0; collected < per_task && attempt < 100 * per_task + 100;
         ++attempt) {
      EnvState s = env.Reset(rng.NextU64(), task);
      std::vector<DemoPair> demo;
      while (!s.terminal) {
        const ActionToken a = teacher.GreedyAction(s);
        demo.push_back({s, a});
        s = env.Step(s, a, rng);
      }
      if (!s.succeeded) continue;
      data.demos.push_back(std::move(demo));
      ++collected;
    }
    data.per_task_count[task] = collected;
  }
  return data;
}

PolicyNet SftInit(const EnvSpec& spec, const DemoDataset& demos,
                  const TrainConfig& config) {
  const std::vector<DemoPair> pairs = demos.Flatten();
  if (pairs.empty()) throw ConfigError("sft_init needs a non-empty demo set");
  Environment env(spec);
  PolicyNet net = PolicyNet::Initialize(env.feature_dim(), config.hidden_dim,
                                        env.num_actions(), config.seed);
  OptimState opt =
      MakeOptimState(net, config.sft_learning_rate, config.momentum,
                     config.grad_clip_norm, config.optimizer);
  for (int epoch = 0; epoch < config.sft_epochs; ++epoch) {
    LossAndGrad lg = SftLoss(net, pairs);
    lg.grad.Scale(-1.0);
    ApplyUpdate(net, lg.grad, opt);
  }
  return net;
}

std::vector<GroupRollout> CollectRollouts(const PolicyNet& net,
                                          Environment& env, int batch_size,
                                          int group_size, std::uint64_t seed,
                                          int iteration,
                                          const std::vector<int>& tasks) {
  if (batch_size < 1 || group_size < 1) {
    throw UsageError("rollout batch and group sizes must be >= 1");
  }
  const auto it = static_cast<std::uint64_t>(iteration);
  std::vector<GroupRollout> groups(batch_size);
  for (int j = 0; j < batch_size; ++j) {
    const auto jj = static_cast<std::uint64_t>(j);
    GroupRollout& group = groups[j];
    group.prompt_seed =
        Rng::Derive(seed, {StreamId(Stream::kPrompt), it, jj}).NextU64();
    std::optional<int> task;
    if (!tasks.empty()) task = tasks[j % tasks.size()];
    const EnvState start = env.Reset(group.prompt_seed, task);
    group.trajectories.resize(group_size);
    for (int i = 0; i < group_size; ++i) {
      Rng rng = Rng::Derive(seed, {StreamId(Stream::kRollout), it, jj,
                                   static_cast<std::uint64_t>(i)});
      Trajectory& tau = group.trajectories[i];
      EnvState s = start;
      while (!s.terminal) {
        const CategoricalDist dist = Forward(net, s);
        const ActionToken a = SampleAction(dist, rng);
        TokenRecord rec;
        rec.action = a;
        rec.student_logprob = dist.log_probs[a.index];
        rec.old_logprob = rec.student_logprob;
        EnvState next = env.Step(s, a, rng);
        rec.state = std::move(s);
        tau.records.push_back(std::move(rec));
        s = std::move(next);
      }
      tau.final_state = s;
      tau.outcome = OutcomeReward(tau);
    }
  }
  return groups;
}

void LabelRollouts(std::vector<GroupRollout>& groups,
                   const TeacherPolicy& teacher) {
  for (GroupRollout& group : groups) {
    for (Trajectory& tau : group.trajectories) {
      for (TokenRecord& rec : tau.records) {
        const double teacher_lp = teacher.LogProb(rec.state, rec.action);
        rec.teacher_logprob = teacher_lp;
        rec.intrinsic_reward = ReverseKlReward(rec.student_logprob, teacher_lp);
      }
    }
  }
}

TrainResult TrainOpd(const TrainConfig& config, const EnvSpec& spec,
                     const TeacherPolicy& teacher, const PolicyNet& init,
                     const RunOptions& options) {
  ValidateTrainConfig(config);
  if (config.objective != Objective::kReverseKl &&
      config.objective != Objective::kForwardKl &&
      config.objective != Objective::kHardCe) {
    throw ConfigError("train_opd needs objective ReverseKL, ForwardKL or "
                      "HardCE, got " + ToString(config.objective));
  }
  const TeacherPolicy labeler =
      teacher.temperature() == config.teacher_temperature
          ? teacher
          : teacher.WithTemperature(config.teacher_temperature);
  Environment env(spec);
  TrainResult result;
  result.net = init;
  OptimState opt = MakeOptimState(init, config.learning_rate, config.momentum,
                                  config.grad_clip_norm, config.optimizer);
  const RunLogger logger(config, spec, options);
  EarlyStop early(config.early_stop_success);
  Rng fkl_rng = Rng::Derive(config.seed, {StreamId(Stream::kTeacher), 0xf1});

  early.Update(logger.Log(0, options.env_steps_offset, result.net, {}, result));
  for (int k = 1; k <= config.max_iterations; ++k) {
    // Phase 1: on-policy sampling.
    std::vector<GroupRollout> groups =
        CollectRollouts(result.net, env, config.batch_size, config.group_size,
                        config.seed, k, config.tasks);
    // Phase 2: dense teacher labeling.
    LabelRollouts(groups, labeler);
    BatchStats stats;
    if (logger.ShouldLog(k)) stats = DistillBatchStats(groups, result.net, labeler);
    // Phase 3: optimization.
    for (int u = 0; u < config.updates_per_batch; ++u) {
      GradBuffer total(result.net);
      for (const GroupRollout& group : groups) {
        total.Merge(DistillGroupGradient(config, group, result.net, labeler,
                                         fkl_rng));
      }
      stats.grad_norm = ApplyUpdate(result.net, total, opt).grad_norm;
    }
    result.iterations = k;
    if (logger.ShouldLog(k)) {
      const double success = logger.Log(
          k, options.env_steps_offset + env.steps_taken(), result.net, stats,
          result);
      if (early.Update(success)) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.env_steps = options.env_steps_offset + env.steps_taken();
  return result;
}

TrainResult TrainGrpo(const TrainConfig& config, const EnvSpec& spec,
                      const PolicyNet& init, const RunOptions& options) {
  ValidateTrainConfig(config);
  if (config.objective != Objective::kGrpo) {
    throw ConfigError("train_grpo needs objective GRPO, got " +
                      ToString(config.objective));
  }
  Environment env(spec);
  TrainResult result;
  result.net = init;
  OptimState opt = MakeOptimState(init, config.learning_rate, config.momentum,
                                  config.grad_clip_norm, config.optimizer);
  const RunLogger logger(config, spec, options);
  EarlyStop early(config.early_stop_success);

  early.Update(logger.Log(0, options.env_steps_offset, result.net, {}, result));
  for (int k = 1; k <= config.max_iterations; ++k) {
    const std::vector<GroupRollout> groups =
        CollectRollouts(result.net, env, config.batch_size, config.group_size,
                        config.seed, k, config.tasks);
    BatchStats stats;
    if (options.metrics_teacher != nullptr && logger.ShouldLog(k)) {
      std::vector<GroupRollout> labeled = groups;
      LabelRollouts(labeled, *options.metrics_teacher);
      stats = DistillBatchStats(labeled, result.net, *options.metrics_teacher);
    }
    for (int epoch = 1; epoch <= config.grpo_epochs; ++epoch) {
      GradBuffer total(result.net);
      for (const GroupRollout& group : groups) {
        GrpoSurrogateResult sr = GrpoSurrogate(group, result.net, config.clip_eps);
        if (epoch >= 2) {
          result.late_epoch_tokens += sr.tokens;
          result.late_epoch_in_band += sr.ratio_in_band;
        }
        total.Merge(sr.grad);
      }
      stats.grad_norm = ApplyUpdate(result.net, total, opt).grad_norm;
    }
    result.iterations = k;
    if (logger.ShouldLog(k)) {
      const double success = logger.Log(
          k, options.env_steps_offset + env.steps_taken(), result.net, stats,
          result);
      if (early.Update(success)) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.env_steps = options.env_steps_offset + env.steps_taken();
  return result;
}

TrainResult TrainDistillThenGrpo(const TrainConfig& distill_config,
                                 const TrainConfig& grpo_config,
                                 const EnvSpec& spec,
                                 const TeacherPolicy& teacher,
                                 const PolicyNet& init,
                                 const RunOptions& options) {
  if (distill_config.objective != Objective::kReverseKl) {
    throw ConfigError("distill stage must use ReverseKL");
  }
  RunOptions distill_options = options;
  distill_options.stage = "distill";
  TrainResult distilled =
      TrainOpd(distill_config, spec, teacher, init, distill_options);

  RunOptions grpo_options = options;
  grpo_options.stage = "grpo";
  grpo_options.iteration_offset =
      options.iteration_offset + distilled.iterations;
  grpo_options.env_steps_offset = distilled.env_steps;
  TrainResult tuned = TrainGrpo(grpo_config, spec, distilled.net, grpo_options);

  TrainResult out = std::move(tuned);
  out.metrics.insert(out.metrics.begin(), distilled.metrics.begin(),
                     distilled.metrics.end());
  out.checkpoints.insert(out.checkpoints.begin(), distilled.checkpoints.begin(),
                         distilled.checkpoints.end());
  out.iterations += distilled.iterations;
  return out;
}

TrainResult OfflineSftTrain(const TrainConfig& config, const EnvSpec& spec,
                            const DemoDataset& dataset, const PolicyNet& init,
                            const RunOptions& options) {
  ValidateTrainConfig(config);
  const std::vector<DemoPair> pairs = dataset.Flatten();
  if (pairs.empty()) {
    throw ConfigError("offline_sft_train needs a non-empty dataset");
  }
  TrainResult result;
  result.net = init;
  OptimState opt = MakeOptimState(init, config.learning_rate, config.momentum,
                                  config.grad_clip_norm, config.optimizer);
  const RunLogger logger(config, spec, options);
  EarlyStop early(config.early_stop_success);

  early.Update(logger.Log(0, options.env_steps_offset, result.net, {}, result));
  for (int k = 1; k <= config.max_iterations; ++k) {
    LossAndGrad lg = SftLoss(result.net, pairs);
    if (!std::isfinite(lg.loss)) {
      throw DivergenceError("non-finite SFT loss at iteration " +
                            std::to_string(k));
    }
    lg.grad.Scale(-1.0);
    BatchStats stats;
    stats.grad_norm = ApplyUpdate(result.net, lg.grad, opt).grad_norm;
    result.iterations = k;
    if (logger.ShouldLog(k)) {
      const double success = logger.Log(k, options.env_steps_offset,
                                        result.net, stats, result);
      if (early.Update(success)) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.env_steps = options.env_steps_offset;
  return result;
}

}  // namespace opd
