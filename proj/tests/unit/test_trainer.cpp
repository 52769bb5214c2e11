#include <cmath>
#include <vector>

#include "doctest.h"
#include "opd/errors.hpp"
#include "opd/trainer.hpp"
#include "test_support.hpp"

using namespace opd;
using opd::test::SmallGrid;

namespace {

const TeacherPolicy& GridTeacher() {
  static const TeacherPolicy teacher = [] {
    TeacherTrainOptions o;
    o.seed = 1;
    o.goal_reward = 100;
    o.discount = 0.95;
    o.temperature = 1.0;
    return TrainTeacher(SmallGrid(), o);
  }();
  return teacher;
}

TrainConfig SmallConfig(Objective objective = Objective::kReverseKl) {
  TrainConfig c;
  c.objective = objective;
  c.seed = 3;
  c.batch_size = 8;
  c.group_size = 4;
  c.max_iterations = 6;
  c.eval_every = 2;
  c.eval_episodes = 50;
  c.hidden_dim = 16;
  c.teacher_temperature = 1.0;
  c.optimizer = OptimizerKind::kAdam;
  c.learning_rate = 0.05;
  c.sft_learning_rate = 0.01;
  c.sft_epochs = 100;
  return c;
}

PolicyNet OneDemoInit(const TrainConfig& c) {
  return SftInit(SmallGrid(), CollectDemos(GridTeacher(), 1, c.seed), c);
}

// Deterministic policy: zero weights, output bias strongly favoring one
// action.
PolicyNet PointMass(int features, int action) {
  PolicyNet net(features, 2, 5);
  net.b2(action) = 60.0;
  return net;
}

}  // namespace

TEST_CASE("evaluate: teacher-greedy beats a uniform policy") {
  const EnvSpec spec = SmallGrid();
  const Environment env(spec);
  const PolicyNet uniform(env.feature_dim(), 4, 5);
  const double uniform_rate = Evaluate(uniform, spec, 300, 1);
  CHECK(uniform_rate == Evaluate(uniform, spec, 300, 1));
  CHECK(TeacherSuccessRate(GridTeacher(), 300, 1) >= 0.95);
  CHECK(uniform_rate < TeacherSuccessRate(GridTeacher(), 300, 1));
  CHECK_THROWS_AS(Evaluate(uniform, spec, 0, 1), UsageError);
}

TEST_CASE("evaluate: rates stay in the unit interval") {
  Rng rng(2);
  const EnvSpec spec = SmallGrid();
  const Environment env(spec);
  for (int trial = 0; trial < 10; ++trial) {
    const PolicyNet net = opd::test::RandomNet(rng, env.feature_dim(), 4, 5);
    const double r = Evaluate(net, spec, 40, rng.NextU64());
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("collect demos keeps successful teacher trajectories") {
  const DemoDataset d = CollectDemos(GridTeacher(), 3, 5);
  CHECK(d.demos.size() == 3);
  CHECK(d.per_task_count.at(0) == 3);
  for (const auto& demo : d.demos) {
    for (const DemoPair& p : demo) {
      CHECK(p.action == GridTeacher().GreedyAction(p.state));
    }
  }
}

TEST_CASE("one-demo init is clearly worse than the teacher") {
  const TrainConfig c = SmallConfig();
  const PolicyNet init = OneDemoInit(c);
  const double teacher = TeacherSuccessRate(GridTeacher(), 200, c.seed);
  CHECK(Evaluate(init, SmallGrid(), 200, c.seed) < teacher - 0.2);
  CHECK(OneDemoInit(c) == init);
}

TEST_CASE("sft on a one-step demo decreases the loss every epoch") {
  const Environment env(SmallGrid());
  DemoDataset d;
  d.demos.push_back({{env.MakeState({3, 2}), ActionToken{kRight}}});
  TrainConfig c = SmallConfig();
  c.optimizer = OptimizerKind::kSgdMomentum;
  c.momentum = 0.0;
  c.sft_learning_rate = 0.01;
  double last = INFINITY;
  for (int epochs = 1; epochs <= 20; ++epochs) {
    c.sft_epochs = epochs;
    const PolicyNet net = SftInit(SmallGrid(), d, c);
    const double loss = SftLoss(net, d.Flatten()).loss;
    CHECK(loss < last);
    last = loss;
  }
  CHECK_THROWS_AS(SftInit(SmallGrid(), DemoDataset{}, c), ConfigError);
}

TEST_CASE("collect rollouts contract") {
  Environment env(SmallGrid());
  const TrainConfig c = SmallConfig();
  const PolicyNet init = OneDemoInit(c);
  SUBCASE("one prompt, eight members, one start state") {
    const auto groups = CollectRollouts(init, env, 1, 8, 9, 0);
    REQUIRE(groups.size() == 1);
    REQUIRE(groups[0].group_size() == 8);
    for (const Trajectory& tau : groups[0].trajectories) {
      CHECK(tau.records.front().state == groups[0].trajectories[0].records.front().state);
      CHECK(tau.final_state.terminal);
      CHECK(tau.outcome == OutcomeReward(tau));
    }
  }
  SUBCASE("recorded log-probs match a fresh forward pass") {
    for (const GroupRollout& g : CollectRollouts(init, env, 4, 4, 10, 2)) {
      for (const Trajectory& tau : g.trajectories) {
        for (const TokenRecord& rec : tau.records) {
          CHECK(std::abs(rec.student_logprob -
                         Forward(init, rec.state).log_probs[rec.action.index]) <= 1e-12);
          CHECK(rec.action.index >= 0);
          CHECK(rec.action.index < 5);
        }
      }
    }
  }
  SUBCASE("a point-mass policy without slip repeats itself") {
    const auto groups =
        CollectRollouts(PointMass(env.feature_dim(), kRight), env, 2, 6, 11, 0);
    for (const GroupRollout& g : groups) {
      for (const Trajectory& tau : g.trajectories) {
        CHECK(tau.records.size() == g.trajectories[0].records.size());
        CHECK(tau.final_state == g.trajectories[0].final_state);
      }
    }
  }
  SUBCASE("env steps equal recorded tokens") {
    const std::uint64_t before = env.steps_taken();
    std::uint64_t tokens = 0;
    for (const GroupRollout& g : CollectRollouts(init, env, 3, 4, 12, 0)) {
      for (const Trajectory& tau : g.trajectories) tokens += tau.records.size();
    }
    CHECK(env.steps_taken() - before == tokens);
  }
  SUBCASE("same seed and iteration reproduce the batch") {
    const auto a = CollectRollouts(init, env, 3, 3, 13, 4);
    const auto b = CollectRollouts(init, env, 3, 3, 13, 4);
    for (std::size_t j = 0; j < a.size(); ++j) {
      CHECK(a[j].prompt_seed == b[j].prompt_seed);
      for (std::size_t i = 0; i < a[j].trajectories.size(); ++i) {
        CHECK(a[j].trajectories[i].final_state == b[j].trajectories[i].final_state);
      }
    }
  }
}

TEST_CASE("labeling sets rewards and leaves the teacher untouched") {
  Environment env(SmallGrid());
  const TrainConfig c = SmallConfig();
  auto groups = CollectRollouts(OneDemoInit(c), env, 16, 8, 14, 0);
  const std::uint64_t hash = GridTeacher().Hash();
  const std::uint64_t steps = env.steps_taken();
  int labeled = 0;
  while (labeled < 10000) {
    LabelRollouts(groups, GridTeacher());
    for (const GroupRollout& g : groups) {
      for (const Trajectory& tau : g.trajectories) labeled += tau.records.size();
    }
  }
  CHECK(env.steps_taken() == steps);
  CHECK(GridTeacher().Hash() == hash);
  for (const GroupRollout& g : groups) {
    for (const Trajectory& tau : g.trajectories) {
      for (const TokenRecord& rec : tau.records) {
        REQUIRE(rec.intrinsic_reward.has_value());
        CHECK(std::abs(*rec.intrinsic_reward -
                       (*rec.teacher_logprob - rec.student_logprob)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("labeling against an identical teacher gives zero rewards") {
  Environment env(SmallGrid());
  const PolicyNet uniform(env.feature_dim(), 4, 5);
  auto groups = CollectRollouts(uniform, env, 2, 4, 15, 0);
  const TeacherPolicy flat(SmallGrid(), {}, {}, 1.0, 0.0);
  LabelRollouts(groups, flat);
  for (const GroupRollout& g : groups) {
    for (const Trajectory& tau : g.trajectories) {
      for (const TokenRecord& rec : tau.records) {
        CHECK(std::abs(*rec.intrinsic_reward) < 1e-12);
      }
    }
  }
}

TEST_CASE("train config validation") {
  TrainConfig c = SmallConfig();
  c.group_size = 1;
  CHECK_THROWS_AS(ValidateTrainConfig(c), ConfigError);
  c.objective = Objective::kGrpo;
  CHECK_THROWS_AS(ValidateTrainConfig(c), ConfigError);
  c.objective = Objective::kForwardKl;
  CHECK_NOTHROW(ValidateTrainConfig(c));
  c = SmallConfig();
  c.clip_eps = 1.0;
  CHECK_THROWS_AS(ValidateTrainConfig(c), ConfigError);
  c = SmallConfig();
  c.learning_rate = -0.1;
  CHECK_THROWS_AS(ValidateTrainConfig(c), ConfigError);
  for (Objective o : {Objective::kReverseKl, Objective::kForwardKl,
                      Objective::kHardCe, Objective::kGrpo,
                      Objective::kOfflineSft}) {
    CHECK(ParseObjective(ToString(o)) == o);
  }
  CHECK_THROWS_AS(ParseObjective("PPO"), ConfigError);
}

TEST_CASE("zero learning rate keeps policy and success constant") {
  TrainConfig c = SmallConfig();
  c.learning_rate = 0.0;
  const PolicyNet init = OneDemoInit(c);
  const TrainResult r = TrainOpd(c, SmallGrid(), GridTeacher(), init);
  CHECK(r.net == init);
  for (const MetricsRecord& m : r.metrics) {
    CHECK(m.success_rate == r.metrics.front().success_rate);
  }
}

TEST_CASE("training runs are deterministic with monotone step counters") {
  for (Objective o : {Objective::kReverseKl, Objective::kForwardKl,
                      Objective::kHardCe}) {
    const TrainConfig c = SmallConfig(o);
    const PolicyNet init = OneDemoInit(c);
    const TrainResult a = TrainOpd(c, SmallGrid(), GridTeacher(), init);
    const TrainResult b = TrainOpd(c, SmallGrid(), GridTeacher(), init);
    CHECK(a.net == b.net);
    CHECK(MetricsCsv(a.metrics) == MetricsCsv(b.metrics));
    for (std::size_t i = 1; i < a.metrics.size(); ++i) {
      CHECK(a.metrics[i].env_steps_cumulative >= a.metrics[i - 1].env_steps_cumulative);
      CHECK(a.metrics[i].iteration > a.metrics[i - 1].iteration);
    }
    CHECK(a.metrics.back().env_steps_cumulative == a.env_steps);
    CHECK(a.metrics.front().iteration == 0);
    CHECK(a.metrics.back().iteration == c.max_iterations);
  }
}

TEST_CASE("distillation leaves the teacher hash unchanged") {
  const TrainConfig c = SmallConfig();
  const std::uint64_t hash = GridTeacher().Hash();
  TrainOpd(c, SmallGrid(), GridTeacher(), OneDemoInit(c));
  CHECK(GridTeacher().Hash() == hash);
}

TEST_CASE("train_opd rejects non-distillation objectives") {
  const TrainConfig c = SmallConfig(Objective::kGrpo);
  CHECK_THROWS_AS(TrainOpd(c, SmallGrid(), GridTeacher(), OneDemoInit(c)),
                  ConfigError);
}

TEST_CASE("reverse-KL distillation improves on the one-demo init") {
  TrainConfig c = SmallConfig();
  c.batch_size = 32;
  c.group_size = 8;
  c.max_iterations = 30;
  c.eval_every = 10;
  c.eval_episodes = 100;
  const PolicyNet init = OneDemoInit(c);
  const TrainResult r = TrainOpd(c, SmallGrid(), GridTeacher(), init);
  const double teacher = TeacherSuccessRate(GridTeacher(), 100, c.seed);
  CHECK(r.metrics.back().success_rate >= 0.9 * teacher);
  CHECK(r.metrics.back().mean_reverse_kl < r.metrics[1].mean_reverse_kl);
}

TEST_CASE("grpo: groups with identical outcomes give no update") {
  // A policy that never reaches the goal within the horizon: every outcome
  // is 0, every advantage 0, so parameters stay put.
  TrainConfig c = SmallConfig(Objective::kGrpo);
  const Environment env(SmallGrid());
  const PolicyNet stuck = PointMass(env.feature_dim(), kLeft);
  const TrainResult r = TrainGrpo(c, SmallGrid(), stuck);
  CHECK(r.net == stuck);
}

TEST_CASE("grpo logs ratio statistics and is deterministic") {
  TrainConfig c = SmallConfig(Objective::kGrpo);
  c.learning_rate = 0.01;
  const PolicyNet init = OneDemoInit(c);
  const TrainResult a = TrainGrpo(c, SmallGrid(), init);
  const TrainResult b = TrainGrpo(c, SmallGrid(), init);
  CHECK(MetricsCsv(a.metrics) == MetricsCsv(b.metrics));
  CHECK(a.late_epoch_tokens > 0);
  CHECK(a.late_epoch_in_band <= a.late_epoch_tokens);
  CHECK(static_cast<double>(a.late_epoch_in_band) / a.late_epoch_tokens >= 0.99);
  CHECK(std::isnan(a.metrics.front().mean_reverse_kl));
  RunOptions o;
  o.metrics_teacher = &GridTeacher();
  const TrainResult with = TrainGrpo(c, SmallGrid(), init, o);
  CHECK(with.net == a.net);
  CHECK(std::isfinite(with.metrics.back().mean_reverse_kl));
}

TEST_CASE("distill then grpo hands parameters across the stage boundary") {
  TrainConfig distill = SmallConfig();
  TrainConfig grpo = SmallConfig(Objective::kGrpo);
  grpo.max_iterations = 4;
  const PolicyNet init = OneDemoInit(distill);
  const TrainResult alone = TrainOpd(distill, SmallGrid(), GridTeacher(), init);
  const TrainResult both =
      TrainDistillThenGrpo(distill, grpo, SmallGrid(), GridTeacher(), init);
  const TrainResult tuned_alone = TrainGrpo(grpo, SmallGrid(), alone.net);
  CHECK(both.net == tuned_alone.net);
  std::size_t distill_rows = 0;
  for (const MetricsRecord& m : both.metrics) {
    if (m.stage == "distill") {
      ++distill_rows;
    } else {
      CHECK(m.stage == "grpo");
      CHECK(m.iteration >= distill.max_iterations);
      CHECK(m.env_steps_cumulative >= alone.env_steps);
    }
  }
  CHECK(distill_rows == alone.metrics.size());
  CHECK(both.iterations == distill.max_iterations + grpo.max_iterations);
  CHECK_THROWS_AS(TrainDistillThenGrpo(SmallConfig(Objective::kHardCe), grpo,
                                       SmallGrid(), GridTeacher(), init),
                  ConfigError);
}

TEST_CASE("offline sft is deterministic and fits its dataset") {
  TrainConfig c = SmallConfig(Objective::kOfflineSft);
  c.max_iterations = 40;
  c.eval_every = 20;
  const DemoDataset data = CollectDemos(GridTeacher(), 5, 21);
  const PolicyNet init = OneDemoInit(c);
  const TrainResult a = OfflineSftTrain(c, SmallGrid(), data, init);
  const TrainResult b = OfflineSftTrain(c, SmallGrid(), data, init);
  CHECK(a.net == b.net);
  CHECK(SftLoss(a.net, data.Flatten()).loss < SftLoss(init, data.Flatten()).loss);
  CHECK(a.env_steps == 0);
  CHECK_THROWS_AS(OfflineSftTrain(c, SmallGrid(), DemoDataset{}, init),
                  ConfigError);
}

TEST_CASE("early stop ends a run after three evaluations at target") {
  TrainConfig c = SmallConfig();
  c.max_iterations = 50;
  c.eval_every = 1;
  c.early_stop_success = 0.0;
  const TrainResult r = TrainOpd(c, SmallGrid(), GridTeacher(), OneDemoInit(c));
  CHECK(r.early_stopped);
  CHECK(r.metrics.size() == 3);
}

TEST_CASE("ood probes are tracked when given") {
  TrainConfig c = SmallConfig(Objective::kHardCe);
  RunOptions o;
  o.ood_probes = OodProbeStates(SmallGrid(), GridTeacher(), 0.0);
  const TrainResult r = TrainOpd(c, SmallGrid(), GridTeacher(), OneDemoInit(c), o);
  for (const MetricsRecord& m : r.metrics) {
    CHECK(m.mean_entropy_ood >= 0.0);
    CHECK(m.mean_entropy_ood <= std::log(5.0) + 1e-12);
  }
}
