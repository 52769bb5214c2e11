#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "opd/config.hpp"
#include "opd/errors.hpp"
#include "opd/experiments.hpp"
#include "opd/text_io.hpp"

using namespace opd;

namespace fs = std::filesystem;

namespace {

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string ErrorOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// Random but valid configuration drawn key by key.
ExperimentConfig RandomConfig(Rng& rng) {
  ExperimentConfig c;
  const auto& kinds = AllExperimentKinds();
  c.experiment = kinds[static_cast<std::size_t>(rng.UniformInt(static_cast<int>(kinds.size())))];
  c.env.env_id = rng.UniformInt(2) ? EnvId::kMultiTask : EnvId::kGridNav;
  c.env.grid_size = 5 + rng.UniformInt(4);
  c.env.horizon = 30 + rng.UniformInt(10);
  c.env.num_tasks = c.env.env_id == EnvId::kMultiTask ? 6 : 1;
  c.env.p_slip = rng.Uniform(0.0, 0.2);
  c.teacher.episodes = 1000 + rng.UniformInt(5000);
  c.teacher.epsilon = rng.Uniform(0.0, 0.3);
  c.teacher.temperature = rng.Uniform(0.1, 2.0);
  c.train.group_size = 2 + rng.UniformInt(8);
  c.train.batch_size = 1 + rng.UniformInt(64);
  c.train.learning_rate = rng.Uniform(0.0, 0.2);
  c.train.optimizer = rng.UniformInt(2) ? OptimizerKind::kAdam : OptimizerKind::kSgdMomentum;
  c.train.init_demos = 1 + rng.UniformInt(3);
  c.train.forward_kl_sampled = rng.UniformInt(2) == 1;
  if (rng.UniformInt(2)) c.train.early_stop_success = rng.Uniform(0.5, 1.0);
  if (rng.UniformInt(2)) c.grpo.max_iterations = 1 + rng.UniformInt(100);
  if (rng.UniformInt(2)) c.grpo.learning_rate = rng.Uniform(0.0, 0.1);
  c.analysis.group_sizes = {2 + rng.UniformInt(3), 8};
  c.seeds = {rng.NextU64() % 1000, rng.NextU64() % 1000};
  c.out_dir = "runs/r" + std::to_string(rng.UniformInt(100));
  if (c.experiment == ExperimentKind::kDistill ||
      c.experiment == ExperimentKind::kDistillGrpo || rng.UniformInt(2)) {
    c.teacher_path = "teachers/t" + std::to_string(rng.UniformInt(100)) + ".txt";
  }
  if (c.experiment == ExperimentKind::kForgetting) {
    c.env.env_id = EnvId::kMultiTask;
    c.env.num_tasks = 6;
  }
  return c;
}

}  // namespace

TEST_CASE("flag overrides win over file values") {
  const ExperimentConfig base = ParseConfigText("train.group_size = 8\n");
  CHECK(base.train.group_size == 8);
  const fs::path dir = TempDir("opd_config_override");
  WriteFile(dir / "c.cfg", "experiment = grpo\ntrain.group_size = 8\n");
  const ExperimentConfig c =
      ResolveConfig(dir / "c.cfg", {"train.group_size=4"});
  CHECK(c.train.group_size == 4);
  CHECK(c.experiment == ExperimentKind::kGrpo);
}

TEST_CASE("the subcommand overrides the file's experiment") {
  const fs::path dir = TempDir("opd_config_subcommand");
  WriteFile(dir / "c.cfg", "experiment = grpo\n");
  const ExperimentConfig c =
      ResolveConfig(dir / "c.cfg", {}, ExperimentKind::kSftInit);
  CHECK(c.experiment == ExperimentKind::kSftInit);
}

TEST_CASE("distill without teacher_path names the key") {
  const std::string msg = ErrorOf([] {
    ResolveConfig(std::nullopt, {}, ExperimentKind::kDistill);
  });
  CHECK(msg.find("teacher_path") != std::string::npos);
  CHECK_NOTHROW(ResolveConfig(std::nullopt, {"teacher_path=t.txt"},
                              ExperimentKind::kDistillGrpo));
}

TEST_CASE("unknown keys, type mismatches and duplicates are named") {
  CHECK(ErrorOf([] { ParseConfigText("train.gruop_size = 4\n"); })
            .find("train.gruop_size") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfigText("train.group_size = four\n"); })
            .find("train.group_size") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfigText("env.p_slip = 0.1x\n"); })
            .find("env.p_slip") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfigText("train.objective = PPO\n"); })
            .find("train.objective") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfigText("env.id = Maze\n"); })
            .find("env.id") != std::string::npos);
  CHECK(ErrorOf([] { ParseConfigText("seeds = 1\nseeds = 2\n"); })
            .find("seeds") != std::string::npos);
  CHECK_THROWS_AS(ParseConfigText("just words\n"), ConfigError);
  CHECK_THROWS_AS(ResolveConfig(std::nullopt, {"novalue"}), ConfigError);
}

TEST_CASE("comments and blank lines are ignored") {
  const ExperimentConfig c =
      ParseConfigText("# header\n\n  env.grid_size = 7  \n# env.grid_size = 9\n");
  CHECK(c.env.grid_size == 7);
}

TEST_CASE("experiment-specific validation") {
  CHECK_THROWS_AS(ResolveConfig(std::nullopt, {"env.id=GridNav"},
                                ExperimentKind::kForgetting),
                  ConfigError);
  CHECK_THROWS_AS(
      ResolveConfig(std::nullopt, {"env.id=MultiTask", "env.num_tasks=6",
                                   "forgetting.seen=0,1", "forgetting.unseen=1,2"},
                    ExperimentKind::kForgetting),
      ConfigError);
  CHECK_THROWS_AS(ResolveConfig(std::nullopt, {"analysis.group_sizes=1,4"},
                                ExperimentKind::kGroupSizeAblation),
                  ConfigError);
  CHECK_THROWS_AS(ResolveConfig(std::nullopt,
                                {"teacher_path=t", "train.objective=HardCE"},
                                ExperimentKind::kDistillGrpo),
                  ConfigError);
  CHECK_THROWS_AS(ResolveConfig(std::nullopt, {"seeds="}), ConfigError);
  CHECK_THROWS_AS(ResolveConfig(std::nullopt, {"train.tasks=3"}), ConfigError);
}

TEST_CASE("experiment names round-trip") {
  for (ExperimentKind k : AllExperimentKinds()) {
    CHECK(ParseExperimentKind(ToString(k)) == k);
  }
  CHECK(AllExperimentKinds().size() == 10);
  CHECK_THROWS_AS(ParseExperimentKind("sweep"), ConfigError);
}

TEST_CASE("property: the resolved echo reparses to an equal config") {
  Rng rng(404);
  for (int trial = 0; trial < 300; ++trial) {
    const ExperimentConfig c = RandomConfig(rng);
    const std::string text = ResolvedConfigText(c);
    const ExperimentConfig back = ParseConfigText(text);
    CHECK(back == c);
    CHECK(ResolvedConfigText(back) == text);
  }
}

TEST_CASE("the echo lists every key exactly once") {
  const std::string text = ResolvedConfigText(ExperimentConfig{});
  for (const std::string& key : ConfigKeys()) {
    CHECK(text.find(key + " = ") != std::string::npos);
  }
}

TEST_CASE("shipped presets parse and validate") {
  for (const char* name :
       {"efficiency_race", "entropy_ablation", "forgetting",
        "group_size_ablation", "main_table_gridnav", "main_table_keydoor",
        "main_table_multitask"}) {
    const fs::path p = fs::path(OPD_CONFIG_DIR) / (std::string(name) + ".cfg");
    CHECK_NOTHROW(ResolveConfig(p, {}));
  }
}

TEST_CASE("seed helpers carry the run seed and grpo overrides") {
  ExperimentConfig c;
  c.grpo.max_iterations = 7;
  c.grpo.learning_rate = 0.003;
  CHECK(TeacherOptionsForSeed(c, 5).seed == 5);
  CHECK(TrainConfigForSeed(c, 5).seed == 5);
  const TrainConfig g = GrpoConfigForSeed(c, 5);
  CHECK(g.objective == Objective::kGrpo);
  CHECK(g.max_iterations == 7);
  CHECK(g.learning_rate == 0.003);
}

namespace {

std::vector<std::string> TinyOverrides(const fs::path& out) {
  return {"env.id=GridNav", "env.grid_size=5", "env.horizon=20",
          "teacher.goal_reward=100", "teacher.discount=0.95",
          "teacher.temperature=1", "train.teacher_temperature=1",
          "train.optimizer=adam", "train.learning_rate=0.05",
          "train.sft_learning_rate=0.01", "train.hidden_dim=16",
          "train.batch_size=4", "train.group_size=4", "train.max_iterations=4",
          "train.eval_every=2", "train.eval_episodes=40", "train.init_demos=1",
          "seeds=1,2", "out_dir=" + out.string()};
}

}  // namespace

TEST_CASE("group size ablation writes three runs per seed") {
  const fs::path out = TempDir("opd_exp_groups");
  std::vector<std::string> o = TinyOverrides(out);
  o.push_back("train.batch_size=32");
  const ExperimentConfig c =
      ResolveConfig(std::nullopt, o, ExperimentKind::kGroupSizeAblation);
  const ExperimentResult r = RunExperiment(c);
  CHECK(r.runs.size() == 6);
  for (const char* m : {"G2", "G4", "G8"}) {
    CHECK(fs::exists(out / "seed_1" / (std::string(m) + ".csv")));
    CHECK(SummaryValues(r.summary, m, "final_success").size() == 2);
  }
  CHECK(ParseConfigText(ReadFile(out / "config.resolved")) == c);
}

TEST_CASE("entropy ablation shares an init and reruns byte-identically") {
  const fs::path out = TempDir("opd_exp_entropy");
  std::vector<std::string> o = TinyOverrides(out);
  o.push_back("env.grid_size=7");
  o.push_back("env.horizon=30");
  o.push_back("teacher.epsilon=0.05");
  o.push_back("seeds=1");
  const ExperimentConfig c =
      ResolveConfig(std::nullopt, o, ExperimentKind::kEntropyAblation);
  const ExperimentResult r = RunExperiment(c);
  REQUIRE(r.runs.size() == 3);
  CHECK(r.runs[0].metrics.front().success_rate ==
        r.runs[1].metrics.front().success_rate);
  CHECK(r.runs[0].metrics.front().mean_entropy_ood ==
        r.runs[2].metrics.front().mean_entropy_ood);
  CHECK(fs::exists(out / "plots" / "seed_1" / "entropy_vs_iteration.svg"));
  const std::string summary = ReadFile(out / "summary.csv");
  const std::string first = ReadFile(out / "seed_1" / "ReverseKL.csv");
  RunExperiment(c);
  CHECK(ReadFile(out / "summary.csv") == summary);
  CHECK(ReadFile(out / "seed_1" / "ReverseKL.csv") == first);
}

TEST_CASE("distill reads a teacher checkpoint without modifying it") {
  const fs::path out = TempDir("opd_exp_distill");
  std::vector<std::string> o = TinyOverrides(out / "teacher_run");
  o.push_back("seeds=1");
  RunExperiment(ResolveConfig(std::nullopt, o, ExperimentKind::kTrainTeacher));
  const fs::path teacher = out / "teacher_run" / "seed_1" / "teacher.txt";
  REQUIRE(fs::exists(teacher));
  const std::string bytes = ReadFile(teacher);
  const auto mtime = fs::last_write_time(teacher);

  std::vector<std::string> d = TinyOverrides(out / "distill_run");
  d.push_back("seeds=1");
  d.push_back("teacher_path=" + teacher.string());
  const ExperimentResult r =
      RunExperiment(ResolveConfig(std::nullopt, d, ExperimentKind::kDistill));
  CHECK(ReadFile(teacher) == bytes);
  CHECK(fs::last_write_time(teacher) == mtime);
  CHECK(r.runs.size() == 1);
  CHECK(fs::exists(out / "distill_run" / "seed_1" / "ReverseKL.policy"));
  CHECK_FALSE(fs::exists(out / "distill_run" / "seed_1" / "teacher.txt"));
}

TEST_CASE("a teacher below the quality bar aborts the experiment") {
  const fs::path out = TempDir("opd_exp_weak_teacher");
  std::vector<std::string> o = TinyOverrides(out);
  o.push_back("teacher.episodes=1");
  CHECK_THROWS_AS(
      RunExperiment(ResolveConfig(std::nullopt, o, ExperimentKind::kSftInit)),
      TeacherQualityError);
}

TEST_CASE("summary lookups") {
  const std::vector<SummaryRow> rows{{"OPD", "1", "x", 1.0},
                                     {"OPD", "2", "x", 3.0},
                                     {"OPD", "median", "x", 2.0}};
  CHECK(SummaryValue(rows, "OPD", "median", "x") == 2.0);
  CHECK(SummaryValues(rows, "OPD", "x") == std::vector<double>{1.0, 3.0});
  CHECK_THROWS_AS(SummaryValue(rows, "GRPO", "1", "x"), UsageError);
}
