#include "opd/experiments.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "opd/errors.hpp"
#include "opd/text_io.hpp"

namespace opd {
namespace {

namespace fs = std::filesystem;

// Required gap between probe and visited-state teacher entropy (nats).
constexpr double kMinOodEntropyGap = 0.5;

fs::path SeedDir(const ExperimentConfig& c, std::uint64_t seed) {
  return c.out_dir / ("seed_" + std::to_string(seed));
}

double FinalSuccess(const TrainResult& r) {
  return r.metrics.back().success_rate;
}

class Recorder {
 public:
  explicit Recorder(const ExperimentConfig& config) : config_(config) {}

  void Add(const std::string& method, std::uint64_t seed,
           const std::string& metric, double value) {
    result_.summary.push_back({method, std::to_string(seed), metric, value});
  }

  // NaN entries (undefined per-seed values) are left out of the median.
  void AddMedian(const std::string& method, const std::string& metric) {
    std::vector<double> values;
    for (double v : SummaryValues(result_.summary, method, metric)) {
      if (!std::isnan(v)) values.push_back(v);
    }
    result_.summary.push_back(
        {method, "median", metric, values.empty() ? std::nan("") : Median(values)});
  }

  void SaveRun(const std::string& method, std::uint64_t seed,
               const TrainResult& run) {
    const fs::path dir = SeedDir(config_, seed);
    const fs::path csv = dir / (method + ".csv");
    WriteMetricsCsv(csv, run.metrics);
    SavePolicy(dir / (method + ".policy"), run.net, SpecHash(config_.env),
               seed);
    result_.runs.push_back({method, seed, run.metrics, csv});
  }

  // One success and one entropy chart per seed.
  void PlotSeeds() {
    for (std::uint64_t seed : config_.seeds) {
      std::vector<fs::path> csvs;
      for (const RunArtifact& run : result_.runs) {
        if (run.seed == seed) csvs.push_back(run.csv_path);
      }
      const fs::path dir =
          config_.out_dir / "plots" / ("seed_" + std::to_string(seed));
      for (const fs::path& p : EmitPlots(csvs, dir)) {
        result_.plots.push_back(p);
      }
    }
  }

  void AddPlot(const fs::path& path) { result_.plots.push_back(path); }

  const std::vector<SummaryRow>& rows() const { return result_.summary; }

  ExperimentResult Finish() {
    WriteFile(config_.out_dir / "summary.csv", SummaryCsv(result_.summary));
    return std::move(result_);
  }

 private:
  const ExperimentConfig& config_;
  ExperimentResult result_;
};

RunOptions OptionsFor(const ExperimentConfig& c, const std::string& method,
                      std::uint64_t seed) {
  RunOptions o;
  o.run_id = method + "_s" + std::to_string(seed);
  o.eval_tasks = c.train.tasks;
  return o;
}

// Loads teacher_path when given, otherwise trains and saves a teacher for
// this seed. Either way the teacher must meet teacher.min_success.
TeacherPolicy AcquireTeacher(const ExperimentConfig& c, std::uint64_t seed) {
  if (!c.teacher_path) {
    TeacherPolicy t = TrainTeacher(c.env, TeacherOptionsForSeed(c, seed));
    SaveTeacher(SeedDir(c, seed) / "teacher.txt", t);
    return t;
  }
  TeacherPolicy t = LoadTeacher(*c.teacher_path, c.env);
  const double rate =
      TeacherSuccessRate(t, c.teacher.eval_episodes, c.teacher.seed);
  if (rate < c.teacher.min_success) {
    std::ostringstream os;
    os << "teacher '" << c.teacher_path->string() << "' greedy success "
       << rate << " < " << c.teacher.min_success;
    throw TeacherQualityError(os.str(), rate);
  }
  return t;
}

double TeacherRate(const ExperimentConfig& c, const TeacherPolicy& t,
                   std::uint64_t seed, const std::vector<int>& tasks) {
  return TeacherSuccessRate(t, c.teacher.eval_episodes, seed, tasks);
}

PolicyNet StudentInit(const ExperimentConfig& c, const TeacherPolicy& teacher,
                      std::uint64_t seed) {
  const TrainConfig tc = TrainConfigForSeed(c, seed);
  return SftInit(c.env, CollectDemos(teacher, tc.init_demos, seed, tc.tasks),
                 tc);
}

// Offline SFT datasets use their own demo stream, distinct from the init
// demos.
std::uint64_t DatasetSeed(std::uint64_t seed) {
  return Rng::Derive(seed, {StreamId(Stream::kDemo), 1}).NextU64();
}

double MeanTeacherEntropy(const TeacherPolicy& t,
                          const std::vector<EnvState>& states) {
  if (states.empty()) return std::nan("");
  double sum = 0.0;
  for (const EnvState& s : states) sum += Entropy(t.Label(s));
  return sum / static_cast<double>(states.size());
}

std::vector<EnvState> VisitedStates(const TeacherPolicy& t) {
  std::vector<EnvState> out;
  for (const EnvState& s : Environment(t.spec()).EnumerateStates()) {
    if (t.VisitCount(s) > 0) out.push_back(s);
  }
  return out;
}

void Log(std::ostream* log, const ExperimentConfig& c, std::uint64_t seed,
         const std::string& what) {
  if (log != nullptr) {
    *log << "[" << ToString(c.experiment) << "] seed " << seed << ": " << what
         << "\n";
  }
}

void RunTrainTeacher(const ExperimentConfig& c, Recorder& rec,
                     std::ostream* log) {
  for (std::uint64_t seed : c.seeds) {
    const TeacherPolicy t = AcquireTeacher(c, seed);
    rec.Add("teacher", seed, "success", TeacherRate(c, t, seed, {}));
    rec.Add("teacher", seed, "q_states",
            static_cast<double>(t.q_table().size()));
    Log(log, c, seed, "teacher ready");
  }
  rec.AddMedian("teacher", "success");
}

void RunSftInit(const ExperimentConfig& c, Recorder& rec, std::ostream* log) {
  for (std::uint64_t seed : c.seeds) {
    const TeacherPolicy t = AcquireTeacher(c, seed);
    const PolicyNet init = StudentInit(c, t, seed);
    SavePolicy(SeedDir(c, seed) / "init.policy", init, SpecHash(c.env), seed);
    rec.Add("teacher", seed, "success",
            TeacherRate(c, t, seed, c.train.tasks));
    rec.Add("init", seed, "success",
            Evaluate(init, c.env, c.train.eval_episodes, seed, c.train.tasks));
    Log(log, c, seed, "student init saved");
  }
  rec.AddMedian("init", "success");
}

void RunSingle(const ExperimentConfig& c, Recorder& rec, std::ostream* log) {
  for (std::uint64_t seed : c.seeds) {
    const TeacherPolicy t = AcquireTeacher(c, seed);
    const double teacher_rate = TeacherRate(c, t, seed, c.train.tasks);
    rec.Add("teacher", seed, "success", teacher_rate);
    const PolicyNet init = StudentInit(c, t, seed);
    const TrainConfig tc = TrainConfigForSeed(c, seed);
    std::string method;
    TrainResult run;
    switch (c.experiment) {
      case ExperimentKind::kDistill:
        method = ToString(tc.objective);
        run = TrainOpd(tc, c.env, t, init, OptionsFor(c, method, seed));
        break;
      case ExperimentKind::kGrpo: {
        method = "GRPO";
        RunOptions o = OptionsFor(c, method, seed);
        const TeacherPolicy labeler = t.WithTemperature(tc.teacher_temperature);
        o.metrics_teacher = &labeler;
        run = TrainGrpo(GrpoConfigForSeed(c, seed), c.env, init, o);
        if (run.late_epoch_tokens > 0) {
          rec.Add(method, seed, "late_epoch_in_band",
                  static_cast<double>(run.late_epoch_in_band) /
                      static_cast<double>(run.late_epoch_tokens));
        }
        break;
      }
      case ExperimentKind::kDistillGrpo:
        method = "DistillGRPO";
        run = TrainDistillThenGrpo(tc, GrpoConfigForSeed(c, seed), c.env, t,
                                   init, OptionsFor(c, method, seed));
        break;
      case ExperimentKind::kOfflineSft: {
        method = "OfflineSFT";
        const DemoDataset data = CollectDemos(t, c.sft_dataset_demos,
                                              DatasetSeed(seed), tc.tasks);
        TrainConfig sc = tc;
        sc.objective = Objective::kOfflineSft;
        run = OfflineSftTrain(sc, c.env, data, init,
                              OptionsFor(c, method, seed));
        break;
      }
      default:
        throw UsageError("not a single-run experiment");
    }
    rec.SaveRun(method, seed, run);
    rec.Add(method, seed, "final_success", FinalSuccess(run));
    rec.Add(method, seed, "steps_to_target",
            StepsToTarget(run.metrics, c.analysis.target_fraction,
                          teacher_rate));
    rec.Add(method, seed, "env_steps", static_cast<double>(run.env_steps));
    Log(log, c, seed, method + " final success " +
                          FormatFixed(FinalSuccess(run), 3));
  }
}

// Reverse-KL distillation, GRPO, and Distill then GRPO from one shared
// init. The distill-only run spans both stage budgets so that final success
// is compared at an equal iteration count.
void RunEfficiencyRace(const ExperimentConfig& c, Recorder& rec,
                       std::ostream* log) {
  for (std::uint64_t seed : c.seeds) {
    const TeacherPolicy t = AcquireTeacher(c, seed);
    const double teacher_rate = TeacherRate(c, t, seed, c.train.tasks);
    const PolicyNet init = StudentInit(c, t, seed);
    rec.Add("teacher", seed, "success", teacher_rate);
    rec.Add("init", seed, "success",
            Evaluate(init, c.env, c.train.eval_episodes, seed, c.train.tasks));

    TrainConfig distill = TrainConfigForSeed(c, seed);
    distill.objective = Objective::kReverseKl;
    const TrainConfig grpo = GrpoConfigForSeed(c, seed);
    TrainConfig distill_only = distill;
    distill_only.max_iterations += grpo.max_iterations;

    const TrainResult d =
        TrainOpd(distill_only, c.env, t, init, OptionsFor(c, "Distill", seed));
    RunOptions grpo_options = OptionsFor(c, "GRPO", seed);
    const TeacherPolicy labeler =
        t.WithTemperature(distill.teacher_temperature);
    grpo_options.metrics_teacher = &labeler;
    const TrainResult g = TrainGrpo(grpo, c.env, init, grpo_options);
    const TrainResult dg = TrainDistillThenGrpo(
        distill, grpo, c.env, t, init, OptionsFor(c, "DistillGRPO", seed));

    const std::pair<std::string, const TrainResult*> arms[] = {
        {"Distill", &d}, {"GRPO", &g}, {"DistillGRPO", &dg}};
    for (const auto& [method, run] : arms) {
      rec.SaveRun(method, seed, *run);
      rec.Add(method, seed, "final_success", FinalSuccess(*run));
      rec.Add(method, seed, "steps_to_target",
              StepsToTarget(run->metrics, c.analysis.target_fraction,
                            teacher_rate));
      rec.Add(method, seed, "env_steps", static_cast<double>(run->env_steps));
    }
    if (g.late_epoch_tokens > 0) {
      rec.Add("GRPO", seed, "late_epoch_in_band",
              static_cast<double>(g.late_epoch_in_band) /
                  static_cast<double>(g.late_epoch_tokens));
    }
    Log(log, c, seed, "race done");
  }
  for (const char* m : {"Distill", "GRPO", "DistillGRPO"}) {
    rec.AddMedian(m, "final_success");
    rec.AddMedian(m, "steps_to_target");
  }
  rec.AddMedian("teacher", "success");
  rec.AddMedian("init", "success");
}

std::vector<int> AllTasks(const EnvSpec& spec) {
  std::vector<int> out(static_cast<std::size_t>(spec.num_tasks));
  for (int i = 0; i < spec.num_tasks; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

// A generalist cloned from demos of every task is fine-tuned on the seen
// tasks only; unseen-task success is tracked at every checkpoint.
void RunForgetting(const ExperimentConfig& c, Recorder& rec,
                   std::ostream* log) {
  const std::vector<int>& seen = c.forgetting.seen;
  const std::vector<int>& unseen = c.forgetting.unseen;
  std::vector<ForgettingPoint> all_points;
  std::string points_csv =
      "method,seed,iteration,seen_success,unseen_success\n";
  for (std::uint64_t seed : c.seeds) {
    const TeacherPolicy t = AcquireTeacher(c, seed);
    rec.Add("teacher", seed, "success", TeacherRate(c, t, seed, {}));

    TrainConfig base = TrainConfigForSeed(c, seed);
    base.tasks = seen;
    TrainConfig gen_config = base;
    gen_config.sft_epochs = c.forgetting.generalist_epochs;
    const PolicyNet generalist = SftInit(
        c.env,
        CollectDemos(t, c.forgetting.generalist_demos, seed, AllTasks(c.env)),
        gen_config);
    SavePolicy(SeedDir(c, seed) / "generalist.policy", generalist,
               SpecHash(c.env), seed);

    std::vector<std::pair<ForgettingMethod, TrainResult>> runs;
    {
      const std::string m = ToString(ForgettingMethod::kOpd);
      RunOptions o = OptionsFor(c, m, seed);
      o.eval_tasks = seen;
      TrainConfig opd = base;
      opd.objective = Objective::kReverseKl;
      runs.emplace_back(ForgettingMethod::kOpd,
                        TrainOpd(opd, c.env, t, generalist, o));
    }
    {
      const std::string m = ToString(ForgettingMethod::kGrpo);
      RunOptions o = OptionsFor(c, m, seed);
      o.eval_tasks = seen;
      TrainConfig grpo = GrpoConfigForSeed(c, seed);
      grpo.tasks = seen;
      runs.emplace_back(ForgettingMethod::kGrpo,
                        TrainGrpo(grpo, c.env, generalist, o));
    }
    {
      const std::string m = ToString(ForgettingMethod::kOfflineSft);
      RunOptions o = OptionsFor(c, m, seed);
      o.eval_tasks = seen;
      TrainConfig sft = base;
      sft.objective = Objective::kOfflineSft;
      const DemoDataset data =
          CollectDemos(t, c.sft_dataset_demos, DatasetSeed(seed), seen);
      runs.emplace_back(ForgettingMethod::kOfflineSft,
                        OfflineSftTrain(sft, c.env, data, generalist, o));
    }

    for (const auto& [kind, run] : runs) {
      const std::string m = ToString(kind);
      rec.SaveRun(m, seed, run);
      const std::vector<ForgettingPoint> points =
          ForgettingCurve(run.checkpoints, seen, unseen, c.env,
                          c.train.eval_episodes, seed, kind);
      const ForgettingPoint& first = points.front();
      const ForgettingPoint& last = points.back();
      rec.Add(m, seed, "initial_seen", first.seen_success);
      rec.Add(m, seed, "initial_unseen", first.unseen_success);
      rec.Add(m, seed, "final_seen", last.seen_success);
      rec.Add(m, seed, "final_unseen", last.unseen_success);
      rec.Add(m, seed, "retention",
              first.unseen_success > 0.0
                  ? last.unseen_success / first.unseen_success
                  : std::nan(""));
      for (const ForgettingPoint& p : points) {
        points_csv += m + "," + std::to_string(seed) + "," +
                      std::to_string(p.checkpoint_iteration) + "," +
                      FormatFixed(p.seen_success, 6) + "," +
                      FormatFixed(p.unseen_success, 6) + "\n";
        all_points.push_back(p);
      }
      Log(log, c, seed, m + " retention " +
                            FormatFixed(SummaryValue(rec.rows(), m,
                                                     std::to_string(seed),
                                                     "retention"),
                                        3));
    }
  }
  for (ForgettingMethod kind : {ForgettingMethod::kOpd, ForgettingMethod::kGrpo,
                                ForgettingMethod::kOfflineSft}) {
    for (const char* metric : {"retention", "final_seen", "final_unseen"}) {
      rec.AddMedian(ToString(kind), metric);
    }
  }
  WriteFile(c.out_dir / "forgetting_points.csv", points_csv);
  rec.AddPlot(EmitForgettingPlot(all_points, c.out_dir / "plots"));
}

// ReverseKL, ForwardKL and HardCE from one shared init, with student
// entropy tracked on states where the teacher itself is near-uniform.
void RunEntropyAblation(const ExperimentConfig& c, Recorder& rec,
                        std::ostream* log) {
  for (std::uint64_t seed : c.seeds) {
    const TeacherPolicy t = AcquireTeacher(c, seed);
    const TrainConfig tc = TrainConfigForSeed(c, seed);
    const TeacherPolicy labeler = t.WithTemperature(tc.teacher_temperature);
    const double threshold =
        c.analysis.probe_threshold * std::log(c.env.action_vocab_size);
    const std::vector<EnvState> probes =
        OodProbeStates(c.env, labeler, threshold, tc.tasks);
    if (probes.empty()) {
      throw ConfigError("no OOD probe states above analysis.probe_threshold");
    }
    const double ood_entropy = MeanTeacherEntropy(labeler, probes);
    const double visited_entropy =
        MeanTeacherEntropy(labeler, VisitedStates(labeler));
    if (!(ood_entropy - visited_entropy >= kMinOodEntropyGap)) {
      std::ostringstream os;
      os << "teacher entropy on OOD probes (" << ood_entropy
         << ") is within " << kMinOodEntropyGap
         << " nats of visited states (" << visited_entropy << ")";
      throw ConfigError(os.str());
    }
    rec.Add("teacher", seed, "success", TeacherRate(c, t, seed, tc.tasks));
    rec.Add("teacher", seed, "ood_entropy", ood_entropy);
    rec.Add("teacher", seed, "visited_entropy", visited_entropy);
    rec.Add("teacher", seed, "probe_states",
            static_cast<double>(probes.size()));

    const PolicyNet init = StudentInit(c, t, seed);
    for (Objective obj :
         {Objective::kReverseKl, Objective::kForwardKl, Objective::kHardCe}) {
      TrainConfig run_config = tc;
      run_config.objective = obj;
      const std::string m = ToString(obj);
      RunOptions o = OptionsFor(c, m, seed);
      o.ood_probes = probes;
      const TrainResult run = TrainOpd(run_config, c.env, t, init, o);
      rec.SaveRun(m, seed, run);
      rec.Add(m, seed, "final_success", FinalSuccess(run));
      rec.Add(m, seed, "final_entropy_ood", run.metrics.back().mean_entropy_ood);
      rec.Add(m, seed, "final_entropy_all", run.metrics.back().mean_entropy_all);
    }
    Log(log, c, seed, "ablation done");
  }
  rec.AddMedian("teacher", "ood_entropy");
  for (const char* m : {"ReverseKL", "ForwardKL", "HardCE"}) {
    rec.AddMedian(m, "final_success");
    rec.AddMedian(m, "final_entropy_ood");
  }
}

// ReverseKL distillation at each group size from one shared init.
void RunGroupSizeAblation(const ExperimentConfig& c, Recorder& rec,
                          std::ostream* log) {
  for (std::uint64_t seed : c.seeds) {
    const TeacherPolicy t = AcquireTeacher(c, seed);
    const double teacher_rate = TeacherRate(c, t, seed, c.train.tasks);
    rec.Add("teacher", seed, "success", teacher_rate);
    const PolicyNet init = StudentInit(c, t, seed);
    for (int g : c.analysis.group_sizes) {
      TrainConfig tc = TrainConfigForSeed(c, seed);
      tc.objective = Objective::kReverseKl;
      tc.group_size = g;
      const std::string m = "G" + std::to_string(g);
      const TrainResult run =
          TrainOpd(tc, c.env, t, init, OptionsFor(c, m, seed));
      rec.SaveRun(m, seed, run);
      rec.Add(m, seed, "final_success", FinalSuccess(run));
      rec.Add(m, seed, "steps_to_target",
              StepsToTarget(run.metrics, c.analysis.target_fraction,
                            teacher_rate));
    }
    Log(log, c, seed, "group sizes done");
  }
  for (int g : c.analysis.group_sizes) {
    rec.AddMedian("G" + std::to_string(g), "final_success");
  }
}

}  // namespace

ExperimentResult RunExperiment(const ExperimentConfig& config,
                               std::ostream* log) {
  ValidateExperimentConfig(config);
  WriteFile(config.out_dir / "config.resolved", ResolvedConfigText(config));
  Recorder rec(config);
  switch (config.experiment) {
    case ExperimentKind::kTrainTeacher:
      RunTrainTeacher(config, rec, log);
      break;
    case ExperimentKind::kSftInit:
      RunSftInit(config, rec, log);
      break;
    case ExperimentKind::kDistill:
    case ExperimentKind::kGrpo:
    case ExperimentKind::kDistillGrpo:
    case ExperimentKind::kOfflineSft:
      RunSingle(config, rec, log);
      break;
    case ExperimentKind::kEfficiencyRace:
      RunEfficiencyRace(config, rec, log);
      break;
    case ExperimentKind::kForgetting:
      RunForgetting(config, rec, log);
      break;
    case ExperimentKind::kEntropyAblation:
      RunEntropyAblation(config, rec, log);
      break;
    case ExperimentKind::kGroupSizeAblation:
      RunGroupSizeAblation(config, rec, log);
      break;
  }
  rec.PlotSeeds();
  return rec.Finish();
}

double SummaryValue(const std::vector<SummaryRow>& rows,
                    const std::string& method, const std::string& seed,
                    const std::string& metric) {
  for (const SummaryRow& r : rows) {
    if (r.method == method && r.seed == seed && r.metric == metric) {
      return r.value;
    }
  }
  throw UsageError("no summary row " + method + "/" + seed + "/" + metric);
}

std::vector<double> SummaryValues(const std::vector<SummaryRow>& rows,
                                  const std::string& method,
                                  const std::string& metric) {
  std::vector<double> out;
  for (const SummaryRow& r : rows) {
    if (r.method == method && r.metric == metric && r.seed != "median") {
      out.push_back(r.value);
    }
  }
  return out;
}

}  // namespace opd
