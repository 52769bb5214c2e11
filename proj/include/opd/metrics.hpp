#ifndef OPD_METRICS_HPP_
#define OPD_METRICS_HPP_

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "opd/envsim.hpp"
#include "opd/netcore.hpp"

namespace opd {

// One row of a run's metrics CSV. Batch statistics that do not apply to
// a run (no teacher, no batch yet) are NaN and written as "nan".
struct MetricsRecord {
  std::string run_id;
  std::string stage;
  int iteration = 0;
  std::uint64_t env_steps_cumulative = 0;
  double success_rate = 0.0;
  double mean_entropy_all = 0.0;
  double mean_entropy_ood = std::numeric_limits<double>::quiet_NaN();
  double mean_reverse_kl = std::numeric_limits<double>::quiet_NaN();
  double mean_intrinsic_reward = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  std::uint64_t seed = 0;
};

// Exact column order of every metrics CSV.
const std::vector<std::string>& MetricsColumns();

std::string MetricsCsv(const std::vector<MetricsRecord>& records);
void WriteMetricsCsv(const std::filesystem::path& path,
                     const std::vector<MetricsRecord>& records);
// Throws IoError if the header or any row violates the schema.
std::vector<MetricsRecord> ParseMetricsCsv(const std::string& text);
std::vector<MetricsRecord> ReadMetricsCsv(const std::filesystem::path& path);

struct EntropyProfile {
  double mean = 0.0;
  std::vector<double> per_state;
};

// Throws UsageError on an empty state list.
EntropyProfile ComputeEntropyProfile(const PolicyNet& net,
                                     const std::vector<EnvState>& states);

enum class ForgettingMethod { kOfflineSft, kGrpo, kOpd };
std::string ToString(ForgettingMethod method);

struct ForgettingPoint {
  int checkpoint_iteration = 0;
  double seen_success = 0.0;
  double unseen_success = 0.0;
  ForgettingMethod method = ForgettingMethod::kOpd;
};

struct Checkpoint {
  int iteration = 0;
  PolicyNet net;
};

// Evaluates every checkpoint on both task splits, ordered by iteration.
// Throws ConfigError when the splits overlap.
std::vector<ForgettingPoint> ForgettingCurve(
    const std::vector<Checkpoint>& checkpoints, const std::vector<int>& seen,
    const std::vector<int>& unseen, const EnvSpec& spec, int episodes,
    std::uint64_t eval_seed, ForgettingMethod method);

struct EfficiencyRun {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> records;
};

struct EfficiencyRow {
  std::string method;
  // Median over seeds; unreached seeds count as +infinity.
  double env_steps_to_target = std::numeric_limits<double>::infinity();
  bool reached = false;
  std::vector<double> per_seed_steps;
};

// First env_steps_cumulative at which success >= target_fraction *
// teacher_rate, or +infinity.
double StepsToTarget(const std::vector<MetricsRecord>& records,
                     double target_fraction, double teacher_rate);

// One row per method, in first-appearance order.
std::vector<EfficiencyRow> EfficiencySummary(
    const std::vector<EfficiencyRun>& runs, double target_fraction,
    double teacher_rate);

double Median(std::vector<double> values);

// Long-format summary table (method, seed, metric, value).
struct SummaryRow {
  std::string method;
  std::string seed;
  std::string metric;
  double value = 0.0;
};
std::string SummaryCsv(const std::vector<SummaryRow>& rows);

// Writes SVG line charts for the given metrics CSVs into out_dir and
// returns the written paths (the manifest). Output bytes depend only on
// the CSV contents.
std::vector<std::filesystem::path> EmitPlots(
    const std::vector<std::filesystem::path>& csv_paths,
    const std::filesystem::path& out_dir);

// Seen-vs-unseen scatter of forgetting points.
std::filesystem::path EmitForgettingPlot(
    const std::vector<ForgettingPoint>& points,
    const std::filesystem::path& out_dir);

}  // namespace opd

#endif  // OPD_METRICS_HPP_
