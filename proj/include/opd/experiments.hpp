#ifndef OPD_EXPERIMENTS_HPP_
#define OPD_EXPERIMENTS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "opd/config.hpp"
#include "opd/metrics.hpp"

namespace opd {

struct RunArtifact {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> metrics;
  std::filesystem::path csv_path;
};

struct ExperimentResult {
  std::vector<RunArtifact> runs;
  // Also written to out_dir/summary.csv. Median rows use seed "median".
  std::vector<SummaryRow> summary;
  std::vector<std::filesystem::path> plots;
};

// Runs every seed sequentially and writes under config.out_dir:
//   config.resolved, summary.csv, seed_<s>/<method>.csv,
//   seed_<s>/<method>.policy, seed_<s>/teacher.txt (when trained here),
//   plots/...
// Errors propagate as ConfigError, TeacherQualityError, DivergenceError or
// IoError. Progress lines go to `log` when given.
ExperimentResult RunExperiment(const ExperimentConfig& config,
                               std::ostream* log = nullptr);

// Throws UsageError when the row is absent.
double SummaryValue(const std::vector<SummaryRow>& rows,
                    const std::string& method, const std::string& seed,
                    const std::string& metric);

// Per-seed values of one (method, metric), excluding median rows, in row
// order.
std::vector<double> SummaryValues(const std::vector<SummaryRow>& rows,
                                  const std::string& method,
                                  const std::string& metric);

}  // namespace opd

#endif  // OPD_EXPERIMENTS_HPP_
