#include "opd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "opd/errors.hpp"
#include "opd/text_io.hpp"
#include "opd/trainer.hpp"

namespace opd {

const std::vector<std::string>& MetricsColumns() {
  static const std::vector<std::string> kColumns = {
      "run_id",          "stage",
      "iteration",       "env_steps_cumulative",
      "success_rate",    "mean_entropy_all",
      "mean_entropy_ood", "mean_reverse_kl",
      "mean_intrinsic_reward", "grad_norm",
      "seed"};
  return kColumns;
}

namespace {

std::string JoinColumns(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) out += ',';
    out += cells[i];
  }
  return out;
}

void CheckIdentifier(const std::string& value, const char* field) {
  if (value.find_first_of(",\n\r") != std::string::npos) {
    throw IoError(std::string("metrics ") + field +
                  " may not contain commas or newlines");
  }
}

}  // namespace

std::string MetricsCsv(const std::vector<MetricsRecord>& records) {
  std::string out = JoinColumns(MetricsColumns()) + "\n";
  for (const MetricsRecord& r : records) {
    CheckIdentifier(r.run_id, "run_id");
    CheckIdentifier(r.stage, "stage");
    out += JoinColumns({r.run_id, r.stage, std::to_string(r.iteration),
                        std::to_string(r.env_steps_cumulative),
                        FormatFixed(r.success_rate, 6),
                        FormatFixed(r.mean_entropy_all, 6),
                        FormatFixed(r.mean_entropy_ood, 6),
                        FormatFixed(r.mean_reverse_kl, 6),
                        FormatFixed(r.mean_intrinsic_reward, 6),
                        FormatFixed(r.grad_norm, 6), std::to_string(r.seed)});
    out += '\n';
  }
  return out;
}

void WriteMetricsCsv(const std::filesystem::path& path,
                     const std::vector<MetricsRecord>& records) {
  WriteFile(path, MetricsCsv(records));
}

std::vector<MetricsRecord> ParseMetricsCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || Trim(line) != JoinColumns(MetricsColumns())) {
    throw IoError("metrics CSV header does not match the schema");
  }
  std::vector<MetricsRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    const std::vector<std::string> cells = Split(Trim(line), ',');
    if (cells.size() != MetricsColumns().size()) {
      throw IoError("metrics CSV line " + std::to_string(line_no) + " has " +
                    std::to_string(cells.size()) + " cells");
    }
    try {
      MetricsRecord r;
      r.run_id = cells[0];
      r.stage = cells[1];
      r.iteration = static_cast<int>(ParseInt(cells[2], "iteration"));
      const long long steps = ParseInt(cells[3], "env_steps_cumulative");
      if (steps < 0) throw ConfigError("env_steps_cumulative is negative");
      r.env_steps_cumulative = static_cast<std::uint64_t>(steps);
      r.success_rate = ParseDouble(cells[4], "success_rate");
      r.mean_entropy_all = ParseDouble(cells[5], "mean_entropy_all");
      r.mean_entropy_ood = ParseDouble(cells[6], "mean_entropy_ood");
      r.mean_reverse_kl = ParseDouble(cells[7], "mean_reverse_kl");
      r.mean_intrinsic_reward = ParseDouble(cells[8], "mean_intrinsic_reward");
      r.grad_norm = ParseDouble(cells[9], "grad_norm");
      const long long seed = ParseInt(cells[10], "seed");
      if (seed < 0) throw ConfigError("seed is negative");
      r.seed = static_cast<std::uint64_t>(seed);
      if (!(r.success_rate >= 0.0 && r.success_rate <= 1.0)) {
        throw ConfigError("success_rate outside [0, 1]");
      }
      records.push_back(std::move(r));
    } catch (const ConfigError& e) {
      throw IoError("metrics CSV line " + std::to_string(line_no) + ": " +
                    e.what());
    }
  }
  return records;
}

std::vector<MetricsRecord> ReadMetricsCsv(const std::filesystem::path& path) {
  return ParseMetricsCsv(ReadFile(path));
}

EntropyProfile ComputeEntropyProfile(const PolicyNet& net,
                                     const std::vector<EnvState>& states) {
  if (states.empty()) throw UsageError("entropy profile of no states");
  EntropyProfile profile;
  profile.per_state.reserve(states.size());
  double sum = 0.0;
  for (const EnvState& s : states) {
    const double h = Entropy(Forward(net, s));
    profile.per_state.push_back(h);
    sum += h;
  }
  profile.mean = sum / static_cast<double>(states.size());
  return profile;
}

std::string ToString(ForgettingMethod method) {
  switch (method) {
    case ForgettingMethod::kOfflineSft: return "OfflineSFT";
    case ForgettingMethod::kGrpo: return "GRPO";
    case ForgettingMethod::kOpd: return "OPD";
  }
  return "?";
}

std::vector<ForgettingPoint> ForgettingCurve(
    const std::vector<Checkpoint>& checkpoints, const std::vector<int>& seen,
    const std::vector<int>& unseen, const EnvSpec& spec, int episodes,
    std::uint64_t eval_seed, ForgettingMethod method) {
  const std::set<int> seen_set(seen.begin(), seen.end());
  for (int t : unseen) {
    if (seen_set.count(t)) {
      throw ConfigError("forgetting splits overlap on task " +
                        std::to_string(t));
    }
  }
  std::vector<const Checkpoint*> ordered;
  for (const Checkpoint& c : checkpoints) ordered.push_back(&c);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Checkpoint* a, const Checkpoint* b) {
                     return a->iteration < b->iteration;
                   });
  std::vector<ForgettingPoint> points;
  for (const Checkpoint* c : ordered) {
    ForgettingPoint p;
    p.checkpoint_iteration = c->iteration;
    p.seen_success = Evaluate(c->net, spec, episodes, eval_seed, seen);
    p.unseen_success = Evaluate(c->net, spec, episodes, eval_seed, unseen);
    p.method = method;
    points.push_back(p);
  }
  return points;
}

double StepsToTarget(const std::vector<MetricsRecord>& records,
                     double target_fraction, double teacher_rate) {
  const double target = target_fraction * teacher_rate;
  for (const MetricsRecord& r : records) {
    if (r.success_rate >= target) {
      return static_cast<double>(r.env_steps_cumulative);
    }
  }
  return std::numeric_limits<double>::infinity();
}

double Median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  const double lo = values[n / 2 - 1];
  const double hi = values[n / 2];
  if (std::isinf(lo) || std::isinf(hi)) return hi;
  return 0.5 * (lo + hi);
}

std::vector<EfficiencyRow> EfficiencySummary(
    const std::vector<EfficiencyRun>& runs, double target_fraction,
    double teacher_rate) {
  std::vector<EfficiencyRow> rows;
  for (const EfficiencyRun& run : runs) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const EfficiencyRow& r) {
      return r.method == run.method;
    });
    if (it == rows.end()) {
      EfficiencyRow row;
      row.method = run.method;
      rows.push_back(std::move(row));
      it = rows.end() - 1;
    }
    it->per_seed_steps.push_back(
        StepsToTarget(run.records, target_fraction, teacher_rate));
  }
  for (EfficiencyRow& row : rows) {
    row.env_steps_to_target = Median(row.per_seed_steps);
    row.reached = std::isfinite(row.env_steps_to_target);
  }
  return rows;
}

std::string SummaryCsv(const std::vector<SummaryRow>& rows) {
  std::string out = "method,seed,metric,value\n";
  for (const SummaryRow& r : rows) {
    out += r.method + "," + r.seed + "," + r.metric + "," +
           FormatFixed(r.value, 6) + "\n";
  }
  return out;
}

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string Num(double v) { return FormatFixed(v, 2); }

std::string EscapeXml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Minimal SVG chart. Lines when `connect`, dots otherwise.
std::string RenderChart(const std::string& title, const std::string& x_label,
                        const std::string& y_label,
                        const std::vector<Series>& series, bool connect) {
  constexpr double kW = 640, kH = 400, kL = 70, kR = 160, kT = 40, kB = 50;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const Series& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (first) {
        x_min = x_max = x;
        y_min = y_max = y;
        first = false;
      }
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  y_min = std::min(y_min, 0.0);
  if (x_max <= x_min) x_max = x_min + 1;
  if (y_max <= y_min) y_max = y_min + 1;
  const double pw = kW - kL - kR;
  const double ph = kH - kT - kB;
  auto px = [&](double x) { return kL + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return kT + ph - (y - y_min) / (y_max - y_min) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + Num(kW) +
         "\" height=\"" + Num(kH) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + Num(kL) + "\" y=\"24\" font-size=\"14\">" +
         EscapeXml(title) + "</text>\n";
  svg += "<rect x=\"" + Num(kL) + "\" y=\"" + Num(kT) + "\" width=\"" +
         Num(pw) + "\" height=\"" + Num(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x_min + (x_max - x_min) * i / 4.0;
    const double fy = y_min + (y_max - y_min) * i / 4.0;
    svg += "<text x=\"" + Num(px(fx)) + "\" y=\"" + Num(kT + ph + 16) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + FormatFixed(fx, 0) +
           "</text>\n";
    svg += "<text x=\"" + Num(kL - 6) + "\" y=\"" + Num(py(fy) + 3) +
           "\" font-size=\"10\" text-anchor=\"end\">" + FormatFixed(fy, 2) +
           "</text>\n";
  }
  svg += "<text x=\"" + Num(kL + pw / 2) + "\" y=\"" + Num(kH - 10) +
         "\" font-size=\"12\" text-anchor=\"middle\">" + EscapeXml(x_label) +
         "</text>\n";
  svg += "<text x=\"14\" y=\"" + Num(kT + ph / 2) +
         "\" font-size=\"12\" transform=\"rotate(-90 14 " + Num(kT + ph / 2) +
         ")\" text-anchor=\"middle\">" + EscapeXml(y_label) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    const Series& s = series[i];
    svg += "<g class=\"series\">\n";
    if (connect) {
      std::string pts;
      for (const auto& [x, y] : s.points) {
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        if (!pts.empty()) pts += ' ';
        pts += Num(px(x)) + "," + Num(py(y));
      }
      svg += "<polyline fill=\"none\" stroke=\"" +
             std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
             "\"/>\n";
    } else {
      for (const auto& [x, y] : s.points) {
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        svg += "<circle cx=\"" + Num(px(x)) + "\" cy=\"" +
               Num(py(y)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
      }
    }
    svg += "</g>\n";
    const double ly = kT + 14 + 16 * static_cast<double>(i);
    svg += "<rect x=\"" + Num(kW - kR + 10) + "\" y=\"" + Num(ly - 8) +
           "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    svg += "<text x=\"" + Num(kW - kR + 24) + "\" y=\"" + Num(ly) +
           "\" font-size=\"10\">" + EscapeXml(s.label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

std::vector<std::filesystem::path> EmitPlots(
    const std::vector<std::filesystem::path>& csv_paths,
    const std::filesystem::path& out_dir) {
  if (csv_paths.empty()) return {};
  std::vector<Series> success;
  std::vector<Series> entropy;
  for (const auto& path : csv_paths) {
    const std::vector<MetricsRecord> records = ReadMetricsCsv(path);
    const std::string label = path.stem().string();
    Series s{label, {}};
    Series e{label, {}};
    for (const MetricsRecord& r : records) {
      s.points.emplace_back(static_cast<double>(r.env_steps_cumulative),
                            r.success_rate);
      const double h =
          std::isnan(r.mean_entropy_ood) ? r.mean_entropy_all : r.mean_entropy_ood;
      e.points.emplace_back(r.iteration, h);
    }
    success.push_back(std::move(s));
    entropy.push_back(std::move(e));
  }
  const std::filesystem::path success_path = out_dir / "success_vs_env_steps.svg";
  const std::filesystem::path entropy_path = out_dir / "entropy_vs_iteration.svg";
  WriteFile(success_path, RenderChart("Success rate", "environment steps",
                                      "success", success, true));
  WriteFile(entropy_path, RenderChart("Policy entropy", "iteration",
                                      "entropy (nats)", entropy, true));
  return {success_path, entropy_path};
}

std::filesystem::path EmitForgettingPlot(
    const std::vector<ForgettingPoint>& points,
    const std::filesystem::path& out_dir) {
  std::vector<Series> series;
  for (const ForgettingPoint& p : points) {
    const std::string label = ToString(p.method);
    auto it = std::find_if(series.begin(), series.end(),
                           [&](const Series& s) { return s.label == label; });
    if (it == series.end()) {
      series.push_back({label, {}});
      it = series.end() - 1;
    }
    it->points.emplace_back(p.seen_success, p.unseen_success);
  }
  const std::filesystem::path path = out_dir / "seen_vs_unseen.svg";
  WriteFile(path, RenderChart("Seen vs unseen success", "seen-task success",
                              "unseen-task success", series, false));
  return path;
}

}  // namespace opd
