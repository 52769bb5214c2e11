#ifndef OPD_TEACHER_HPP_
#define OPD_TEACHER_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "opd/envsim.hpp"
#include "opd/netcore.hpp"

namespace opd {

struct TeacherTrainOptions {
  int episodes = 20000;
  std::uint64_t seed = 0;
  double epsilon = 0.1;
  double learning_rate = 0.5;
  // Discount of the teacher's own Q-learning. Distillation never discounts.
  double discount = 0.9;
  double goal_reward = 10.0;
  double temperature = 0.5;
  // Weight of the uniform mixture in every label; bounds log-probs below by
  // log(label_floor / K).
  double label_floor = 0.05;
  int eval_episodes = 500;
  double min_success = 0.95;
};

// Frozen tabular expert: (1 - floor) * softmax(Q(s, .) / temperature) +
// floor / K. States absent from
// the table behave as an all-zero Q-row, i.e. a uniform label. There is no
// mutating member function, so labeling can never change the table.
class TeacherPolicy {
 public:
  using QTable = std::map<std::int64_t, std::vector<double>>;
  using VisitTable = std::map<std::int64_t, std::uint64_t>;

  TeacherPolicy(EnvSpec spec, QTable q_table, VisitTable visit_counts,
                double temperature, double label_floor);

  const EnvSpec& spec() const { return spec_; }
  double temperature() const { return temperature_; }
  double label_floor() const { return label_floor_; }
  bool frozen() const { return true; }
  const QTable& q_table() const { return q_table_; }
  const VisitTable& visit_counts() const { return visit_counts_; }

  // Q-row for a state (zeros when unvisited).
  std::vector<double> QRow(const EnvState& state) const;
  std::uint64_t VisitCount(const EnvState& state) const;

  CategoricalDist Label(const EnvState& state) const;
  double LogProb(const EnvState& state, ActionToken action) const;
  ActionToken GreedyAction(const EnvState& state) const;

  // Same table, different softmax temperature.
  TeacherPolicy WithTemperature(double temperature) const;

  // Fingerprint of the Q-table, temperature and floor.
  std::uint64_t Hash() const;

 private:
  EnvSpec spec_;
  Environment env_;
  QTable q_table_;
  VisitTable visit_counts_;
  double temperature_;
  double label_floor_;
};

// Epsilon-greedy tabular Q-learning from the environment's start-state
// distribution. Throws ConfigError for episodes <= 0 and TeacherQualityError
// when the greedy policy succeeds on fewer than options.min_success of
// options.eval_episodes rollouts.
TeacherPolicy TrainTeacher(const EnvSpec& spec,
                           const TeacherTrainOptions& options);

// Greedy-teacher success over `episodes` rollouts. `tasks` restricts the
// task draw (empty means every task).
double TeacherSuccessRate(const TeacherPolicy& teacher, int episodes,
                          std::uint64_t seed,
                          const std::vector<int>& tasks = {});

// Free-function forms of the labeling operations.
inline CategoricalDist TeacherLabel(const TeacherPolicy& teacher,
                                    const EnvState& state) {
  return teacher.Label(state);
}
inline double TeacherLogProb(const TeacherPolicy& teacher,
                             const EnvState& state, ActionToken action) {
  return teacher.LogProb(state, action);
}

// Enumerates the state space and keeps states whose teacher entropy exceeds
// `threshold` (nats). `tasks` restricts the enumeration (empty = all).
std::vector<EnvState> OodProbeStates(const EnvSpec& spec,
                                     const TeacherPolicy& teacher,
                                     double threshold,
                                     const std::vector<int>& tasks = {});

void SaveTeacher(const std::filesystem::path& path,
                 const TeacherPolicy& teacher);
// Throws ConfigError when the file was produced for a different spec.
TeacherPolicy LoadTeacher(const std::filesystem::path& path,
                          const EnvSpec& expected_spec);

}  // namespace opd

#endif  // OPD_TEACHER_HPP_
