#ifndef OPD_OBJECTIVES_HPP_
#define OPD_OBJECTIVES_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "opd/envsim.hpp"
#include "opd/netcore.hpp"

namespace opd {

struct TokenRecord {
  EnvState state;
  ActionToken action;
  double student_logprob = 0.0;
  std::optional<double> teacher_logprob;
  // -(student_logprob - teacher_logprob), used only as a scalar coefficient.
  std::optional<double> intrinsic_reward;
  // Behavior-policy log-prob for importance ratios.
  std::optional<double> old_logprob;
};

struct Trajectory {
  std::vector<TokenRecord> records;
  EnvState final_state;
  double outcome = 0.0;
};

// 1.0 iff the final state succeeded. Throws UsageError for an empty or
// unfinished trajectory.
double OutcomeReward(const Trajectory& trajectory);

// G trajectories launched from the same initial state.
struct GroupRollout {
  std::uint64_t prompt_seed = 0;
  std::vector<Trajectory> trajectories;

  int group_size() const { return static_cast<int>(trajectories.size()); }
};

struct DemoPair {
  EnvState state;
  ActionToken action;
};

struct DemoDataset {
  std::vector<std::vector<DemoPair>> demos;  // one entry per trajectory
  std::map<int, int> per_task_count;

  std::vector<DemoPair> Flatten() const;
  bool empty() const { return demos.empty(); }
};

struct LossAndGrad {
  double loss = 0.0;
  GradBuffer grad;  // gradient of `loss` (negate for ascent)
};

// Mean negative log-likelihood of the demonstrated actions.
LossAndGrad SftLoss(const PolicyNet& net, std::span<const DemoPair> batch);

// Per-token intrinsic reward -(log pi_student - log pi_teacher).
double ReverseKlReward(double student_logprob, double teacher_logprob);

// (1/G) sum_i sum_t grad log pi(a_t,i | s_t,i) * r_t,i with the cached
// intrinsic reward as a constant coefficient. Ascent direction of
// -KL(pi_theta || pi_teacher). Accumulation count is 1.
GradBuffer OpdGroupGradient(const GroupRollout& group, const PolicyNet& net);

// Cross-entropy -sum_a q(a) log pi(a|s) over the full vocabulary.
LossAndGrad ForwardKlLoss(const PolicyNet& net, const EnvState& state,
                          const CategoricalDist& teacher_dist);

// Monte-Carlo variant: mean of -log pi(a|s) over `samples` teacher draws.
LossAndGrad ForwardKlSampledLoss(const PolicyNet& net, const EnvState& state,
                                 const CategoricalDist& teacher_dist, Rng& rng,
                                 int samples);

// -log pi(a*|s) with a* the teacher argmax (lowest index on ties).
LossAndGrad HardCeLoss(const PolicyNet& net, const EnvState& state,
                       const CategoricalDist& teacher_dist);

// (R_i - mean) / (population std + 1e-6). Throws UsageError for G < 2.
std::vector<double> GrpoAdvantages(std::span<const double> outcomes);

struct GrpoSurrogateResult {
  double surrogate = 0.0;  // mean over tokens of the clipped objective
  GradBuffer grad;         // ascent direction, accumulation count 1
  int tokens = 0;
  int ratio_in_band = 0;   // tokens with ratio inside [1-eps, 1+eps]
};

// Token-level clipped surrogate of the group. Needs old_logprob on every
// record; clip_eps in (0, 1).
GrpoSurrogateResult GrpoSurrogate(const GroupRollout& group,
                                  const PolicyNet& net, double clip_eps);

}  // namespace opd

#endif  // OPD_OBJECTIVES_HPP_
