#include "opd/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "opd/errors.hpp"

namespace opd {

double OutcomeReward(const Trajectory& trajectory) {
  if (trajectory.records.empty()) {
    throw UsageError("outcome of an empty trajectory");
  }
  if (!trajectory.final_state.terminal) {
    throw UsageError("outcome of an unfinished trajectory");
  }
  return trajectory.final_state.succeeded ? 1.0 : 0.0;
}

std::vector<DemoPair> DemoDataset::Flatten() const {
  std::vector<DemoPair> out;
  for (const auto& demo : demos) out.insert(out.end(), demo.begin(), demo.end());
  return out;
}

LossAndGrad SftLoss(const PolicyNet& net, std::span<const DemoPair> batch) {
  if (batch.empty()) throw UsageError("sft_loss on an empty batch");
  LossAndGrad out{0.0, GradBuffer(net)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> dlogits(net.num_actions());
  for (const DemoPair& pair : batch) {
    const ForwardCache cache = ForwardWithCache(net, pair.state.features);
    out.loss -= cache.dist.log_probs[pair.action.index] * inv_n;
    for (int a = 0; a < net.num_actions(); ++a) {
      dlogits[a] = cache.dist.probs[a] - (a == pair.action.index ? 1.0 : 0.0);
    }
    Backprop(net, pair.state.features, cache, dlogits, inv_n, out.grad);
  }
  out.grad.set_accumulation_count(1);
  return out;
}

double ReverseKlReward(double student_logprob, double teacher_logprob) {
  if (!std::isfinite(student_logprob) || !std::isfinite(teacher_logprob)) {
    throw UsageError("reverse-KL reward of a non-finite log-probability");
  }
  if (student_logprob > 0.0 || teacher_logprob > 0.0) {
    throw UsageError("log-probabilities must be <= 0");
  }
  return -(student_logprob - teacher_logprob);
}

GradBuffer OpdGroupGradient(const GroupRollout& group, const PolicyNet& net) {
  if (group.trajectories.empty()) throw UsageError("empty group");
  GradBuffer grad(net);
  const double inv_g = 1.0 / group.group_size();
  std::vector<double> dlogits(net.num_actions());
  for (const Trajectory& tau : group.trajectories) {
    for (const TokenRecord& rec : tau.records) {
      if (!rec.intrinsic_reward) {
        throw UsageError("record without intrinsic reward; label first");
      }
      const double r = *rec.intrinsic_reward;
      if (r == 0.0) continue;
      const ForwardCache cache = ForwardWithCache(net, rec.state.features);
      for (int a = 0; a < net.num_actions(); ++a) {
        dlogits[a] = (a == rec.action.index ? 1.0 : 0.0) - cache.dist.probs[a];
      }
      Backprop(net, rec.state.features, cache, dlogits, r * inv_g, grad);
    }
  }
  grad.set_accumulation_count(1);
  return grad;
}

LossAndGrad ForwardKlLoss(const PolicyNet& net, const EnvState& state,
                          const CategoricalDist& teacher_dist) {
  if (teacher_dist.size() != net.num_actions()) {
    throw UsageError("teacher vocabulary does not match the policy");
  }
  const ForwardCache cache = ForwardWithCache(net, state.features);
  LossAndGrad out{0.0, GradBuffer(net)};
  std::vector<double> dlogits(net.num_actions());
  for (int a = 0; a < net.num_actions(); ++a) {
    out.loss -= teacher_dist.probs[a] * cache.dist.log_probs[a];
    dlogits[a] = cache.dist.probs[a] - teacher_dist.probs[a];
  }
  Backprop(net, state.features, cache, dlogits, 1.0, out.grad);
  out.grad.set_accumulation_count(1);
  return out;
}

LossAndGrad ForwardKlSampledLoss(const PolicyNet& net, const EnvState& state,
                                 const CategoricalDist& teacher_dist, Rng& rng,
                                 int samples) {
  if (samples < 1) throw UsageError("sampled forward KL needs samples >= 1");
  if (teacher_dist.size() != net.num_actions()) {
    throw UsageError("teacher vocabulary does not match the policy");
  }
  const ForwardCache cache = ForwardWithCache(net, state.features);
  std::vector<double> target(net.num_actions(), 0.0);
  for (int i = 0; i < samples; ++i) {
    target[SampleAction(teacher_dist, rng).index] += 1.0 / samples;
  }
  LossAndGrad out{0.0, GradBuffer(net)};
  std::vector<double> dlogits(net.num_actions());
  for (int a = 0; a < net.num_actions(); ++a) {
    out.loss -= target[a] * cache.dist.log_probs[a];
    dlogits[a] = cache.dist.probs[a] - target[a];
  }
  Backprop(net, state.features, cache, dlogits, 1.0, out.grad);
  out.grad.set_accumulation_count(1);
  return out;
}

LossAndGrad HardCeLoss(const PolicyNet& net, const EnvState& state,
                       const CategoricalDist& teacher_dist) {
  if (teacher_dist.size() != net.num_actions()) {
    throw UsageError("teacher vocabulary does not match the policy");
  }
  const int target = Argmax(teacher_dist).index;
  const ForwardCache cache = ForwardWithCache(net, state.features);
  LossAndGrad out{-cache.dist.log_probs[target], GradBuffer(net)};
  std::vector<double> dlogits(net.num_actions());
  for (int a = 0; a < net.num_actions(); ++a) {
    dlogits[a] = cache.dist.probs[a] - (a == target ? 1.0 : 0.0);
  }
  Backprop(net, state.features, cache, dlogits, 1.0, out.grad);
  out.grad.set_accumulation_count(1);
  return out;
}

std::vector<double> GrpoAdvantages(std::span<const double> outcomes) {
  if (outcomes.size() < 2) {
    throw UsageError("group advantages need at least two trajectories");
  }
  const double n = static_cast<double>(outcomes.size());
  double mean = 0.0;
  for (double r : outcomes) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : outcomes) var += (r - mean) * (r - mean);
  const double denom = std::sqrt(var / n) + 1e-6;
  std::vector<double> adv;
  adv.reserve(outcomes.size());
  for (double r : outcomes) adv.push_back((r - mean) / denom);
  return adv;
}

GrpoSurrogateResult GrpoSurrogate(const GroupRollout& group,
                                  const PolicyNet& net, double clip_eps) {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw UsageError("clip_eps must lie in (0, 1)");
  }
  std::vector<double> outcomes;
  for (const Trajectory& tau : group.trajectories) outcomes.push_back(tau.outcome);
  const std::vector<double> adv = GrpoAdvantages(outcomes);

  GrpoSurrogateResult out;
  out.grad = GradBuffer(net);
  for (const Trajectory& tau : group.trajectories) {
    for (const TokenRecord& rec : tau.records) {
      if (!rec.old_logprob) throw UsageError("record without old_logprob");
      ++out.tokens;
    }
  }
  if (out.tokens == 0) throw UsageError("group without tokens");
  const double inv_tokens = 1.0 / out.tokens;
  std::vector<double> dlogits(net.num_actions());
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const double a_hat = adv[i];
    for (const TokenRecord& rec : group.trajectories[i].records) {
      const ForwardCache cache = ForwardWithCache(net, rec.state.features);
      const double ratio =
          std::exp(cache.dist.log_probs[rec.action.index] - *rec.old_logprob);
      const bool in_band = ratio >= 1.0 - clip_eps && ratio <= 1.0 + clip_eps;
      out.ratio_in_band += in_band;
      const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
      const double unclipped_term = ratio * a_hat;
      const double clipped_term = clipped * a_hat;
      out.surrogate += std::min(unclipped_term, clipped_term) * inv_tokens;
      // The min selects the clipped branch (constant in theta) only when
      // it is strictly smaller.
      if (clipped_term < unclipped_term || a_hat == 0.0) continue;
      for (int a = 0; a < net.num_actions(); ++a) {
        dlogits[a] = (a == rec.action.index ? 1.0 : 0.0) - cache.dist.probs[a];
      }
      Backprop(net, rec.state.features, cache, dlogits,
               a_hat * ratio * inv_tokens, out.grad);
    }
  }
  out.grad.set_accumulation_count(1);
  return out;
}

}  // namespace opd
