#ifndef OPD_NETCORE_HPP_
#define OPD_NETCORE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opd/envsim.hpp"
#include "opd/rng.hpp"

namespace opd {

// Categorical distribution over the action vocabulary. probs and log_probs
// are always derived from logits through a max-shifted softmax, so every
// entry of probs is strictly positive.
struct CategoricalDist {
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> log_probs;

  static CategoricalDist FromLogits(std::vector<double> logits);
  static CategoricalDist Uniform(int k);

  int size() const { return static_cast<int>(probs.size()); }
};

// Natural-log entropy in nats.
double Entropy(const CategoricalDist& dist);

// KL(p || q) = sum_a p[a] (log p[a] - log q[a]).
double KlDivergence(const CategoricalDist& p, const CategoricalDist& q);

// Total-variation distance, 0.5 * sum |p - q|.
double TotalVariation(const CategoricalDist& p, const CategoricalDist& q);

// Inverse-CDF sampling in index order; consumes exactly one uniform draw.
ActionToken SampleAction(const CategoricalDist& dist, Rng& rng);

// Most probable index; ties resolve to the lowest index.
ActionToken Argmax(const CategoricalDist& dist);

// Two-layer tanh perceptron mapping features to action logits:
//   logits = W2 tanh(W1 x + b1) + b2
// All parameters live in one flat array laid out as [W1 | b1 | W2 | b2],
// row-major, which keeps optimizer and gradient arithmetic trivial.
class PolicyNet {
 public:
  PolicyNet() = default;
  // All-zero parameters.
  PolicyNet(int feature_dim, int hidden_dim, int num_actions);

  // Weights uniform in [-scale, scale] from `seed`, biases zero.
  static PolicyNet Initialize(int feature_dim, int hidden_dim, int num_actions,
                              std::uint64_t seed, double scale = 0.08);

  int feature_dim() const { return feature_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  int num_actions() const { return num_actions_; }
  std::size_t num_params() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  double& w1(int h, int f) { return params_[h * feature_dim_ + f]; }
  double w1(int h, int f) const { return params_[h * feature_dim_ + f]; }
  double& b1(int h) { return params_[b1_offset() + h]; }
  double b1(int h) const { return params_[b1_offset() + h]; }
  double& w2(int a, int h) { return params_[w2_offset() + a * hidden_dim_ + h]; }
  double w2(int a, int h) const {
    return params_[w2_offset() + a * hidden_dim_ + h];
  }
  double& b2(int a) { return params_[b2_offset() + a]; }
  double b2(int a) const { return params_[b2_offset() + a]; }

  std::size_t b1_offset() const {
    return static_cast<std::size_t>(hidden_dim_) * feature_dim_;
  }
  std::size_t w2_offset() const { return b1_offset() + hidden_dim_; }
  std::size_t b2_offset() const {
    return w2_offset() + static_cast<std::size_t>(num_actions_) * hidden_dim_;
  }

  bool AllFinite() const;
  bool operator==(const PolicyNet&) const = default;

 private:
  int feature_dim_ = 0;
  int hidden_dim_ = 0;
  int num_actions_ = 0;
  std::vector<double> params_;
};

// Gradient accumulator with the same layout as PolicyNet.
// accumulation_count counts merged contributions; ApplyUpdate divides by it.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const PolicyNet& like);

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  int accumulation_count() const { return accumulation_count_; }
  void set_accumulation_count(int n) { accumulation_count_ = n; }

  // Element-wise sum; counts add.
  void Merge(const GradBuffer& other);
  void Scale(double factor);
  double Norm() const;
  bool AllFinite() const;
  bool Matches(const PolicyNet& net) const;

 private:
  std::vector<double> values_;
  int accumulation_count_ = 0;
};

struct ForwardCache {
  std::vector<double> hidden;  // tanh activations
  CategoricalDist dist;
};

// Throws ConfigError when the feature length does not match W1.
ForwardCache ForwardWithCache(const PolicyNet& net,
                              std::span<const double> features);
CategoricalDist Forward(const PolicyNet& net, std::span<const double> features);
CategoricalDist Forward(const PolicyNet& net, const EnvState& state);

// Adds scale * d(dlogits . logits)/d(theta) into `grad` (does not touch the
// accumulation count). Every objective reduces to a choice of dlogits.
void Backprop(const PolicyNet& net, std::span<const double> features,
              const ForwardCache& cache, std::span<const double> dlogits,
              double scale, GradBuffer& grad);

// Exact gradient of log pi(action | state); d(logits) = onehot - probs.
GradBuffer GradLogProb(const PolicyNet& net, const EnvState& state,
                       ActionToken action);

enum class OptimizerKind { kSgdMomentum, kAdam };

std::string ToString(OptimizerKind kind);
OptimizerKind ParseOptimizerKind(const std::string& name);

// For Adam, `momentum` is beta1 and `velocity` the first moment.
struct OptimState {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::optional<double> grad_clip_norm = 10.0;
  std::vector<double> velocity;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::vector<double> second_moment;
  std::int64_t steps = 0;
};

OptimState MakeOptimState(const PolicyNet& net, double learning_rate,
                          double momentum = 0.9,
                          std::optional<double> grad_clip_norm = 10.0,
                          OptimizerKind kind = OptimizerKind::kSgdMomentum);

struct UpdateStats {
  double grad_norm = 0.0;     // norm of the averaged gradient before clipping
  double applied_norm = 0.0;  // norm after clipping
};

// SGD: theta <- theta + lr * v, v <- momentum * v + clip(mean gradient).
// Adam: bias-corrected moments of the clipped mean gradient.
// Always ascends: callers pass the negated gradient of a loss.
// Throws UsageError on an empty buffer, DivergenceError on non-finite input.
UpdateStats ApplyUpdate(PolicyNet& net, const GradBuffer& grads,
                        OptimState& opt);

struct PolicyCheckpoint {
  PolicyNet net;
  std::uint64_t spec_hash = 0;
  std::uint64_t seed = 0;
};

void SavePolicy(const std::filesystem::path& path, const PolicyNet& net,
                std::uint64_t spec_hash, std::uint64_t seed);
// Throws IoError on unreadable or malformed files and ConfigError when the
// stored spec hash differs from `expected_spec_hash`.
PolicyCheckpoint LoadPolicy(const std::filesystem::path& path,
                            std::uint64_t expected_spec_hash);

}  // namespace opd

#endif  // OPD_NETCORE_HPP_
