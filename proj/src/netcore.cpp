#include "opd/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "opd/errors.hpp"
#include "opd/text_io.hpp"

namespace opd {

CategoricalDist CategoricalDist::FromLogits(std::vector<double> logits) {
  CategoricalDist d;
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - max_logit);
  const double log_z = max_logit + std::log(sum);
  d.log_probs.resize(logits.size());
  d.probs.resize(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) {
    d.log_probs[a] = logits[a] - log_z;
    d.probs[a] = std::exp(d.log_probs[a]);
  }
  d.logits = std::move(logits);
  return d;
}

CategoricalDist CategoricalDist::Uniform(int k) {
  return FromLogits(std::vector<double>(k, 0.0));
}

double Entropy(const CategoricalDist& dist) {
  double h = 0.0;
  for (int a = 0; a < dist.size(); ++a) h -= dist.probs[a] * dist.log_probs[a];
  return std::max(0.0, h);
}

double KlDivergence(const CategoricalDist& p, const CategoricalDist& q) {
  if (p.size() != q.size()) throw UsageError("KL of mismatched vocabularies");
  double kl = 0.0;
  for (int a = 0; a < p.size(); ++a) {
    kl += p.probs[a] * (p.log_probs[a] - q.log_probs[a]);
  }
  return std::max(0.0, kl);
}

double TotalVariation(const CategoricalDist& p, const CategoricalDist& q) {
  double tv = 0.0;
  for (int a = 0; a < p.size(); ++a) tv += std::abs(p.probs[a] - q.probs[a]);
  return 0.5 * tv;
}

ActionToken SampleAction(const CategoricalDist& dist, Rng& rng) {
  const double u = rng.Uniform();
  double cdf = 0.0;
  for (int a = 0; a < dist.size(); ++a) {
    cdf += dist.probs[a];
    if (u < cdf) return {a};
  }
  // Rounding can leave the CDF a hair below 1; fall back to the last
  // action with non-negligible mass.
  for (int a = dist.size() - 1; a >= 0; --a) {
    if (dist.probs[a] > 0.0) return {a};
  }
  return {dist.size() - 1};
}

ActionToken Argmax(const CategoricalDist& dist) {
  int best = 0;
  for (int a = 1; a < dist.size(); ++a) {
    if (dist.probs[a] > dist.probs[best]) best = a;
  }
  return {best};
}

PolicyNet::PolicyNet(int feature_dim, int hidden_dim, int num_actions)
    : feature_dim_(feature_dim),
      hidden_dim_(hidden_dim),
      num_actions_(num_actions) {
  if (feature_dim <= 0 || hidden_dim <= 0 || num_actions < 2) {
    throw ConfigError("policy dimensions must be positive with K >= 2");
  }
  params_.assign(static_cast<std::size_t>(hidden_dim) * feature_dim +
                     hidden_dim +
                     static_cast<std::size_t>(num_actions) * hidden_dim +
                     num_actions,
                 0.0);
}

PolicyNet PolicyNet::Initialize(int feature_dim, int hidden_dim,
                                int num_actions, std::uint64_t seed,
                                double scale) {
  PolicyNet net(feature_dim, hidden_dim, num_actions);
  Rng rng = Rng::Derive(seed, {StreamId(Stream::kInit)});
  for (int h = 0; h < hidden_dim; ++h) {
    for (int f = 0; f < feature_dim; ++f) net.w1(h, f) = rng.Uniform(-scale, scale);
  }
  for (int a = 0; a < num_actions; ++a) {
    for (int h = 0; h < hidden_dim; ++h) net.w2(a, h) = rng.Uniform(-scale, scale);
  }
  return net;
}

bool PolicyNet::AllFinite() const {
  return std::all_of(params_.begin(), params_.end(),
                     [](double v) { return std::isfinite(v); });
}

GradBuffer::GradBuffer(const PolicyNet& like)
    : values_(like.num_params(), 0.0) {}

void GradBuffer::Merge(const GradBuffer& other) {
  if (values_.empty()) values_.assign(other.values_.size(), 0.0);
  if (other.values_.size() != values_.size()) {
    throw UsageError("merging gradient buffers of different shapes");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  accumulation_count_ += other.accumulation_count_;
}

void GradBuffer::Scale(double factor) {
  for (double& v : values_) v *= factor;
}

double GradBuffer::Norm() const {
  double sq = 0.0;
  for (double v : values_) sq += v * v;
  return std::sqrt(sq);
}

bool GradBuffer::AllFinite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

bool GradBuffer::Matches(const PolicyNet& net) const {
  return values_.size() == net.num_params();
}

ForwardCache ForwardWithCache(const PolicyNet& net,
                              std::span<const double> features) {
  if (static_cast<int>(features.size()) != net.feature_dim()) {
    throw ConfigError("feature length " + std::to_string(features.size()) +
                      " does not match policy input " +
                      std::to_string(net.feature_dim()));
  }
  const int hidden = net.hidden_dim();
  const int k = net.num_actions();
  ForwardCache cache;
  cache.hidden.resize(hidden);
  for (int h = 0; h < hidden; ++h) cache.hidden[h] = net.b1(h);
  // Observations are sparse one-hot vectors; skip the zero entries.
  for (int f = 0; f < net.feature_dim(); ++f) {
    const double x = features[f];
    if (x == 0.0) continue;
    for (int h = 0; h < hidden; ++h) cache.hidden[h] += net.w1(h, f) * x;
  }
  for (double& v : cache.hidden) v = std::tanh(v);
  std::vector<double> logits(k);
  for (int a = 0; a < k; ++a) {
    double z = net.b2(a);
    for (int h = 0; h < hidden; ++h) z += net.w2(a, h) * cache.hidden[h];
    logits[a] = z;
  }
  cache.dist = CategoricalDist::FromLogits(std::move(logits));
  return cache;
}

CategoricalDist Forward(const PolicyNet& net, std::span<const double> features) {
  return ForwardWithCache(net, features).dist;
}

CategoricalDist Forward(const PolicyNet& net, const EnvState& state) {
  return Forward(net, state.features);
}

void Backprop(const PolicyNet& net, std::span<const double> features,
              const ForwardCache& cache, std::span<const double> dlogits,
              double scale, GradBuffer& grad) {
  if (!grad.Matches(net)) throw UsageError("gradient buffer shape mismatch");
  const int hidden = net.hidden_dim();
  const int k = net.num_actions();
  std::span<double> g = grad.values();
  std::vector<double> dpre(hidden, 0.0);
  for (int a = 0; a < k; ++a) {
    const double d = scale * dlogits[a];
    if (d == 0.0) continue;
    g[net.b2_offset() + a] += d;
    const std::size_t row = net.w2_offset() + static_cast<std::size_t>(a) * hidden;
    for (int h = 0; h < hidden; ++h) {
      g[row + h] += d * cache.hidden[h];
      dpre[h] += d * net.w2(a, h);
    }
  }
  for (int h = 0; h < hidden; ++h) {
    dpre[h] *= 1.0 - cache.hidden[h] * cache.hidden[h];
    g[net.b1_offset() + h] += dpre[h];
  }
  for (int f = 0; f < net.feature_dim(); ++f) {
    const double x = features[f];
    if (x == 0.0) continue;
    for (int h = 0; h < hidden; ++h) {
      g[static_cast<std::size_t>(h) * net.feature_dim() + f] += dpre[h] * x;
    }
  }
}

GradBuffer GradLogProb(const PolicyNet& net, const EnvState& state,
                       ActionToken action) {
  if (action.index < 0 || action.index >= net.num_actions()) {
    throw UsageError("action index out of range");
  }
  const ForwardCache cache = ForwardWithCache(net, state.features);
  std::vector<double> dlogits(net.num_actions());
  for (int a = 0; a < net.num_actions(); ++a) {
    dlogits[a] = (a == action.index ? 1.0 : 0.0) - cache.dist.probs[a];
  }
  GradBuffer grad(net);
  Backprop(net, state.features, cache, dlogits, 1.0, grad);
  grad.set_accumulation_count(1);
  return grad;
}

std::string ToString(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind ParseOptimizerKind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgdMomentum;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

OptimState MakeOptimState(const PolicyNet& net, double learning_rate,
                          double momentum,
                          std::optional<double> grad_clip_norm,
                          OptimizerKind kind) {
  if (!(learning_rate >= 0.0)) {
    throw ConfigError("learning rate must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) {
    throw ConfigError("grad_clip_norm must be positive");
  }
  OptimState opt;
  opt.kind = kind;
  opt.learning_rate = learning_rate;
  opt.momentum = momentum;
  opt.grad_clip_norm = grad_clip_norm;
  opt.velocity.assign(net.num_params(), 0.0);
  if (kind == OptimizerKind::kAdam) opt.second_moment.assign(net.num_params(), 0.0);
  return opt;
}

UpdateStats ApplyUpdate(PolicyNet& net, const GradBuffer& grads,
                        OptimState& opt) {
  if (grads.accumulation_count() <= 0) {
    throw UsageError("ApplyUpdate needs at least one accumulated gradient");
  }
  if (!grads.Matches(net)) throw UsageError("gradient buffer shape mismatch");
  if (opt.velocity.size() != net.num_params()) {
    opt.velocity.assign(net.num_params(), 0.0);
  }
  const double inv_count = 1.0 / grads.accumulation_count();
  UpdateStats stats;
  stats.grad_norm = grads.Norm() * inv_count;
  if (!std::isfinite(stats.grad_norm)) {
    std::ostringstream os;
    os << "non-finite gradient (norm " << stats.grad_norm << ", count "
       << grads.accumulation_count() << ", lr " << opt.learning_rate << ")";
    throw DivergenceError(os.str());
  }
  double factor = inv_count;
  stats.applied_norm = stats.grad_norm;
  if (opt.grad_clip_norm && stats.grad_norm > *opt.grad_clip_norm) {
    factor *= *opt.grad_clip_norm / stats.grad_norm;
    stats.applied_norm = *opt.grad_clip_norm;
  }
  std::span<double> theta = net.params();
  std::span<const double> g = grads.values();
  if (opt.kind == OptimizerKind::kAdam) {
    if (opt.second_moment.size() != net.num_params()) {
      opt.second_moment.assign(net.num_params(), 0.0);
    }
    ++opt.steps;
    const double b1 = opt.momentum;
    const double b2 = opt.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.steps));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = factor * g[i];
      opt.velocity[i] = b1 * opt.velocity[i] + (1.0 - b1) * gi;
      opt.second_moment[i] = b2 * opt.second_moment[i] + (1.0 - b2) * gi * gi;
      const double m_hat = opt.velocity[i] / c1;
      const double v_hat = opt.second_moment[i] / c2;
      theta[i] += opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.adam_epsilon);
    }
  } else {
    ++opt.steps;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      opt.velocity[i] = opt.momentum * opt.velocity[i] + factor * g[i];
      theta[i] += opt.learning_rate * opt.velocity[i];
    }
  }
  if (!net.AllFinite()) {
    throw DivergenceError("parameters became non-finite after update");
  }
  return stats;
}

namespace {
constexpr const char* kPolicyMagic = "opd-policy v1";
}  // namespace

void SavePolicy(const std::filesystem::path& path, const PolicyNet& net,
                std::uint64_t spec_hash, std::uint64_t seed) {
  std::ostringstream os;
  os << kPolicyMagic << "\n";
  os << "spec_hash " << FormatHex64(spec_hash) << "\n";
  os << "seed " << seed << "\n";
  os << "dims " << net.feature_dim() << " " << net.hidden_dim() << " "
     << net.num_actions() << "\n";
  os << "params";
  for (double v : net.params()) os << " " << FormatDouble(v);
  os << "\n";
  WriteFile(path, os.str());
}

PolicyCheckpoint LoadPolicy(const std::filesystem::path& path,
                            std::uint64_t expected_spec_hash) {
  std::istringstream in(ReadFile(path));
  std::string line;
  std::getline(in, line);
  if (Trim(line) != kPolicyMagic) {
    throw IoError("'" + path.string() + "' is not a policy checkpoint");
  }
  PolicyCheckpoint ckpt;
  int fdim = 0, hdim = 0, k = 0;
  std::vector<double> values;
  bool have_dims = false;
  while (std::getline(in, line)) {
    const auto tok = SplitWhitespace(line);
    if (tok.empty()) continue;
    if (tok[0] == "spec_hash" && tok.size() == 2) {
      ckpt.spec_hash = ParseHex64(tok[1], "spec_hash");
    } else if (tok[0] == "seed" && tok.size() == 2) {
      ckpt.seed = static_cast<std::uint64_t>(ParseInt(tok[1], "seed"));
    } else if (tok[0] == "dims" && tok.size() == 4) {
      fdim = static_cast<int>(ParseInt(tok[1], "dims"));
      hdim = static_cast<int>(ParseInt(tok[2], "dims"));
      k = static_cast<int>(ParseInt(tok[3], "dims"));
      have_dims = true;
    } else if (tok[0] == "params") {
      for (std::size_t i = 1; i < tok.size(); ++i) {
        values.push_back(ParseDouble(tok[i], "params"));
      }
    } else {
      throw IoError("malformed policy checkpoint line: " + line);
    }
  }
  if (!have_dims) throw IoError("policy checkpoint lacks dims");
  if (ckpt.spec_hash != expected_spec_hash) {
    throw ConfigError("policy checkpoint spec hash " +
                      FormatHex64(ckpt.spec_hash) +
                      " does not match environment " +
                      FormatHex64(expected_spec_hash));
  }
  ckpt.net = PolicyNet(fdim, hdim, k);
  if (values.size() != ckpt.net.num_params()) {
    throw IoError("policy checkpoint parameter count mismatch");
  }
  std::copy(values.begin(), values.end(), ckpt.net.params().begin());
  return ckpt;
}

}  // namespace opd
