#ifndef OPD_TEST_SUPPORT_HPP_
#define OPD_TEST_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "opd/envsim.hpp"
#include "opd/netcore.hpp"
#include "opd/rng.hpp"

namespace opd::test {

// Net with every parameter uniform in [-scale, scale], biases included.
inline PolicyNet RandomNet(Rng& rng, int features, int hidden, int actions,
                           double scale = 1.0) {
  PolicyNet net(features, hidden, actions);
  for (double& p : net.params()) p = rng.Uniform(-scale, scale);
  return net;
}

inline std::vector<double> RandomFeatures(Rng& rng, int n) {
  std::vector<double> f(static_cast<std::size_t>(n));
  for (double& x : f) x = rng.Uniform(-1.0, 1.0);
  return f;
}

// A bare state carrying only a feature vector.
inline EnvState FeatureState(std::vector<double> features) {
  EnvState s;
  s.features = std::move(features);
  return s;
}

inline CategoricalDist RandomDist(Rng& rng, int k, double spread = 3.0) {
  std::vector<double> logits(static_cast<std::size_t>(k));
  for (double& l : logits) l = rng.Uniform(-spread, spread);
  return CategoricalDist::FromLogits(logits);
}

// Central differences of f at every parameter of `net`.
inline std::vector<double> CentralDifferences(
    const PolicyNet& net, const std::function<double(const PolicyNet&)>& f,
    double h = 1e-5) {
  std::vector<double> out(net.num_params());
  PolicyNet probe = net;
  for (std::size_t i = 0; i < net.num_params(); ++i) {
    const double x = net.params()[i];
    probe.params()[i] = x + h;
    const double up = f(probe);
    probe.params()[i] = x - h;
    const double down = f(probe);
    probe.params()[i] = x;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

// Largest componentwise relative error; components below `floor` in
// magnitude are compared against `floor`.
inline double MaxRelativeError(std::span<const double> a,
                               std::span<const double> b,
                               double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double MaxAbsDiff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

inline EnvSpec SmallGrid(EnvId id = EnvId::kGridNav, int n = 5, int horizon = 20,
                         int tasks = 1) {
  EnvSpec s;
  s.env_id = id;
  s.grid_size = n;
  s.horizon = horizon;
  s.num_tasks = tasks;
  s.p_slip = 0.0;
  return s;
}

}  // namespace opd::test

#endif  // OPD_TEST_SUPPORT_HPP_
