#ifndef OPD_ENVSIM_HPP_
#define OPD_ENVSIM_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "opd/rng.hpp"

namespace opd {

enum class EnvId { kGridNav, kKeyDoor, kMultiTask };

std::string ToString(EnvId id);
EnvId ParseEnvId(const std::string& name);

// Static description of a tokenized grid MDP.
struct EnvSpec {
  EnvId env_id = EnvId::kGridNav;
  int grid_size = 5;
  int horizon = 20;
  int action_vocab_size = 5;
  // Carried for completeness; returns are never discounted.
  double gamma = 1.0;
  int num_tasks = 1;
  double p_slip = 0.0;

  bool operator==(const EnvSpec&) const = default;
};

// Stable 64-bit fingerprint used to bind checkpoints to a spec.
std::uint64_t SpecHash(const EnvSpec& spec);

struct ActionToken {
  int index = 0;
  bool operator==(const ActionToken&) const = default;
};

// Action vocabulary of every grid environment.
enum Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kInteract = 4 };

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

struct EnvState {
  std::vector<double> features;
  int step_count = 0;
  bool terminal = false;
  bool succeeded = false;

  Cell agent;
  bool has_key = false;
  int task_id = 0;

  bool operator==(const EnvState&) const = default;
};

// Environment bound to one spec. Stepping is a const operation on the
// geometry; the only mutable member is the step counter used for
// resource accounting, so a single instance must not be shared between
// concurrent steppers.
class Environment {
 public:
  // Throws ConfigError when the spec is malformed or the horizon is shorter
  // than a shortest successful path from some start state.
  explicit Environment(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }
  int feature_dim() const;
  int num_actions() const { return spec_.action_vocab_size; }

  EnvState Reset(std::uint64_t seed, std::optional<int> task_id = {}) const;

  // Throws UsageError on a terminal state or an out-of-range action.
  EnvState Step(const EnvState& state, ActionToken action, Rng& rng);

  // Builds an arbitrary non-terminal state (tests, enumeration).
  EnvState MakeState(Cell agent, bool has_key = false, int task_id = 0,
                     int step_count = 0) const;

  // Every non-terminal decision state at step 0, in a fixed order.
  std::vector<EnvState> EnumerateStates() const;
  std::vector<EnvState> EnumerateStates(const std::vector<int>& tasks) const;

  // All possible initial states (one per start cell and task).
  std::vector<EnvState> StartStates() const;

  // Shortest number of deterministic steps from `state` to success, or -1.
  int ShortestPathLength(const EnvState& state) const;

  // Dense index of (agent, has_key, task), suitable as a table key.
  std::int64_t StateKey(const EnvState& state) const;

  Cell Goal(int task_id) const;
  std::optional<Cell> Key() const;
  std::vector<Cell> StartCells() const;

  std::uint64_t steps_taken() const { return steps_taken_; }

 private:
  void Encode(EnvState& state) const;
  bool IsSuccess(Cell agent, bool has_key, int task_id) const;

  EnvSpec spec_;
  std::vector<Cell> goals_;
  std::uint64_t steps_taken_ = 0;
};

void ValidateSpec(const EnvSpec& spec);

}  // namespace opd

#endif  // OPD_ENVSIM_HPP_
