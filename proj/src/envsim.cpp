#include "opd/envsim.hpp"

#include <array>
#include <cmath>
#include <deque>
#include <sstream>

#include "opd/errors.hpp"

namespace opd {

namespace {

constexpr std::uint64_t kResetStream = 0x5eed;

std::uint64_t Fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Perimeter cells in clockwise order starting from the top-left corner.
std::vector<Cell> Perimeter(int n) {
  std::vector<Cell> cells;
  for (int x = 0; x < n; ++x) cells.push_back({x, 0});
  for (int y = 1; y < n; ++y) cells.push_back({n - 1, y});
  for (int x = n - 2; x >= 0; --x) cells.push_back({x, n - 1});
  for (int y = n - 2; y >= 1; --y) cells.push_back({0, y});
  return cells;
}

Cell Move(Cell c, int action, int n) {
  switch (action) {
    case kUp: c.y = std::max(0, c.y - 1); break;
    case kDown: c.y = std::min(n - 1, c.y + 1); break;
    case kLeft: c.x = std::max(0, c.x - 1); break;
    case kRight: c.x = std::min(n - 1, c.x + 1); break;
    default: break;
  }
  return c;
}

}  // namespace

std::string ToString(EnvId id) {
  switch (id) {
    case EnvId::kGridNav: return "GridNav";
    case EnvId::kKeyDoor: return "KeyDoor";
    case EnvId::kMultiTask: return "MultiTask";
  }
  return "?";
}

EnvId ParseEnvId(const std::string& name) {
  if (name == "GridNav") return EnvId::kGridNav;
  if (name == "KeyDoor") return EnvId::kKeyDoor;
  if (name == "MultiTask") return EnvId::kMultiTask;
  throw ConfigError("unknown env_id '" + name +
                    "' (expected GridNav, KeyDoor or MultiTask)");
}

std::uint64_t SpecHash(const EnvSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "env_id=" << ToString(spec.env_id) << ";grid_size=" << spec.grid_size
     << ";horizon=" << spec.horizon << ";K=" << spec.action_vocab_size
     << ";gamma=" << spec.gamma << ";num_tasks=" << spec.num_tasks
     << ";p_slip=" << spec.p_slip;
  return Fnv1a(os.str());
}

void ValidateSpec(const EnvSpec& spec) {
  if (spec.grid_size < 3) throw ConfigError("env.grid_size must be >= 3");
  if (spec.horizon < 1) throw ConfigError("env.horizon must be positive");
  if (spec.action_vocab_size != 5) {
    throw ConfigError(
        "env.action_vocab_size must be 5 (up, down, left, right, interact)");
  }
  if (!(spec.gamma > 0.0 && spec.gamma <= 1.0)) {
    throw ConfigError("env.gamma must lie in (0, 1]");
  }
  if (!(spec.p_slip >= 0.0 && spec.p_slip < 1.0)) {
    throw ConfigError("env.p_slip must lie in [0, 1)");
  }
  if (spec.num_tasks < 1) throw ConfigError("env.num_tasks must be positive");
  if (spec.env_id != EnvId::kMultiTask && spec.num_tasks != 1) {
    throw ConfigError("env.num_tasks must be 1 for " + ToString(spec.env_id));
  }
  if (spec.env_id == EnvId::kMultiTask) {
    const int perimeter = 4 * (spec.grid_size - 1);
    if (spec.num_tasks > perimeter) {
      throw ConfigError("env.num_tasks exceeds the number of perimeter goals");
    }
  }
}

Environment::Environment(EnvSpec spec) : spec_(spec) {
  ValidateSpec(spec_);
  const int n = spec_.grid_size;
  switch (spec_.env_id) {
    case EnvId::kGridNav:
      goals_ = {{n - 1, n / 2}};
      break;
    case EnvId::kKeyDoor:
      goals_ = {{n - 1, n - 1}};
      break;
    case EnvId::kMultiTask: {
      const auto ring = Perimeter(n);
      const int p = static_cast<int>(ring.size());
      for (int t = 0; t < spec_.num_tasks; ++t) {
        goals_.push_back(ring[t * p / spec_.num_tasks]);
      }
      break;
    }
  }
  for (const EnvState& s : StartStates()) {
    const int d = ShortestPathLength(s);
    if (d < 0 || d > spec_.horizon) {
      std::ostringstream os;
      os << "env.horizon " << spec_.horizon << " is shorter than the "
         << "shortest successful path (" << d << ") from start ("
         << s.agent.x << "," << s.agent.y << ") task " << s.task_id;
      throw ConfigError(os.str());
    }
  }
}

int Environment::feature_dim() const {
  const int cells = spec_.grid_size * spec_.grid_size;
  return 2 * cells + 1 + spec_.num_tasks;
}

Cell Environment::Goal(int task_id) const { return goals_.at(task_id); }

std::optional<Cell> Environment::Key() const {
  if (spec_.env_id != EnvId::kKeyDoor) return std::nullopt;
  return Cell{spec_.grid_size - 1, 0};
}

std::vector<Cell> Environment::StartCells() const {
  const int n = spec_.grid_size;
  if (spec_.env_id == EnvId::kMultiTask) return {{n / 2, n / 2}};
  std::vector<Cell> cells;
  for (int y = 0; y < n; ++y) cells.push_back({0, y});
  return cells;
}

std::vector<EnvState> Environment::StartStates() const {
  std::vector<EnvState> out;
  for (int t = 0; t < spec_.num_tasks; ++t) {
    for (Cell c : StartCells()) out.push_back(MakeState(c, false, t));
  }
  return out;
}

bool Environment::IsSuccess(Cell agent, bool has_key, int task_id) const {
  if (!(agent == goals_[task_id])) return false;
  return spec_.env_id != EnvId::kKeyDoor || has_key;
}

void Environment::Encode(EnvState& state) const {
  const int n = spec_.grid_size;
  const int cells = n * n;
  state.features.assign(feature_dim(), 0.0);
  state.features[state.agent.y * n + state.agent.x] = 1.0;
  const Cell goal = goals_[state.task_id];
  state.features[cells + goal.y * n + goal.x] = 1.0;
  if (state.has_key) state.features[2 * cells] = 1.0;
  state.features[2 * cells + 1 + state.task_id] = 1.0;
}

EnvState Environment::MakeState(Cell agent, bool has_key, int task_id,
                                int step_count) const {
  const int n = spec_.grid_size;
  if (agent.x < 0 || agent.x >= n || agent.y < 0 || agent.y >= n) {
    throw UsageError("cell outside the grid");
  }
  if (task_id < 0 || task_id >= spec_.num_tasks) {
    throw ConfigError("task_id " + std::to_string(task_id) +
                      " out of range [0, " + std::to_string(spec_.num_tasks) +
                      ")");
  }
  EnvState s;
  s.agent = agent;
  s.has_key = has_key && spec_.env_id == EnvId::kKeyDoor;
  s.task_id = task_id;
  s.step_count = step_count;
  Encode(s);
  return s;
}

EnvState Environment::Reset(std::uint64_t seed,
                            std::optional<int> task_id) const {
  Rng rng = Rng::Derive(seed, {kResetStream});
  const auto starts = StartCells();
  const Cell start = starts[rng.UniformInt(static_cast<int>(starts.size()))];
  int task = 0;
  if (task_id.has_value()) {
    task = *task_id;
  } else if (spec_.num_tasks > 1) {
    task = rng.UniformInt(spec_.num_tasks);
  }
  return MakeState(start, false, task);
}

EnvState Environment::Step(const EnvState& state, ActionToken action,
                           Rng& rng) {
  if (state.terminal) throw UsageError("step called on a terminal state");
  if (action.index < 0 || action.index >= spec_.action_vocab_size) {
    throw UsageError("action index out of range");
  }
  int a = action.index;
  if (spec_.p_slip > 0.0 && rng.Uniform() < spec_.p_slip) {
    a = rng.UniformInt(spec_.action_vocab_size);
  }
  ++steps_taken_;

  EnvState next = state;
  next.agent = Move(state.agent, a, spec_.grid_size);
  if (a == kInteract && spec_.env_id == EnvId::kKeyDoor &&
      state.agent == *Key()) {
    next.has_key = true;
  }
  next.step_count = state.step_count + 1;
  if (IsSuccess(next.agent, next.has_key, next.task_id)) {
    next.terminal = true;
    next.succeeded = true;
  } else if (next.step_count >= spec_.horizon) {
    next.terminal = true;
  }
  Encode(next);
  return next;
}

std::int64_t Environment::StateKey(const EnvState& s) const {
  const std::int64_t n = spec_.grid_size;
  return ((static_cast<std::int64_t>(s.task_id) * 2 + (s.has_key ? 1 : 0)) *
              n +
          s.agent.y) *
             n +
         s.agent.x;
}

std::vector<EnvState> Environment::EnumerateStates() const {
  std::vector<int> tasks;
  for (int t = 0; t < spec_.num_tasks; ++t) tasks.push_back(t);
  return EnumerateStates(tasks);
}

std::vector<EnvState> Environment::EnumerateStates(
    const std::vector<int>& tasks) const {
  const int n = spec_.grid_size;
  const int key_states = spec_.env_id == EnvId::kKeyDoor ? 2 : 1;
  std::vector<EnvState> out;
  for (int t : tasks) {
    for (int k = 0; k < key_states; ++k) {
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          if (IsSuccess({x, y}, k == 1, t)) continue;
          out.push_back(MakeState({x, y}, k == 1, t));
        }
      }
    }
  }
  return out;
}

int Environment::ShortestPathLength(const EnvState& state) const {
  if (IsSuccess(state.agent, state.has_key, state.task_id)) return 0;
  const int n = spec_.grid_size;
  const int total = 2 * n * n;
  std::vector<int> dist(total, -1);
  auto index = [n](Cell c, bool key) { return (key ? n * n : 0) + c.y * n + c.x; };
  std::deque<std::pair<Cell, bool>> queue;
  dist[index(state.agent, state.has_key)] = 0;
  queue.emplace_back(state.agent, state.has_key);
  const std::optional<Cell> key_cell = Key();
  while (!queue.empty()) {
    const auto [cell, key] = queue.front();
    queue.pop_front();
    const int d = dist[index(cell, key)];
    for (int a = 0; a < spec_.action_vocab_size; ++a) {
      Cell next = Move(cell, a, n);
      bool next_key = key;
      if (a == kInteract && key_cell && cell == *key_cell) next_key = true;
      if (IsSuccess(next, next_key, state.task_id)) return d + 1;
      const int idx = index(next, next_key);
      if (dist[idx] < 0) {
        dist[idx] = d + 1;
        queue.emplace_back(next, next_key);
      }
    }
  }
  return -1;
}

}  // namespace opd
