#include "opd/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "opd/errors.hpp"
#include "opd/text_io.hpp"

namespace opd {

namespace {

constexpr const char* kTeacherMagic = "opd-teacher v1";

std::uint64_t MixBits(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t DoubleBits(double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  return bits;
}

// Greedy action with uniformly random tie-breaking (used while learning).
int GreedyRandomTie(const std::vector<double>& q, Rng& rng) {
  const double best = *std::max_element(q.begin(), q.end());
  int ties = 0;
  for (double v : q) ties += (v == best);
  int pick = rng.UniformInt(ties);
  for (int a = 0; a < static_cast<int>(q.size()); ++a) {
    if (q[a] == best && pick-- == 0) return a;
  }
  return 0;
}

}  // namespace

TeacherPolicy::TeacherPolicy(EnvSpec spec, QTable q_table,
                             VisitTable visit_counts, double temperature,
                             double label_floor)
    : spec_(spec),
      env_(spec),
      q_table_(std::move(q_table)),
      visit_counts_(std::move(visit_counts)),
      temperature_(temperature),
      label_floor_(label_floor) {
  if (!(temperature_ > 0.0)) {
    throw ConfigError("teacher temperature must be positive");
  }
  if (!(label_floor_ >= 0.0 && label_floor_ < 1.0)) {
    throw ConfigError("teacher label_floor must lie in [0, 1)");
  }
  for (const auto& [key, row] : q_table_) {
    if (static_cast<int>(row.size()) != spec_.action_vocab_size) {
      throw ConfigError("teacher Q-row width does not match the vocabulary");
    }
  }
}

std::vector<double> TeacherPolicy::QRow(const EnvState& state) const {
  auto it = q_table_.find(env_.StateKey(state));
  if (it == q_table_.end()) {
    return std::vector<double>(spec_.action_vocab_size, 0.0);
  }
  return it->second;
}

std::uint64_t TeacherPolicy::VisitCount(const EnvState& state) const {
  auto it = visit_counts_.find(env_.StateKey(state));
  return it == visit_counts_.end() ? 0 : it->second;
}

CategoricalDist TeacherPolicy::Label(const EnvState& state) const {
  std::vector<double> logits = QRow(state);
  for (double& z : logits) z /= temperature_;
  CategoricalDist sharp = CategoricalDist::FromLogits(std::move(logits));
  if (label_floor_ == 0.0) return sharp;
  const double uniform = label_floor_ / sharp.size();
  for (double& p : sharp.probs) p = (1.0 - label_floor_) * p + uniform;
  for (double& p : sharp.probs) p = std::log(p);
  return CategoricalDist::FromLogits(std::move(sharp.probs));
}

double TeacherPolicy::LogProb(const EnvState& state, ActionToken action) const {
  if (action.index < 0 || action.index >= spec_.action_vocab_size) {
    throw UsageError("action index out of range");
  }
  return Label(state).log_probs[action.index];
}

ActionToken TeacherPolicy::GreedyAction(const EnvState& state) const {
  const std::vector<double> q = QRow(state);
  int best = 0;
  for (int a = 1; a < static_cast<int>(q.size()); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return {best};
}

TeacherPolicy TeacherPolicy::WithTemperature(double temperature) const {
  return TeacherPolicy(spec_, q_table_, visit_counts_, temperature,
                       label_floor_);
}

std::uint64_t TeacherPolicy::Hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = MixBits(h, SpecHash(spec_));
  h = MixBits(h, DoubleBits(temperature_));
  h = MixBits(h, DoubleBits(label_floor_));
  for (const auto& [key, row] : q_table_) {
    h = MixBits(h, static_cast<std::uint64_t>(key));
    for (double v : row) h = MixBits(h, DoubleBits(v));
  }
  return h;
}

TeacherPolicy TrainTeacher(const EnvSpec& spec,
                           const TeacherTrainOptions& options) {
  if (options.episodes <= 0) {
    throw ConfigError("teacher.episodes must be positive");
  }
  if (!(options.epsilon >= 0.0 && options.epsilon <= 1.0)) {
    throw ConfigError("teacher.epsilon must lie in [0, 1]");
  }
  Environment env(spec);
  const int k = spec.action_vocab_size;
  TeacherPolicy::QTable q;
  TeacherPolicy::VisitTable visits;
  Rng rng = Rng::Derive(options.seed, {StreamId(Stream::kTeacher)});

  for (int episode = 0; episode < options.episodes; ++episode) {
    EnvState s = env.Reset(rng.NextU64());
    while (!s.terminal) {
      const std::int64_t key = env.StateKey(s);
      auto [it, inserted] = q.try_emplace(key, std::vector<double>(k, 0.0));
      ++visits[key];
      int a;
      if (rng.Uniform() < options.epsilon) {
        a = rng.UniformInt(k);
      } else {
        a = GreedyRandomTie(it->second, rng);
      }
      const EnvState next = env.Step(s, {a}, rng);
      double target = next.succeeded ? options.goal_reward : 0.0;
      if (!next.succeeded) {
        auto nit = q.find(env.StateKey(next));
        if (nit != q.end()) {
          target += options.discount *
                    *std::max_element(nit->second.begin(), nit->second.end());
        }
      }
      // `it` stays valid: std::map iterators survive insertion.
      it->second[a] += options.learning_rate * (target - it->second[a]);
      s = next;
    }
  }

  TeacherPolicy teacher(spec, std::move(q), std::move(visits),
                        options.temperature, options.label_floor);
  const double rate =
      TeacherSuccessRate(teacher, options.eval_episodes, options.seed);
  if (rate < options.min_success) {
    std::ostringstream os;
    os << "teacher under-trained: greedy success " << rate << " < "
       << options.min_success << " after " << options.episodes
       << " episodes";
    throw TeacherQualityError(os.str(), rate);
  }
  return teacher;
}

double TeacherSuccessRate(const TeacherPolicy& teacher, int episodes,
                          std::uint64_t seed, const std::vector<int>& tasks) {
  if (episodes < 1) throw UsageError("evaluation needs at least one episode");
  Environment env(teacher.spec());
  Rng rng = Rng::Derive(seed, {StreamId(Stream::kEval), 0x7eac4e7});
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    std::optional<int> task;
    if (!tasks.empty()) task = tasks[e % tasks.size()];
    EnvState s = env.Reset(rng.NextU64(), task);
    while (!s.terminal) s = env.Step(s, teacher.GreedyAction(s), rng);
    successes += s.succeeded;
  }
  return static_cast<double>(successes) / episodes;
}

std::vector<EnvState> OodProbeStates(const EnvSpec& spec,
                                     const TeacherPolicy& teacher,
                                     double threshold,
                                     const std::vector<int>& tasks) {
  Environment env(spec);
  std::vector<EnvState> all =
      tasks.empty() ? env.EnumerateStates() : env.EnumerateStates(tasks);
  std::vector<EnvState> out;
  for (EnvState& s : all) {
    if (Entropy(teacher.Label(s)) > threshold) out.push_back(std::move(s));
  }
  return out;
}

void SaveTeacher(const std::filesystem::path& path,
                 const TeacherPolicy& teacher) {
  std::ostringstream os;
  os << kTeacherMagic << "\n";
  os << "spec_hash " << FormatHex64(SpecHash(teacher.spec())) << "\n";
  os << "temperature " << FormatDouble(teacher.temperature()) << "\n";
  os << "label_floor " << FormatDouble(teacher.label_floor()) << "\n";
  for (const auto& [key, row] : teacher.q_table()) {
    auto vit = teacher.visit_counts().find(key);
    os << "row " << key << " "
       << (vit == teacher.visit_counts().end() ? 0 : vit->second);
    for (double v : row) os << " " << FormatDouble(v);
    os << "\n";
  }
  WriteFile(path, os.str());
}

TeacherPolicy LoadTeacher(const std::filesystem::path& path,
                          const EnvSpec& expected_spec) {
  std::istringstream in(ReadFile(path));
  std::string line;
  std::getline(in, line);
  if (Trim(line) != kTeacherMagic) {
    throw IoError("'" + path.string() + "' is not a teacher checkpoint");
  }
  std::uint64_t hash = 0;
  double temperature = 0.0;
  double label_floor = 0.0;
  TeacherPolicy::QTable q;
  TeacherPolicy::VisitTable visits;
  while (std::getline(in, line)) {
    const auto tok = SplitWhitespace(line);
    if (tok.empty()) continue;
    if (tok[0] == "spec_hash" && tok.size() == 2) {
      hash = ParseHex64(tok[1], "spec_hash");
    } else if (tok[0] == "temperature" && tok.size() == 2) {
      temperature = ParseDouble(tok[1], "temperature");
    } else if (tok[0] == "label_floor" && tok.size() == 2) {
      label_floor = ParseDouble(tok[1], "label_floor");
    } else if (tok[0] == "row" && tok.size() >= 3) {
      const std::int64_t key = ParseInt(tok[1], "row key");
      const auto count = static_cast<std::uint64_t>(ParseInt(tok[2], "visits"));
      std::vector<double> row;
      for (std::size_t i = 3; i < tok.size(); ++i) {
        row.push_back(ParseDouble(tok[i], "q value"));
      }
      q[key] = std::move(row);
      if (count > 0) visits[key] = count;
    } else {
      throw IoError("malformed teacher checkpoint line: " + line);
    }
  }
  if (hash != SpecHash(expected_spec)) {
    throw ConfigError("teacher checkpoint spec hash " + FormatHex64(hash) +
                      " does not match environment " +
                      FormatHex64(SpecHash(expected_spec)));
  }
  return TeacherPolicy(expected_spec, std::move(q), std::move(visits),
                       temperature, label_floor);
}

}  // namespace opd
