#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "opd/errors.hpp"
#include "opd/teacher.hpp"
#include "test_support.hpp"

using namespace opd;
using opd::test::SmallGrid;

namespace {

TeacherTrainOptions FastOptions(std::uint64_t seed) {
  TeacherTrainOptions o;
  o.episodes = 20000;
  o.seed = seed;
  return o;
}

// Teacher with one hand-written Q-row at `state`.
TeacherPolicy OneRowTeacher(const Environment& env, const EnvState& state,
                            std::vector<double> row, double temperature,
                            double floor) {
  TeacherPolicy::QTable q;
  q[env.StateKey(state)] = std::move(row);
  return TeacherPolicy(env.spec(), q, {}, temperature, floor);
}

}  // namespace

TEST_CASE("trained gridnav teacher is near perfect when greedy") {
  const TeacherPolicy t = TrainTeacher(SmallGrid(), FastOptions(1));
  CHECK(TeacherSuccessRate(t, 500, 1) >= 0.95);
}

TEST_CASE("zero episodes is a configuration error") {
  TeacherTrainOptions o = FastOptions(1);
  o.episodes = 0;
  CHECK_THROWS_AS(TrainTeacher(SmallGrid(), o), ConfigError);
}

TEST_CASE("an unreachable quality bar raises TeacherQualityError") {
  TeacherTrainOptions o = FastOptions(1);
  o.episodes = 1;
  try {
    TrainTeacher(SmallGrid(), o);
    FAIL("expected TeacherQualityError");
  } catch (const TeacherQualityError& e) {
    CHECK(e.measured_rate() < o.min_success);
  }
}

TEST_CASE("unvisited states get uniform labels") {
  const Environment env(SmallGrid());
  const TeacherPolicy t(env.spec(), {}, {}, 0.5, 0.05);
  const CategoricalDist d = t.Label(env.MakeState({1, 1}));
  CHECK(Entropy(d) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(t.LogProb(env.MakeState({1, 1}), ActionToken{3}) ==
        doctest::Approx(-std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("sharp Q-row gives a near point mass without a floor") {
  const Environment env(SmallGrid());
  const EnvState s = env.MakeState({2, 2});
  const TeacherPolicy t = OneRowTeacher(env, s, {1, 0, 0, 0, 0}, 0.1, 0.0);
  // Oracle: e^10 / (e^10 + 4).
  const double oracle = std::exp(10.0) / (std::exp(10.0) + 4.0);
  const CategoricalDist d = t.Label(s);
  CHECK(d.probs[0] == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(d.probs[0] == doctest::Approx(0.99982).epsilon(1e-5));
  CHECK(t.LogProb(s, ActionToken{0}) > -1e-3);
}

TEST_CASE("the label floor mixes in a uniform share") {
  const Environment env(SmallGrid());
  const EnvState s = env.MakeState({2, 2});
  const TeacherPolicy t = OneRowTeacher(env, s, {50, 0, 0, 0, 0}, 1.0, 0.05);
  const CategoricalDist d = t.Label(s);
  CHECK(d.probs[1] == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(d.probs[0] == doctest::Approx(0.96).epsilon(1e-9));
  CHECK_THROWS_AS(TeacherPolicy(env.spec(), {}, {}, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(TeacherPolicy(env.spec(), {}, {}, 0.0, 0.0), ConfigError);
}

TEST_CASE("labels are pure and log-probs agree with them") {
  const TeacherPolicy t = TrainTeacher(SmallGrid(), FastOptions(2));
  const Environment env(t.spec());
  const std::uint64_t before = t.Hash();
  for (const EnvState& s : env.EnumerateStates()) {
    const CategoricalDist a = t.Label(s);
    const CategoricalDist b = t.Label(s);
    CHECK(a.probs == b.probs);
    for (int k = 0; k < 5; ++k) {
      CHECK(std::abs(std::exp(t.LogProb(s, ActionToken{k})) - a.probs[k]) <=
            1e-12);
    }
  }
  CHECK(t.Hash() == before);
}

TEST_CASE("temperature changes labels but not the table") {
  const TeacherPolicy t = TrainTeacher(SmallGrid(), FastOptions(3));
  const TeacherPolicy warm = t.WithTemperature(2.0);
  CHECK(warm.temperature() == 2.0);
  CHECK(warm.q_table() == t.q_table());
  const Environment env(t.spec());
  const EnvState s = env.Reset(3);
  CHECK(Entropy(warm.Label(s)) >= Entropy(t.Label(s)));
}

TEST_CASE("ood probe thresholds") {
  const TeacherPolicy t = TrainTeacher(SmallGrid(), FastOptions(4));
  const Environment env(t.spec());
  CHECK(OodProbeStates(t.spec(), t, -1.0).size() == env.EnumerateStates().size());
  for (const EnvState& s : OodProbeStates(t.spec(), t, std::log(5.0) - 1e-12)) {
    CHECK(Entropy(t.Label(s)) == doctest::Approx(std::log(5.0)).epsilon(1e-9));
  }
  CHECK(OodProbeStates(t.spec(), t, std::log(5.0) + 1e-9).empty());
}

TEST_CASE("corridor teacher: high-threshold probes are the unvisited cells") {
  // Oracle: enumerate the visitation table and label entropies directly.
  EnvSpec spec = SmallGrid(EnvId::kGridNav, 9, 30);
  TeacherTrainOptions o = FastOptions(5);
  o.epsilon = 0.0;
  o.episodes = 3000;
  o.min_success = 0.0;
  const TeacherPolicy t = TrainTeacher(spec, o);
  const Environment env(spec);
  const double threshold = 0.9 * std::log(5.0);
  std::vector<std::int64_t> expected;
  for (const EnvState& s : env.EnumerateStates()) {
    if (t.VisitCount(s) == 0) expected.push_back(env.StateKey(s));
  }
  std::vector<std::int64_t> probes;
  for (const EnvState& s : OodProbeStates(spec, t, threshold)) {
    probes.push_back(env.StateKey(s));
  }
  CHECK(!expected.empty());
  // Every unvisited cell is a probe; visited cells only when still near
  // uniform.
  for (std::int64_t k : expected) {
    CHECK(std::find(probes.begin(), probes.end(), k) != probes.end());
  }
  CHECK(probes.size() >= expected.size());
}

TEST_CASE("teacher checkpoints round-trip and reject other specs") {
  const TeacherPolicy t = TrainTeacher(SmallGrid(), FastOptions(6));
  const auto path =
      std::filesystem::temp_directory_path() / "opd_teacher_roundtrip.txt";
  SaveTeacher(path, t);
  const TeacherPolicy back = LoadTeacher(path, t.spec());
  CHECK(back.Hash() == t.Hash());
  CHECK(back.q_table() == t.q_table());
  CHECK(back.visit_counts() == t.visit_counts());
  EnvSpec other = t.spec();
  other.grid_size = 6;
  CHECK_THROWS_AS(LoadTeacher(path, other), ConfigError);
  CHECK_THROWS_AS(LoadTeacher(path.string() + ".none", t.spec()), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("multitask teacher succeeds on each task") {
  const EnvSpec spec = SmallGrid(EnvId::kMultiTask, 5, 20, 4);
  const TeacherPolicy t = TrainTeacher(spec, FastOptions(7));
  for (int task = 0; task < 4; ++task) {
    CHECK(TeacherSuccessRate(t, 200, 7, {task}) >= 0.95);
  }
}
