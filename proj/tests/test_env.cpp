#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "cfrl/env/dataset.hpp"

namespace cfrl::env {
namespace {

// Independent restatement of the classic two-action cart-pole recurrence
// (gym constants), used as the oracle for the simulator.
std::array<double, 4> classic_step(const std::array<double, 4>& s, bool push_right) {
  const double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5, tau = 0.02;
  const double f = push_right ? 10.0 : -10.0;
  const auto [x, xd, th, thd] = s;
  const double ct = std::cos(th), st = std::sin(th);
  const double tmp = (f + mp * l * thd * thd * st) / (mc + mp);
  const double thacc = (g * st - ct * tmp) / (l * (4.0 / 3.0 - mp * ct * ct / (mc + mp)));
  const double xacc = tmp - mp * l * thacc * ct / (mc + mp);
  return {x + tau * xd, xd + tau * xacc, th + tau * thd, thd + tau * thacc};
}

EnvConfig noiseless() {
  EnvConfig cfg;
  cfg.noise_frac = 0.0;
  return cfg;
}

TEST(CartPole, MidpointActionAppliesNoForce) {
  EXPECT_EQ(force_of(0.5, EnvConfig{}), 0.0);
  EXPECT_EQ(force_of(0.0, EnvConfig{}), -10.0);
  EXPECT_EQ(force_of(1.0, EnvConfig{}), 10.0);
}

TEST(CartPole, FullRightPushFromRestMatchesHandComputedEulerStep) {
  // From rest with F = 10: temp = 100/11, theta_acc = -600/41, x_acc = 4400/451.
  Rng rng(0);
  const auto r = step(CartState{}, 1.0, noiseless(), rng);
  EXPECT_DOUBLE_EQ(r.next.x, 0.0);
  EXPECT_NEAR(r.next.x_dot, 0.02 * 4400.0 / 451.0, 1e-15);
  EXPECT_DOUBLE_EQ(r.next.theta, 0.0);
  EXPECT_NEAR(r.next.theta_dot, -0.02 * 600.0 / 41.0, 1e-15);
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_FALSE(r.done);
}

TEST(CartPole, TwoLevelNoiselessTrajectoryMatchesClassicRecurrence) {
  EnvConfig cfg = noiseless();
  cfg.action_levels = 2;
  Rng rng(3), policy_rng(4);
  CartState s = initial_state(rng);
  auto oracle = s.to_array();
  for (int t = 0; t < 200; ++t) {
    const bool right = uniform_index(policy_rng, 2) == 1;
    const auto r = step(s, right ? 1.0 : 0.0, cfg, rng);
    oracle = classic_step(oracle, right);
    for (std::size_t j = 0; j < 4; ++j) ASSERT_NEAR(r.next.to_array()[j], oracle[j], 1e-12) << "t=" << t;
    if (r.done) break;
    s = r.next;
  }
}

TEST(CartPole, SeededStepIsDeterministic) {
  const EnvConfig cfg;
  Rng a(42), b(42);
  const CartState s{0.01, -0.02, 0.03, 0.01};
  const auto ra = step(s, 0.3, cfg, a);
  const auto rb = step(s, 0.3, cfg, b);
  EXPECT_EQ(ra.next, rb.next);
  EXPECT_EQ(ra.noise.force, rb.noise.force);
}

TEST(CartPole, SteppingTerminalStateFails) {
  Rng rng(1);
  const CartState fallen{0.0, 0.0, 0.5, 0.0};
  try {
    step(fallen, 0.5, EnvConfig{}, rng);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_STREQ(e.what(), "episode finished");
  }
}

TEST(CartPole, OffGridActionRejected) {
  Rng rng(1);
  EXPECT_THROW(step(CartState{}, 0.55, EnvConfig{}, rng), PreconditionError);
}

TEST(CartPole, InvalidConfigRejected) {
  EnvConfig cfg;
  cfg.gravity = 0.0;
  EXPECT_THROW(cfg.validate(), PreconditionError);
  cfg = EnvConfig{};
  cfg.noise_frac = 1.0;
  EXPECT_THROW(cfg.validate(), PreconditionError);
  cfg = EnvConfig{};
  cfg.action_levels = 1;
  EXPECT_THROW(cfg.validate(), PreconditionError);
}

TEST(CartPole, NoiseIsMultiplicativeOnForceAndState) {
  const EnvConfig cfg;
  const CartState s{0.1, 0.2, 0.03, -0.1};
  StepNoise n;
  n.force = 0.1;
  n.state = {0.01, -0.02, 0.03, 0.04};
  const auto base = euler_step(s, 0.8, cfg, 0.1).to_array();
  const auto noisy = step_with_noise(s, 0.8, cfg, n).to_array();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(noisy[j], base[j] * (1 + n.state[j]));
  // A 10% force perturbation equals the noiseless step at 1.1x force magnitude.
  EnvConfig strong = cfg;
  strong.force_mag *= 1.1;
  EXPECT_NEAR(euler_step(s, 0.8, cfg, 0.1).x_dot, euler_step(s, 0.8, strong).x_dot, 1e-15);
}

TEST(Trials, SingleTrialSingleStepGivesOneTransition) {
  EnvConfig cfg;
  cfg.max_steps = 1;
  const auto data = generate_trials(cfg, 1, uniform_random_policy(11), 5);
  ASSERT_EQ(data.size(), 1u);
  EXPECT_EQ(data[0].provenance, Provenance::Observed);
  EXPECT_TRUE(is_action_level(data[0].a, 11));
}

TEST(Trials, RewardSumEqualsStepsTakenAndTrialsAreAtMostTwentySteps) {
  const auto data = generate_trials(EnvConfig{}, 30, uniform_random_policy(11), 9);
  std::map<int, int> steps;
  std::map<int, double> reward;
  for (const auto& tr : data) {
    ++steps[tr.trial_id];
    reward[tr.trial_id] += tr.r;
    EXPECT_EQ(tr.provenance, Provenance::Observed);
  }
  EXPECT_EQ(steps.size(), 30u);
  for (const auto& [trial, n] : steps) {
    EXPECT_LE(n, 20);
    EXPECT_EQ(reward[trial], n);
  }
}

TEST(Trials, InitiallyTerminalStateRefusesToStep) {
  EnvConfig cfg;
  cfg.theta_threshold = 0.0;  // any nonzero angle is already terminal
  EXPECT_THROW(generate_trials(cfg, 1, uniform_random_policy(11), 3), PreconditionError);
}

TEST(Trials, SimpleDatasetSlicesIntoNestedSubsets) {
  const auto sd = generate_trials(EnvConfig{}, 250, uniform_random_policy(11), 11);
  std::size_t previous = 0;
  for (int n : {50, 100, 150, 200, 250}) {
    const auto subset = first_trials(sd, n);
    std::set<int> trials;
    for (const auto& tr : subset) trials.insert(tr.trial_id);
    EXPECT_EQ(trials.size(), static_cast<std::size_t>(n));
    EXPECT_GT(subset.size(), previous);
    previous = subset.size();
  }
  EXPECT_EQ(first_trials(sd, 250).size(), sd.size());
}

TEST(Trials, HybridDatasetHasFiftyTrialsPerGravity) {
  const auto hd = generate_hybrid(EnvConfig{}, {kHybridGravities.begin(), kHybridGravities.end()}, 50, 2);
  std::map<int, std::set<int>> trials_per_group;
  for (const auto& tr : hd) trials_per_group[group_of_subject(tr.subject_id)].insert(tr.trial_id);
  ASSERT_EQ(trials_per_group.size(), 5u);
  for (const auto& [g, trials] : trials_per_group) EXPECT_EQ(trials.size(), 50u);
}

TEST(Trials, SameConfigAndSeedGiveByteIdenticalFiles) {
  const auto a = to_jsonl(generate_trials(EnvConfig{}, 20, uniform_random_policy(11), 77));
  const auto b = to_jsonl(generate_trials(EnvConfig{}, 20, uniform_random_policy(11), 77));
  const auto c = to_jsonl(generate_trials(EnvConfig{}, 20, uniform_random_policy(11), 78));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Dataset, JsonlRoundTrip) {
  const auto data = generate_trials(EnvConfig{}, 3, uniform_random_policy(11), 1);
  const auto path = (std::filesystem::temp_directory_path() / "cfrl_env_roundtrip.jsonl").string();
  write_jsonl(path, data);
  EXPECT_EQ(read_jsonl(path), data);
  std::filesystem::remove(path);
}

TEST(Dataset, CorruptLineReportsLocation) {
  const auto path = (std::filesystem::temp_directory_path() / "cfrl_env_corrupt.jsonl").string();
  {
    std::ofstream out(path);
    out << "{\"record_id\": 0}\n";
  }
  try {
    read_jsonl(path);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
  }
  std::filesystem::remove(path);
}

Dataset straight_trial(int length) {
  Dataset d;
  for (int t = 0; t < length; ++t) {
    Transition tr;
    tr.record_id = t;
    tr.t = t;
    tr.s = {static_cast<double>(t)};
    tr.s_next = {static_cast<double>(t + 1)};
    d.push_back(tr);
  }
  return d;
}

TEST(Window, TwentyStepsWithTauFiveGiveSixteenWindows) {
  EXPECT_EQ(window(straight_trial(20), 5).size(), 16u);
}

TEST(Window, TauEqualToLengthGivesOneWindow) { EXPECT_EQ(window(straight_trial(5), 5).size(), 1u); }

TEST(Window, TauLongerThanTrialGivesNothing) { EXPECT_TRUE(window(straight_trial(4), 5).empty()); }

TEST(Window, FirstTripletsReproduceSequencePrefixInOrder) {
  const auto data = straight_trial(20);
  const auto windows = window(data, 5);
  for (std::size_t k = 0; k < windows.size(); ++k) {
    EXPECT_EQ(windows[k].steps.front(), data[k]);
    for (std::size_t i = 1; i < windows[k].steps.size(); ++i) {
      EXPECT_EQ(windows[k].steps[i].t, windows[k].steps[i - 1].t + 1);
    }
  }
}

TEST(Window, InvalidTauRejected) { EXPECT_THROW(window(straight_trial(3), 0), PreconditionError); }

}  // namespace
}  // namespace cfrl::env
