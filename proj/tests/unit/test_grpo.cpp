#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dualcog/codec.hpp"
#include "dualcog/errors.hpp"
#include "dualcog/grpo.hpp"
#include "dualcog/optim.hpp"
#include "dualcog/rng.hpp"
#include "helpers.hpp"

using namespace dualcog;

namespace {

PolicyParams tabular(int vocab, double scale = 0.0, std::uint64_t seed = 0) {
  PolicyConfig c;
  c.kind = PolicyKind::kTabular;
  c.vocab_size = vocab;
  c.window = 1;
  c.context_length = 32;
  return init_params(c, seed, scale);
}

// One single-token trajectory whose ratio against the rollout policy is r.
std::vector<RolloutGroup> single(const PolicyParams& p, double r, double advantage) {
  RolloutGroup g;
  g.x = {0};
  RolloutTrajectory t;
  t.tokens = {3};
  const double lp = logprobs(p, g.x, t.tokens)[0];
  t.old_logprobs = {lp - std::log(r)};
  t.ref_logprobs = {lp};
  g.trajectories.push_back(t);
  g.advantages = {advantage};
  return {g};
}

double l2_distance(const PolicyParams& a, const PolicyParams& b) {
  double s = 0.0;
  for (const auto& [name, t] : a.tensors) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) s += (t.data[i] - u.data[i]) * (t.data[i] - u.data[i]);
  }
  return std::sqrt(s);
}

double max_abs_diff(const PolicyParams& a, const PolicyParams& b) {
  double m = 0.0;
  for (const auto& [name, t] : a.tensors) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t.data[i] - u.data[i]));
  }
  return m;
}

std::vector<RlPrompt> prompts(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RlPrompt> out;
  for (int i = 0; i < n; ++i) {
    RlPrompt p;
    p.id = "p" + std::to_string(i);
    p.x = {0};
    for (int k = 0; k < 3; ++k) p.x.push_back(3 + static_cast<TokenId>(rng.below(vocab - 3)));
    p.d_golden = {4, 5};
    out.push_back(p);
  }
  return out;
}

// Reward counts occurrences of one token; gives advantages a real signal
// without going through the format parser.
void count_rewards(std::vector<RolloutGroup>& groups, TokenId tok) {
  for (auto& g : groups) {
    for (auto& t : g.trajectories) {
      double c = 0;
      for (TokenId x : t.tokens) c += x == tok;
      t.reward.combined = c;
    }
  }
}

}  // namespace

TEST_CASE("advantage oracles") {
  const std::vector<double> r{1.0, 2.0, 3.0};
  const auto a = compute_advantages(r);
  const double expect = 1.0 / std::sqrt(2.0 / 3.0);
  CHECK(std::abs(a[0] + expect) < 1e-12);
  CHECK(a[1] == 0.0);
  CHECK(std::abs(a[2] - expect) < 1e-12);
  CHECK(std::abs(a[2] - 1.224745) < 1e-6);

  CHECK(compute_advantages(std::vector<double>{0.4, 0.4, 0.4, 0.4}) ==
        std::vector<double>(4, 0.0));
  CHECK(compute_advantages(std::vector<double>{1.0, 1.0 + 1e-10}) == std::vector<double>(2, 0.0));
  CHECK_THROWS_AS(compute_advantages(std::vector<double>{1.0}), PreconditionError);

  const std::vector<double> shifted{101.0, 102.0, 103.0};
  const auto b = compute_advantages(shifted);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("k3 estimator values") {
  const std::vector<double> theta{std::log(0.5), std::log(0.3)};
  const std::vector<double> ref{std::log(0.25), std::log(0.3)};
  const auto k = per_token_kl(theta, ref);
  // ratio 1/2: 0.5 - ln 0.5 - 1
  CHECK(std::abs(k[0] - (std::log(2.0) - 0.5)) < 1e-12);
  CHECK(std::abs(k[0] - 0.193147) < 1e-6);
  CHECK(k[1] == 0.0);
  // ratio 2: 2 - ln 2 - 1
  const auto k2 = per_token_kl(std::vector<double>{std::log(0.25)}, std::vector<double>{std::log(0.5)});
  CHECK(std::abs(k2[0] - (1.0 - std::log(2.0))) < 1e-12);
  CHECK(std::abs(k2[0] - 0.306853) < 1e-6);
  CHECK_THROWS_AS(per_token_kl(theta, std::vector<double>{0.0}), PreconditionError);
}

TEST_CASE("clipped surrogate examples") {
  const auto p = tabular(5);
  GrpoConfig c;
  c.kl_beta = 0.0;
  // r = 1.5, A = +1: min(1.5, 1.2) = 1.2.
  auto g = single(p, 1.5, 1.0);
  CHECK(std::abs(grpo_loss(p, g, p, c) + 1.2) < 1e-12);
  // r = 0.5, A = -1: min(-0.5, -0.8) = -0.8.
  g = single(p, 0.5, -1.0);
  CHECK(std::abs(grpo_loss(p, g, p, c) - 0.8) < 1e-12);
  // Inside the band the ratio passes through.
  g = single(p, 1.1, 2.0);
  CHECK(std::abs(grpo_loss(p, g, p, c) + 2.2) < 1e-12);
  // Clipped side carries no gradient.
  g = single(p, 1.5, 1.0);
  const auto lg = grpo_loss_and_grad(p, g, p, c);
  for (double v : lg.grads.at("table").data) CHECK(v == 0.0);
}

TEST_CASE("loss is zero at the fixpoint") {
  const auto p = tabular(5, 1.0, 4);
  GrpoConfig c;
  c.kl_beta = 0.5;
  auto g = single(p, 1.0, 0.0);
  const auto lg = grpo_loss_and_grad(p, g, p, c);
  CHECK(lg.loss == 0.0);
  for (double v : lg.grads.at("table").data) CHECK(v == 0.0);
}

TEST_CASE("grpo loss gradient agrees with finite differences") {
  const auto old = snapshot(testing::tiny_transformer(9, 31));
  const auto ref = snapshot(testing::tiny_transformer(9, 32));
  auto theta = testing::tiny_transformer(9, 31);
  Rng rng(5);
  for (auto& [_, t] : theta.tensors) {
    for (double& v : t.data) v += 0.05 * rng.normal();
  }
  GrpoConfig c;
  c.group_size = 3;
  c.max_new_tokens = 4;
  c.kl_beta = 0.3;
  c.clip_epsilon = 0.1;
  c.seed = 2;
  const auto ps = prompts(2, 9, 7);
  auto groups = rollout(old, ps, c);
  for (auto& g : groups) {
    g.advantages.clear();
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) g.advantages.push_back(rng.normal());
  }
  const auto lg = grpo_loss_and_grad(theta, groups, ref, c);
  const auto report = testing::finite_difference_check(
      theta, [&](const PolicyParams& q) { return grpo_loss(q, groups, ref, c); }, lg.grads);
  CHECK(report.checked == theta.parameter_count());
  CHECK(report.max_rel < 1e-4);
  CHECK(report.max_abs_small < 1e-8);
  // Serial and parallel execution agree bitwise.
  const auto serial = grpo_loss_and_grad(theta, groups, ref, c, Exec::kSerial);
  CHECK(serial.loss == lg.loss);
  CHECK(serial.grads == lg.grads);
}

TEST_CASE("the reference stays frozen") {
  const auto ref = snapshot(testing::tiny_transformer(9, 1));
  const auto keep = ref;
  auto theta = testing::tiny_transformer(9, 1);
  GrpoConfig c;
  c.group_size = 2;
  c.max_new_tokens = 3;
  auto groups = rollout(ref, prompts(1, 9, 1), c);
  groups[0].advantages = {1.0, -1.0};
  const auto lg = grpo_loss_and_grad(theta, groups, ref, c);
  CHECK(lg.grads.size() == theta.tensors.size());
  CHECK(ref == keep);
  CHECK(ref.frozen);
  // Frozen parameters yield no gradients at all.
  CHECK(grpo_loss_and_grad(ref, groups, ref, c).grads.empty());
  CHECK_THROWS_AS(rollout(theta, prompts(1, 9, 1), c), PreconditionError);
}

TEST_CASE("rollouts: counts and determinism") {
  const auto p = snapshot(testing::tiny_transformer(10, 3));
  GrpoConfig c;
  c.group_size = 4;
  c.max_new_tokens = 6;
  c.seed = 11;
  const auto ps = prompts(3, 10, 2);
  const auto a = rollout(p, ps, c, 0);
  REQUIRE(a.size() == 3);
  std::size_t total = 0;
  for (const auto& g : a) {
    CHECK(g.trajectories.size() == 4);
    total += g.trajectories.size();
    for (const auto& t : g.trajectories) {
      CHECK(t.old_logprobs.size() == t.tokens.size());
      CHECK_FALSE(t.tokens.empty());
      CHECK(static_cast<int>(t.tokens.size()) <= c.max_new_tokens);
    }
  }
  CHECK(total == 12);
  const auto b = rollout(p, ps, c, 0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(a[i].trajectories[j].tokens == b[i].trajectories[j].tokens);
      CHECK(a[i].trajectories[j].old_logprobs == b[i].trajectories[j].old_logprobs);
    }
  const auto other = rollout(p, ps, c, 1);
  bool differs = false;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      differs = differs || other[i].trajectories[j].tokens != a[i].trajectories[j].tokens;
  CHECK(differs);
}

TEST_CASE("group modes") {
  std::vector<RolloutGroup> groups(2);
  const std::vector<std::vector<double>> rewards{{1.0, 2.0, 3.0}, {10.0, 10.0, 13.0}};
  for (int i = 0; i < 2; ++i) {
    for (double r : rewards[i]) {
      RolloutTrajectory t;
      t.reward.combined = r;
      groups[i].trajectories.push_back(t);
    }
  }
  assign_advantages(groups, GroupMode::kPerPrompt);
  CHECK(groups[0].advantages == compute_advantages(rewards[0]));
  CHECK(groups[1].advantages == compute_advantages(rewards[1]));

  assign_advantages(groups, GroupMode::kMinibatch);
  const auto all = compute_advantages(std::vector<double>{1, 2, 3, 10, 10, 13});
  CHECK(groups[0].advantages == std::vector<double>(all.begin(), all.begin() + 3));
  CHECK(groups[1].advantages == std::vector<double>(all.begin() + 3, all.end()));
  for (double a : groups[0].advantages) CHECK(a < 0.0);
}

TEST_CASE("kl term anchors the policy") {
  auto drift = [](double beta) {
    const auto ref = snapshot(testing::tiny_transformer(8, 9));
    PolicyParams theta = testing::tiny_transformer(8, 9);
    GrpoConfig c;
    c.group_size = 6;
    c.max_new_tokens = 5;
    c.kl_beta = beta;
    c.seed = 3;
    AdamConfig ac;
    ac.learning_rate = 2e-2;
    Adam adam(ac);
    const auto ps = prompts(2, 8, 4);
    for (int step = 0; step < 20; ++step) {
      auto groups = rollout(snapshot(theta), ps, c, static_cast<std::uint64_t>(step));
      count_rewards(groups, 5);
      assign_advantages(groups, GroupMode::kPerPrompt);
      adam.step(theta, grpo_loss_and_grad(theta, groups, ref, c).grads);
    }
    return max_abs_diff(theta, ref);
  };
  const double free = drift(0.0);
  const double anchored = drift(10.0);
  CHECK(free > 0.0);
  CHECK(anchored < free);
}

TEST_CASE("training with a flat reward leaves the policy unchanged") {
  const std::vector<std::string> texts{"alpha beta gamma", "delta"};
  const Vocabulary vocab = build_vocabulary(texts, default_reserved());
  const auto sft = testing::tiny_transformer(static_cast<int>(vocab.size()), 6);
  GrpoConfig c;
  c.group_size = 4;
  c.steps = 3;
  c.batch_prompts = 2;
  c.max_new_tokens = 5;
  c.seed = 1;
  const auto ps = prompts(3, static_cast<int>(vocab.size()), 9);
  int seen = 0;
  const GrpoResult r = grpo_train(sft, ps, vocab, c, [&](const GrpoStepMetrics& m, const PolicyParams&) {
    CHECK(m.step == seen++);
  });
  // Random policies never produce a parseable trace, so every reward is zero.
  REQUIRE(r.history.size() == 3);
  for (const auto& m : r.history) {
    CHECK(m.format_fail_rate == 1.0);
    CHECK(m.mean_reward == 0.0);
  }
  CHECK(l2_distance(r.params, sft) < 1e-9);

  const GrpoResult again = grpo_train(sft, ps, vocab, c);
  CHECK(again.params == r.params);
  CHECK(again.history.size() == r.history.size());
}

TEST_CASE("grpo presets and config parsing") {
  const auto paper = GrpoConfig::for_preset(Preset::kPaperFaithful);
  CHECK(paper.group_size == 16);
  CHECK(paper.clip_epsilon == 0.2);
  CHECK(paper.kl_beta == 0.001);
  CHECK(paper.learning_rate == 4e-7);
  CHECK(paper.steps == 120);
  CHECK(paper.temperature == 0.7);
  const auto desk = GrpoConfig::for_preset(Preset::kDesk);
  CHECK(GrpoConfig::from_json(desk.to_json(), paper) == desk);
  CHECK(GrpoConfig::from_json({{"group_mode", "minibatch"}}, desk).group_mode == GroupMode::kMinibatch);
  CHECK_THROWS_AS(GrpoConfig::from_json({{"group_mode", "global"}}, desk), ConfigError);
  CHECK_THROWS_AS(GrpoConfig::from_json({{"group_size", 1}}, desk), ConfigError);
  CHECK_THROWS_AS(GrpoConfig::from_json({{"clip_epsilon", 1.5}}, desk), ConfigError);
  CHECK_THROWS_AS(GrpoConfig::from_json({{"lambda_iclg", 0.0}, {"lambda_lsa", 0.0}}, desk),
                  ConfigError);
}

TEST_CASE("metrics jsonl") {
  const auto path = std::filesystem::temp_directory_path() / "dualcog_grpo_metrics.jsonl";
  GrpoStepMetrics a;
  a.step = 0;
  a.mean_reward = 0.5;
  GrpoStepMetrics b = a;
  b.step = 1;
  write_metrics_jsonl(path, std::vector<GrpoStepMetrics>{a, b});
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == n);
    CHECK(j.contains("mean_kl"));
    ++n;
  }
  CHECK(n == 2);
}
