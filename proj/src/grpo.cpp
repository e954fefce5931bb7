#include "dualcog/grpo.hpp"

#include <cmath>
#include <exception>
#include <numeric>
#include <optional>

#include "dualcog/corpus.hpp"
#include "dualcog/errors.hpp"
#include "dualcog/kernels.hpp"
#include "dualcog/optim.hpp"
#include "dualcog/rng.hpp"

namespace dualcog {
namespace {

std::string mode_name(GroupMode m) { return m == GroupMode::kPerPrompt ? "per_prompt" : "minibatch"; }

GroupMode mode_from_name(const std::string& s) {
  if (s == "per_prompt") return GroupMode::kPerPrompt;
  if (s == "minibatch") return GroupMode::kMinibatch;
  throw ConfigError("grpo: unknown group_mode '" + s + "'");
}

// Runs fn over [0, n) in parallel, rethrowing the first failure in index order.
void parallel_checked(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  kernels::parallel_for(n, [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

// ---- config ----------------------------------------------------------------

GrpoConfig GrpoConfig::for_preset(Preset p) {
  GrpoConfig c;
  c.preset = p;
  if (p == Preset::kPaperFaithful) {
    c.group_size = 16;
    c.clip_epsilon = 0.2;
    c.kl_beta = 0.001;
    c.learning_rate = 4e-7;
    c.steps = 120;
    c.temperature = 0.7;
    c.max_new_tokens = 8192;
    c.batch_prompts = 8;
  } else {
    c.group_size = 8;
    c.clip_epsilon = 0.2;
    c.kl_beta = 0.001;
    c.learning_rate = 1e-4;
    c.steps = 200;
    c.temperature = 0.7;
    c.max_new_tokens = 96;
    c.batch_prompts = 4;
  }
  return c;
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo: group_size must be at least 2");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("grpo: clip_epsilon must lie in (0, 1)");
  if (!(kl_beta >= 0.0)) throw ConfigError("grpo: kl_beta must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("grpo: learning_rate must be positive");
  if (steps < 0) throw ConfigError("grpo: steps must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("grpo: temperature must be positive");
  if (max_new_tokens < 1) throw ConfigError("grpo: max_new_tokens must be positive");
  if (batch_prompts < 1) throw ConfigError("grpo: batch_prompts must be positive");
  reward.validate();
}

nlohmann::json GrpoConfig::to_json() const {
  return {{"group_size", group_size},
          {"clip_epsilon", clip_epsilon},
          {"kl_beta", kl_beta},
          {"learning_rate", learning_rate},
          {"steps", steps},
          {"temperature", temperature},
          {"max_new_tokens", max_new_tokens},
          {"batch_prompts", batch_prompts},
          {"group_mode", mode_name(group_mode)},
          {"lambda_iclg", reward.lambda_iclg},
          {"lambda_lsa", reward.lambda_lsa},
          {"log_gain_clamp", reward.log_gain_clamp},
          {"seed", seed},
          {"preset", preset_name(preset)}};
}

GrpoConfig GrpoConfig::from_json(const nlohmann::json& j, GrpoConfig base) {
  try {
    if (j.contains("preset")) {
      const std::uint64_t seed = base.seed;
      const RewardConfig reward = base.reward;
      base = for_preset(preset_from_name(j.at("preset").get<std::string>()));
      base.seed = seed;
      base.reward = reward;
    }
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("group_size", base.group_size);
    take("clip_epsilon", base.clip_epsilon);
    take("kl_beta", base.kl_beta);
    take("learning_rate", base.learning_rate);
    take("steps", base.steps);
    take("temperature", base.temperature);
    take("max_new_tokens", base.max_new_tokens);
    take("batch_prompts", base.batch_prompts);
    take("lambda_iclg", base.reward.lambda_iclg);
    take("lambda_lsa", base.reward.lambda_lsa);
    take("log_gain_clamp", base.reward.log_gain_clamp);
    take("seed", base.seed);
    if (j.contains("group_mode")) base.group_mode = mode_from_name(j.at("group_mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grpo config: ") + e.what());
  }
  base.validate();
  return base;
}

// ---- rollouts and rewards --------------------------------------------------

std::vector<RolloutGroup> rollout(const PolicyParams& policy_old,
                                  std::span<const RlPrompt> prompts, const GrpoConfig& config,
                                  std::uint64_t stream) {
  if (!policy_old.frozen) throw PreconditionError("rollout: policy_old must be a frozen snapshot");
  config.validate();
  const std::size_t g = static_cast<std::size_t>(config.group_size);
  std::vector<RolloutGroup> groups(prompts.size());
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    groups[p].prompt_index = p;
    groups[p].prompt_id = prompts[p].id;
    groups[p].x = prompts[p].x;
    groups[p].d_golden = prompts[p].d_golden;
    groups[p].trajectories.resize(g);
  }
  parallel_checked(prompts.size() * g, [&](std::size_t k) {
    const std::size_t p = k / g;
    const std::size_t j = k % g;
    SampleOptions o;
    o.temperature = config.temperature;
    o.max_new = config.max_new_tokens;
    o.seed = derive_seed(config.seed, {stream, p, j});
    SampleResult s = sample_with_logprobs(policy_old, prompts[p].x, o);
    groups[p].trajectories[j].tokens = std::move(s.tokens);
    groups[p].trajectories[j].old_logprobs = std::move(s.logprobs);
  });
  return groups;
}

void score_rollouts(std::vector<RolloutGroup>& groups, const Vocabulary& vocab,
                    const PolicyParams& rollout_snapshot, const PolicyParams& ref,
                    const RewardConfig& reward) {
  std::vector<std::optional<RewardScorer>> scorers(groups.size());
  parallel_checked(groups.size(), [&](std::size_t p) {
    scorers[p].emplace(vocab, rollout_snapshot, ref, reward, groups[p].x, groups[p].d_golden);
  });
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t p = 0; p < groups.size(); ++p) {
    for (std::size_t j = 0; j < groups[p].trajectories.size(); ++j) jobs.emplace_back(p, j);
  }
  parallel_checked(jobs.size(), [&](std::size_t k) {
    auto [p, j] = jobs[k];
    RolloutTrajectory& t = groups[p].trajectories[j];
    t.reward = scorers[p]->score_tokens(t.tokens);
  });
}

std::vector<double> compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw PreconditionError("compute_advantages: need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double sd = std::sqrt(var);
  std::vector<double> out(rewards.size(), 0.0);
  if (!(sd > 1e-8)) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

void assign_advantages(std::vector<RolloutGroup>& groups, GroupMode mode) {
  if (mode == GroupMode::kPerPrompt) {
    for (RolloutGroup& g : groups) {
      std::vector<double> r;
      for (const auto& t : g.trajectories) r.push_back(t.reward.combined);
      g.advantages = compute_advantages(r);
    }
    return;
  }
  std::vector<double> r;
  for (const RolloutGroup& g : groups) {
    for (const auto& t : g.trajectories) r.push_back(t.reward.combined);
  }
  const std::vector<double> a = compute_advantages(r);
  std::size_t k = 0;
  for (RolloutGroup& g : groups) {
    g.advantages.assign(a.begin() + static_cast<long>(k),
                        a.begin() + static_cast<long>(k + g.trajectories.size()));
    k += g.trajectories.size();
  }
}

std::vector<double> per_token_kl(std::span<const double> logp_theta,
                                 std::span<const double> logp_ref) {
  if (logp_theta.size() != logp_ref.size()) throw PreconditionError("per_token_kl: length mismatch");
  std::vector<double> out(logp_theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = logp_ref[i] - logp_theta[i];
    out[i] = std::exp(d) - d - 1.0;
  }
  return out;
}

void attach_reference(std::vector<RolloutGroup>& groups, const PolicyParams& ref) {
  std::vector<RolloutTrajectory*> todo;
  std::vector<const TokenSeq*> prompts;
  for (RolloutGroup& g : groups) {
    for (RolloutTrajectory& t : g.trajectories) {
      if (t.ref_logprobs.size() != t.tokens.size()) {
        todo.push_back(&t);
        prompts.push_back(&g.x);
      }
    }
  }
  parallel_checked(todo.size(), [&](std::size_t k) {
    todo[k]->ref_logprobs = logprobs(ref, *prompts[k], todo[k]->tokens);
  });
}

// ---- loss ------------------------------------------------------------------

LossAndGrad grpo_loss_and_grad(const PolicyParams& params, std::vector<RolloutGroup>& groups,
                               const PolicyParams& ref, const GrpoConfig& config, Exec exec) {
  if (groups.empty()) throw PreconditionError("grpo_loss: no groups");
  attach_reference(groups, ref);
  struct Item {
    const RolloutGroup* group;
    const RolloutTrajectory* traj;
    double advantage;
  };
  std::vector<Item> items;
  for (const RolloutGroup& g : groups) {
    if (g.advantages.size() != g.trajectories.size()) {
      throw PreconditionError("grpo_loss: group lacks advantages");
    }
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
      const RolloutTrajectory& t = g.trajectories[j];
      if (t.tokens.empty() || t.old_logprobs.size() != t.tokens.size()) {
        throw PreconditionError("grpo_loss: trajectory lacks old logprobs");
      }
      items.push_back({&g, &t, g.advantages[j]});
    }
  }
  const double n_groups = static_cast<double>(groups.size());
  const double lo = 1.0 - config.clip_epsilon;
  const double hi = 1.0 + config.clip_epsilon;
  const double beta = config.kl_beta;
  LossAndGrad out = accumulate_gradients(
      params, items.size(),
      [&](Tape& tape, std::size_t i) {
        ad::Graph& g = tape.graph();
        const Item& it = items[i];
        const int len = static_cast<int>(it.traj->tokens.size());
        Tensor old(len, 1), refc(len, 1), minus_one(len, 1, -1.0);
        old.data = it.traj->old_logprobs;
        refc.data = it.traj->ref_logprobs;
        Tensor neg_old = old;
        for (double& v : neg_old.data) v = -v;
        const ad::Var lp = tape.logprobs(it.group->x, it.traj->tokens);
        const ad::Var r = ad::exp(g, ad::add_const(g, lp, neg_old));
        const ad::Var surr = ad::scale(g, r, it.advantage);
        const ad::Var clipped = ad::scale(g, ad::clamp(g, r, lo, hi), it.advantage);
        ad::Var term = ad::minimum(g, surr, clipped);
        if (beta != 0.0) {
          const ad::Var delta = ad::add_const(g, ad::scale(g, lp, -1.0), refc);
          const ad::Var k3 = ad::add_const(g, ad::sub(g, ad::exp(g, delta), delta), minus_one);
          term = ad::sub(g, term, ad::scale(g, k3, beta));
        }
        const double w = -1.0 / (static_cast<double>(it.group->trajectories.size()) * len * n_groups);
        return ad::scale(g, ad::sum(g, term), w);
      },
      exec);
  return out;
}

double grpo_loss(const PolicyParams& params, std::vector<RolloutGroup>& groups,
                 const PolicyParams& ref, const GrpoConfig& config) {
  return grpo_loss_and_grad(snapshot(params), groups, ref, config, Exec::kSerial).loss;
}

// ---- training --------------------------------------------------------------

nlohmann::json GrpoStepMetrics::to_json() const {
  return {{"step", step},           {"mean_reward", mean_reward},
          {"mean_iclg", mean_iclg}, {"mean_lsa", mean_lsa},
          {"format_fail_rate", format_fail_rate},
          {"mean_kl", mean_kl},     {"loss", loss}};
}

GrpoResult grpo_train(const PolicyParams& sft_params, std::span<const RlPrompt> d_rl,
                      const Vocabulary& vocab, const GrpoConfig& config,
                      const StepCallback& on_step) {
  config.validate();
  if (d_rl.empty()) throw PreconditionError("grpo_train: no prompts");
  const PolicyParams ref = snapshot(sft_params);
  GrpoResult result{sft_params, {}};
  result.params.frozen = false;
  AdamConfig ac;
  ac.learning_rate = config.learning_rate;
  Adam adam(ac);

  const std::size_t batch = std::min<std::size_t>(config.batch_prompts, d_rl.size());
  std::vector<std::size_t> order(d_rl.size());
  std::size_t cursor = order.size();
  std::uint64_t pass = 0;
  std::vector<RlPrompt> prompts;
  for (int step = 0; step < config.steps; ++step) {
    prompts.clear();
    while (prompts.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, {0xb47cULL, pass++}));
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      prompts.push_back(d_rl[order[cursor++]]);
    }
    try {
      const PolicyParams old = snapshot(result.params);
      std::vector<RolloutGroup> groups =
          rollout(old, prompts, config, static_cast<std::uint64_t>(step));
      score_rollouts(groups, vocab, old, ref, config.reward);
      assign_advantages(groups, config.group_mode);
      const LossAndGrad lg = grpo_loss_and_grad(result.params, groups, ref, config);

      GrpoStepMetrics m;
      m.step = step;
      m.loss = lg.loss;
      double n = 0.0, fails = 0.0, kl_sum = 0.0, kl_n = 0.0;
      for (const RolloutGroup& g : groups) {
        for (const RolloutTrajectory& t : g.trajectories) {
          n += 1.0;
          m.mean_reward += t.reward.combined;
          m.mean_iclg += t.reward.iclg;
          m.mean_lsa += t.reward.lsa;
          if (t.reward.format_failed) fails += 1.0;
          for (double k : per_token_kl(t.old_logprobs, t.ref_logprobs)) {
            kl_sum += k;
            kl_n += 1.0;
          }
        }
      }
      m.mean_reward /= n;
      m.mean_iclg /= n;
      m.mean_lsa /= n;
      m.format_fail_rate = fails / n;
      m.mean_kl = kl_n > 0.0 ? kl_sum / kl_n : 0.0;

      adam.step(result.params, lg.grads);
      result.history.push_back(m);
      if (on_step) on_step(m, result.params);
    } catch (const NumericError& e) {
      throw NumericError("grpo_train: diverged at step " + std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

void write_metrics_jsonl(const std::filesystem::path& path,
                         std::span<const GrpoStepMetrics> history) {
  std::vector<nlohmann::json> records;
  records.reserve(history.size());
  for (const GrpoStepMetrics& m : history) records.push_back(m.to_json());
  write_jsonl(path, records);
}

}  // namespace dualcog
