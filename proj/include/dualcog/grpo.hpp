#ifndef DUALCOG_GRPO_HPP_
#define DUALCOG_GRPO_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualcog/policy.hpp"
#include "dualcog/rewards.hpp"
#include "dualcog/sft.hpp"

namespace dualcog {

enum class GroupMode { kPerPrompt, kMinibatch };

struct GrpoConfig {
  int group_size = 8;
  double clip_epsilon = 0.2;
  double kl_beta = 0.001;
  double learning_rate = 1e-4;
  int steps = 200;
  double temperature = 0.7;
  int max_new_tokens = 96;
  int batch_prompts = 4;
  GroupMode group_mode = GroupMode::kPerPrompt;
  RewardConfig reward;
  std::uint64_t seed = 0;
  Preset preset = Preset::kDesk;

  static GrpoConfig for_preset(Preset p);
  void validate() const;
  nlohmann::json to_json() const;
  static GrpoConfig from_json(const nlohmann::json& j, GrpoConfig base);
  friend bool operator==(const GrpoConfig&, const GrpoConfig&) = default;
};

struct RlPrompt {
  std::string id;
  TokenSeq x;
  TokenSeq d_golden;
};

struct RolloutTrajectory {
  TokenSeq tokens;                   // generated tokens (cognition, answer, EOS)
  std::vector<double> old_logprobs;  // under the rollout snapshot
  std::vector<double> ref_logprobs;  // under the reference; filled on demand
  RewardBreakdown reward;
};

struct RolloutGroup {
  std::size_t prompt_index = 0;
  std::string prompt_id;
  TokenSeq x;
  TokenSeq d_golden;
  std::vector<RolloutTrajectory> trajectories;
  std::vector<double> advantages;
};

// G samples per prompt. Sample (p, j) is seeded from (config.seed, stream, p, j).
std::vector<RolloutGroup> rollout(const PolicyParams& policy_old,
                                  std::span<const RlPrompt> prompts, const GrpoConfig& config,
                                  std::uint64_t stream = 0);

// Fills every trajectory's reward (ICLG under the rollout snapshot, LSA under ref).
void score_rollouts(std::vector<RolloutGroup>& groups, const Vocabulary& vocab,
                    const PolicyParams& rollout_snapshot, const PolicyParams& ref,
                    const RewardConfig& reward);

// (R - mean) / population std; all zeros when the std is below 1e-8.
std::vector<double> compute_advantages(std::span<const double> rewards);

void assign_advantages(std::vector<RolloutGroup>& groups, GroupMode mode);

// exp(d) - d - 1 with d = logp_ref - logp_theta.
std::vector<double> per_token_kl(std::span<const double> logp_theta,
                                 std::span<const double> logp_ref);

void attach_reference(std::vector<RolloutGroup>& groups, const PolicyParams& ref);

LossAndGrad grpo_loss_and_grad(const PolicyParams& params, std::vector<RolloutGroup>& groups,
                               const PolicyParams& ref, const GrpoConfig& config,
                               Exec exec = Exec::kParallel);
double grpo_loss(const PolicyParams& params, std::vector<RolloutGroup>& groups,
                 const PolicyParams& ref, const GrpoConfig& config);

struct GrpoStepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double mean_iclg = 0.0;
  double mean_lsa = 0.0;
  double format_fail_rate = 0.0;
  double mean_kl = 0.0;
  double loss = 0.0;

  nlohmann::json to_json() const;
};

struct GrpoResult {
  PolicyParams params;
  std::vector<GrpoStepMetrics> history;
};

using StepCallback = std::function<void(const GrpoStepMetrics&, const PolicyParams&)>;

GrpoResult grpo_train(const PolicyParams& sft_params, std::span<const RlPrompt> d_rl,
                      const Vocabulary& vocab, const GrpoConfig& config,
                      const StepCallback& on_step = {});

void write_metrics_jsonl(const std::filesystem::path& path,
                         std::span<const GrpoStepMetrics> history);

}  // namespace dualcog

#endif  // DUALCOG_GRPO_HPP_
