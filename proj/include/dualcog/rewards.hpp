#ifndef DUALCOG_REWARDS_HPP_
#define DUALCOG_REWARDS_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dualcog/codec.hpp"
#include "dualcog/policy.hpp"

namespace dualcog {

struct RewardConfig {
  double lambda_iclg = 0.7;
  double lambda_lsa = 0.3;
  double log_gain_clamp = 20.0;

  // Throws ConfigError.
  void validate() const;
  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

struct RewardBreakdown {
  double iclg = 0.0;
  double lsa = 0.0;
  double combined = 0.0;
  double log_gain = 0.0;  // clamped per-token log gain behind iclg
  bool format_failed = false;
  bool lsa_degenerate = false;
};

// Clamped mean per-token log gain of d given x+c over d given x.
double iclg_log_gain(const PolicyParams& policy, std::span<const TokenId> x,
                     std::span<const TokenId> c, std::span<const TokenId> d_golden,
                     double clamp);
double iclg_reward(const PolicyParams& policy, std::span<const TokenId> x,
                   std::span<const TokenId> c, std::span<const TokenId> d_golden, double clamp);

struct LsaResult {
  double value = 0.0;
  bool degenerate = false;  // a pooled vector had zero norm
};

// Mean-pools each row set and returns the cosine of the two pooled vectors.
LsaResult lsa_from_hidden(const Tensor& golden, const Tensor& hat);
LsaResult lsa_detail(const PolicyParams& ref, std::span<const TokenId> x,
                     std::span<const TokenId> d_golden, std::span<const TokenId> d_hat);
double lsa_reward(const PolicyParams& ref, std::span<const TokenId> x,
                  std::span<const TokenId> d_golden, std::span<const TokenId> d_hat);

double combined_reward(const RewardConfig& config, double iclg, double lsa);

// Token spans of a generated trajectory: cognition block c and answer block d.
struct TrajectoryParts {
  TokenSeq cognition;
  TokenSeq answer;
};

// Splits a trajectory when it parses; nullopt on a format failure.
std::optional<TrajectoryParts> split_trajectory(const Vocabulary& vocab,
                                                std::string_view raw_text);

// Rewards for many trajectories of one prompt. The ICLG baseline term and the
// pooled golden vector are computed once.
class RewardScorer {
 public:
  RewardScorer(const Vocabulary& vocab, const PolicyParams& rollout_snapshot,
               const PolicyParams& ref, RewardConfig config, TokenSeq x, TokenSeq d_golden);

  RewardBreakdown score_text(std::string_view raw_text) const;
  // Generated tokens; a trailing EOS is ignored.
  RewardBreakdown score_tokens(std::span<const TokenId> generated) const;

 private:
  const Vocabulary& vocab_;
  const PolicyParams& rollout_;
  const PolicyParams& ref_;
  RewardConfig config_;
  TokenSeq x_;
  TokenSeq d_golden_;
  double baseline_sum_ = 0.0;
  Tensor golden_hidden_;
};

RewardBreakdown reward_trajectory(const Vocabulary& vocab, std::span<const TokenId> x,
                                  std::string_view raw_text, std::span<const TokenId> d_golden,
                                  const PolicyParams& rollout_snapshot, const PolicyParams& ref,
                                  const RewardConfig& config);

nlohmann::json reward_debug_record(const std::string& traj_id, const RewardBreakdown& b);
void write_reward_debug(const std::filesystem::path& path, std::span<const std::string> ids,
                        std::span<const RewardBreakdown> rewards);

}  // namespace dualcog

#endif  // DUALCOG_REWARDS_HPP_
