#include "dualcog/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "dualcog/corpus.hpp"
#include "dualcog/errors.hpp"
#include "dualcog/trace.hpp"

namespace dualcog {
namespace {

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

TokenSeq concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  TokenSeq out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double clamped_gain(double with_sum, double without_sum, std::size_t n, double clamp) {
  const double g = (with_sum - without_sum) / static_cast<double>(n);
  if (std::isnan(g)) throw NumericError("iclg: log gain is NaN");
  return std::clamp(g, -clamp, clamp);
}

std::vector<double> pooled(const Tensor& h) {
  std::vector<double> out(h.cols, 0.0);
  for (int r = 0; r < h.rows; ++r) {
    for (int c = 0; c < h.cols; ++c) out[c] += h(r, c);
  }
  for (double& v : out) v /= h.rows;
  return out;
}

}  // namespace

void RewardConfig::validate() const {
  if (!(lambda_iclg >= 0.0) || !(lambda_lsa >= 0.0)) {
    throw ConfigError("reward: lambda weights must be non-negative");
  }
  if (lambda_iclg == 0.0 && lambda_lsa == 0.0) {
    throw ConfigError("reward: at least one lambda weight must be positive");
  }
  if (!(log_gain_clamp > 0.0)) throw ConfigError("reward: log_gain_clamp must be positive");
}

double iclg_log_gain(const PolicyParams& policy, std::span<const TokenId> x,
                     std::span<const TokenId> c, std::span<const TokenId> d_golden,
                     double clamp) {
  if (d_golden.empty()) throw PreconditionError("iclg: empty golden response");
  const TokenSeq xc = concat(x, c);
  return clamped_gain(sum_of(logprobs(policy, xc, d_golden)),
                      sum_of(logprobs(policy, x, d_golden)), d_golden.size(), clamp);
}

double iclg_reward(const PolicyParams& policy, std::span<const TokenId> x,
                   std::span<const TokenId> c, std::span<const TokenId> d_golden, double clamp) {
  return std::exp(iclg_log_gain(policy, x, c, d_golden, clamp));
}

LsaResult lsa_from_hidden(const Tensor& golden, const Tensor& hat) {
  if (golden.rows == 0 || hat.rows == 0) throw PreconditionError("lsa: empty segment");
  if (golden.cols != hat.cols) throw PreconditionError("lsa: hidden widths differ");
  const std::vector<double> a = pooled(golden);
  const std::vector<double> b = pooled(hat);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  if (a == b) return {1.0, false};
  return {std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0), false};
}

LsaResult lsa_detail(const PolicyParams& ref, std::span<const TokenId> x,
                     std::span<const TokenId> d_golden, std::span<const TokenId> d_hat) {
  if (d_golden.empty() || d_hat.empty()) throw PreconditionError("lsa: empty segment");
  return lsa_from_hidden(hidden_states(ref, x, d_golden), hidden_states(ref, x, d_hat));
}

double lsa_reward(const PolicyParams& ref, std::span<const TokenId> x,
                  std::span<const TokenId> d_golden, std::span<const TokenId> d_hat) {
  return lsa_detail(ref, x, d_golden, d_hat).value;
}

double combined_reward(const RewardConfig& config, double iclg, double lsa) {
  return config.lambda_iclg * iclg + config.lambda_lsa * lsa;
}

std::optional<TrajectoryParts> split_trajectory(const Vocabulary& vocab,
                                                std::string_view raw_text) {
  const Trajectory t = parse_trace(raw_text);
  if (!t.parsed()) return std::nullopt;
  const auto spans = locate_blocks(raw_text);
  if (!spans) return std::nullopt;
  TrajectoryParts parts;
  parts.cognition =
      encode(vocab, raw_text.substr(spans->think_begin, spans->think_end - spans->think_begin));
  parts.answer =
      encode(vocab, raw_text.substr(spans->answer_begin, spans->answer_end - spans->answer_begin));
  if (parts.answer.empty()) return std::nullopt;
  return parts;
}

RewardScorer::RewardScorer(const Vocabulary& vocab, const PolicyParams& rollout_snapshot,
                           const PolicyParams& ref, RewardConfig config, TokenSeq x,
                           TokenSeq d_golden)
    : vocab_(vocab),
      rollout_(rollout_snapshot),
      ref_(ref),
      config_(config),
      x_(std::move(x)),
      d_golden_(std::move(d_golden)) {
  config_.validate();
  if (d_golden_.empty()) throw PreconditionError("reward: empty golden response");
  baseline_sum_ = sum_of(logprobs(rollout_, x_, d_golden_));
  golden_hidden_ = hidden_states(ref_, x_, d_golden_);
}

RewardBreakdown RewardScorer::score_text(std::string_view raw_text) const {
  RewardBreakdown b;
  const auto parts = split_trajectory(vocab_, raw_text);
  if (!parts) {
    b.format_failed = true;
    return b;
  }
  const TokenSeq xc = concat(x_, parts->cognition);
  b.log_gain = clamped_gain(sum_of(logprobs(rollout_, xc, d_golden_)), baseline_sum_,
                            d_golden_.size(), config_.log_gain_clamp);
  b.iclg = std::exp(b.log_gain);
  const LsaResult lsa = lsa_from_hidden(golden_hidden_, hidden_states(ref_, x_, parts->answer));
  b.lsa = lsa.value;
  b.lsa_degenerate = lsa.degenerate;
  b.combined = combined_reward(config_, b.iclg, b.lsa);
  return b;
}

RewardBreakdown RewardScorer::score_tokens(std::span<const TokenId> generated) const {
  if (!generated.empty() && vocab_.has_control(Control::kEos) &&
      generated.back() == vocab_.id(Control::kEos)) {
    generated = generated.first(generated.size() - 1);
  }
  return score_text(decode(vocab_, generated));
}

RewardBreakdown reward_trajectory(const Vocabulary& vocab, std::span<const TokenId> x,
                                  std::string_view raw_text, std::span<const TokenId> d_golden,
                                  const PolicyParams& rollout_snapshot, const PolicyParams& ref,
                                  const RewardConfig& config) {
  const RewardScorer scorer(vocab, rollout_snapshot, ref, config, TokenSeq(x.begin(), x.end()),
                            TokenSeq(d_golden.begin(), d_golden.end()));
  return scorer.score_text(raw_text);
}

nlohmann::json reward_debug_record(const std::string& traj_id, const RewardBreakdown& b) {
  return {{"traj_id", traj_id},   {"iclg", b.iclg},
          {"lsa", b.lsa},         {"combined", b.combined},
          {"format_failed", b.format_failed}, {"log_gain", b.log_gain}};
}

void write_reward_debug(const std::filesystem::path& path, std::span<const std::string> ids,
                        std::span<const RewardBreakdown> rewards) {
  if (ids.size() != rewards.size()) throw PreconditionError("reward debug: size mismatch");
  std::vector<nlohmann::json> records;
  records.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) records.push_back(reward_debug_record(ids[i], rewards[i]));
  write_jsonl(path, records);
}

}  // namespace dualcog
