#ifndef DUALCOG_HARNESS_HPP_
#define DUALCOG_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dualcog/corpus.hpp"
#include "dualcog/grpo.hpp"
#include "dualcog/policy.hpp"
#include "dualcog/sft.hpp"

namespace dualcog {

struct CorpusConfig {
  int n_worlds = 8;
  int n_instances = 200;  // training instances
  int heldout = 20;       // evaluation instances, drawn by a seeded split
  int trajs_per_instance = 8;
  double corruption_rate = 0.0;
  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

struct ModelConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int context_length = 256;
  double init_scale = 0.05;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Held-out evaluation protocol.
struct EvalConfig {
  int samples_per_prompt = 8;
  double temperature = 0.7;
  int max_new_tokens = 96;
  int greedy_max_new = 128;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct SweepSpec {
  std::vector<std::pair<double, double>> pairs;  // (lambda_iclg, lambda_lsa)

  static SweepSpec defaults();
  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  Preset preset = Preset::kDesk;
  CorpusConfig corpus;
  ModelConfig model;
  SftConfig sft;
  GrpoConfig grpo;
  EvalConfig eval;
  SweepSpec sweep = SweepSpec::defaults();
  int grpo_checkpoint_every = 50;  // 0 disables periodic GRPO checkpoints
  std::filesystem::path out_dir = "out";

  static ExperimentConfig for_preset(Preset p);
  // Keys absent from j keep the values of `base`; a "preset" key first resets
  // every stage to that preset. Throws ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base);
  static ExperimentConfig load(const std::filesystem::path& path, ExperimentConfig base);
  // Re-derives stage seeds from the global seed.
  void propagate_seed();
  void validate() const;
  nlohmann::json to_json() const;
};

// Everything built by the corpus stage.
struct Workspace {
  std::vector<DialogueInstance> train;
  std::vector<DialogueInstance> heldout;
  BuildResult data;
  Vocabulary vocab;
  std::vector<SftExample> sft_examples;
  std::vector<RlPrompt> rl_prompts;
  std::vector<RlPrompt> heldout_prompts;
};

Workspace prepare_workspace(const ExperimentConfig& config);
RlPrompt make_rl_prompt(const Vocabulary& vocab, const DialogueInstance& inst);
PolicyConfig policy_config_for(const ExperimentConfig& config, const Vocabulary& vocab);

struct EvalSummary {
  double mean_combined = 0.0;
  double mean_iclg = 0.0;
  double mean_lsa = 0.0;
  double format_fail_rate = 0.0;
  double judge_pass_rate = 0.0;  // among parsed samples
  std::vector<double> per_prompt_combined;

  nlohmann::json to_json() const;
};

// Seeded samples on the held-out prompts, scored with the reward of the
// training stage: ICLG under `policy`, LSA under `ref`.
EvalSummary evaluate_policy(const PolicyParams& policy, const PolicyParams& ref,
                            const Workspace& ws, const EvalConfig& eval,
                            const RewardConfig& reward, std::uint64_t seed);

// Fraction of greedy generations on held-out prompts passing the format filter.
double greedy_parse_rate(const PolicyParams& policy, const Workspace& ws, const EvalConfig& eval);

struct SftOutcome {
  PolicyParams params;
  std::vector<double> losses;
  double nll_before = 0.0;
  double nll_after = 0.0;
  double greedy_parse_rate = 0.0;
};

// With a directory, writes sft.epoch<N>.ckpt.json after each epoch and
// sft.ckpt.json at the end.
SftOutcome run_sft_stage(const ExperimentConfig& config, const Workspace& ws,
                         const std::filesystem::path& ckpt_dir = {});

struct GrpoOutcome {
  PolicyParams params;
  std::vector<GrpoStepMetrics> history;
  EvalSummary before;
  EvalSummary after;
};

// With a directory, writes grpo.step<N>.ckpt.json every grpo_checkpoint_every steps.
GrpoOutcome run_grpo_stage(const ExperimentConfig& config, const Workspace& ws,
                           const PolicyParams& sft_params, const GrpoConfig& grpo,
                           const std::filesystem::path& ckpt_dir = {});

// Corpus -> SFT -> GRPO -> eval. Writes artifacts under config.out_dir and
// returns the report body. With a checkpoint, SFT is skipped and the GRPO
// stage starts from it. Stage failures surface as StageError.
nlohmann::json run_pipeline(const ExperimentConfig& config,
                            const std::optional<std::filesystem::path>& sft_checkpoint = {});

// One GRPO run per weight pair, all from the bytes of the same SFT checkpoint.
// Runs SFT first when no checkpoint is given.
nlohmann::json run_sweep(const ExperimentConfig& config, const SweepSpec& sweep,
                         const std::optional<std::filesystem::path>& sft_checkpoint = {});

// ---- semantic matching -----------------------------------------------------

struct MatchResult {
  std::size_t choice = 0;
  std::vector<double> scores;
};

// Cosine of mean-pooled reference hidden states (x as prefix) between the
// target and each option; ties go to the lowest index.
MatchResult semantic_match(const PolicyParams& ref, const Vocabulary& vocab,
                           std::span<const TokenId> x, std::span<const std::string> options,
                           const std::string& target);

struct MatchItem {
  std::string instance_id;
  std::string prompt;
  std::vector<std::string> options;
  std::size_t answer = 0;
  std::string target;
};

// Four-option items: the golden response plus three distractors rendered
// with self-intentions whose phrase sets share no word with the golden one.
std::vector<MatchItem> build_match_items(std::span<const DialogueInstance> instances,
                                         std::uint64_t seed);

// ---- reports ---------------------------------------------------------------

// Sorted keys, doubles with 6 decimals, no whitespace variation.
std::string canonical_dump(const nlohmann::json& j);
// Writes the canonical JSON and, for every numeric array under "curves", a
// CSV companion <stem>.<name>.csv with columns step,value.
void emit_report(const std::filesystem::path& path, const nlohmann::json& report);

}  // namespace dualcog

#endif  // DUALCOG_HARNESS_HPP_
