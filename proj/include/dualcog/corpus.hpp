#ifndef DUALCOG_CORPUS_HPP_
#define DUALCOG_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualcog/trace.hpp"

namespace dualcog {

enum class Perspective { kFirstPerson, kThirdPerson };

struct RosterEntry {
  std::string name;
  std::string profile;
  friend bool operator==(const RosterEntry&, const RosterEntry&) = default;
};

struct HistoryTurn {
  std::string speaker;
  ResponseScript script;
  friend bool operator==(const HistoryTurn&, const HistoryTurn&) = default;
};

// Machine-readable labels emitted by the template grammar alongside each
// instance. The rule-based judge checks traces against them.
struct GrammarLabels {
  std::string setting;
  std::string archetype;
  std::string self_emotion;
  std::string self_intention;
  std::map<std::string, std::string> other_intentions;  // name -> label
  friend bool operator==(const GrammarLabels&, const GrammarLabels&) = default;
};

struct DialogueInstance {
  std::string instance_id;
  std::string world;
  std::string character;
  std::string profile;
  std::string scene;
  std::vector<RosterEntry> roster;  // includes the played character
  std::vector<HistoryTurn> history;
  std::optional<std::string> motivation;
  ResponseScript golden_response;
  std::optional<CognitionTrace> golden_cognition;
  GrammarLabels labels;

  std::vector<std::string> roster_names() const;
  // Throws ConfigError naming the violated invariant.
  void validate() const;

  friend bool operator==(const DialogueInstance&, const DialogueInstance&) = default;
};

nlohmann::json to_json(const DialogueInstance& inst);
DialogueInstance instance_from_json(const nlohmann::json& j);

// ---- template grammar ------------------------------------------------------

namespace grammar {

inline constexpr int kNumArchetypes = 6;
inline constexpr int kNumSettings = 6;
inline constexpr int kNumOtherIntents = 6;
inline constexpr int kNumSelfIntents = 6;
inline constexpr int kNumSelfEmotions = 6;

const std::vector<std::string>& names();
const std::vector<std::string>& world_names();
const std::vector<std::string>& archetype_labels();
const std::vector<std::string>& setting_labels();
const std::vector<std::string>& other_intent_labels();
const std::vector<std::string>& self_intent_labels();
const std::vector<std::string>& self_emotion_labels();

// Explicit choices from which one instance is rendered. generate_corpus draws
// these; tests enumerate them.
struct InstanceChoice {
  int world = 0;
  std::string character;
  int archetype = 0;
  int setting = 0;
  // Other characters in speaking order; the last speaker drives the reply.
  std::vector<std::pair<std::string, int>> others;  // name, archetype
  std::vector<int> other_intents;                   // parallel to others
  bool with_motivation = false;
};

DialogueInstance render_instance(const InstanceChoice& choice, std::string id);

// Golden cognition phrased from the given perspective.
CognitionTrace golden_cognition(const DialogueInstance& inst, Perspective p);

// Label recovered from an internal_thought phrase of either perspective.
std::optional<std::string> intention_from_thought(const std::string& thought,
                                                  const std::string& character);

// Reply the character would give under the given self-intention and
// self-emotion labels, addressed to the last speaker.
ResponseScript reply_for(const DialogueInstance& inst, const std::string& intention,
                         const std::string& emotion);

// Template words behind reply_for, without the addressee name and punctuation.
std::set<std::string> reply_lexicon(const std::string& intention, const std::string& emotion);

// Internal thought phrase for a self-intention label.
std::string thought_for_intention(const std::string& label,
                                  const std::string& character, Perspective p);

}  // namespace grammar

std::vector<DialogueInstance> generate_corpus(std::uint64_t seed, int n_worlds,
                                              int n_instances);

// ---- prompts ---------------------------------------------------------------

// Registry: cogdual_construct, cot_baseline, cb_cot, roleplay_infer.
const std::vector<std::string>& template_ids();
std::string render_prompt(const DialogueInstance& inst,
                          const std::string& template_id,
                          Perspective perspective);

// Bernoulli(0.5) perspective stream.
Perspective draw_perspective(std::uint64_t seed, std::uint64_t index);

// ---- judge -----------------------------------------------------------------

struct Verdict {
  bool accepted = true;
  std::string reason;  // "empty field", "roster", "intention mismatch"
};

Verdict judge_stub(const DialogueInstance& inst, const Trajectory& traj);

// ---- corruption harness ----------------------------------------------------

enum class CorruptionKind {
  kDropField,        // remove one required JSON field path
  kDropTag,          // remove a closing tag
  kBreakJson,        // truncate the JSON body
  kEmptyText,        // blank one cognition text field
  kForeignName,      // mention a character absent from the roster
  kFlipIntention,    // internal thought states another intention label
};

struct Corruption {
  CorruptionKind kind;
  std::string detail;  // field path, tag or label involved
};

// Enumerates every single-field corruption the harness can inject.
std::vector<Corruption> corruption_catalog();

// Applies a corruption to a canonical golden trajectory of `inst`.
std::string corrupt_trajectory(const DialogueInstance& inst,
                               const CognitionTrace& cognition,
                               const Corruption& corruption);

// ---- dataset construction --------------------------------------------------

struct SftPair {
  std::string instance_id;
  std::string prompt;
  Trajectory target;
};

struct DatasetSplit {
  std::vector<DialogueInstance> d_cog;
  std::vector<SftPair> d_sft;
  std::vector<std::string> d_rl;          // prompt texts
  std::vector<std::string> d_rl_ids;      // instance ids behind d_rl
};

struct StageCounts {
  std::size_t candidates = 0;
  std::size_t after_format = 0;
  std::size_t after_judge = 0;
  std::size_t injected = 0;
  std::size_t injected_detected = 0;
  std::size_t clean_rejected = 0;
  std::map<std::string, std::size_t> reject_reasons;
};

// Sampler for sampled mode: returns raw trajectory text for one instance.
using TrajectorySampler = std::function<std::string(
    const DialogueInstance&, const std::string& prompt, std::uint64_t seed)>;

struct BuildOptions {
  int trajs_per_instance = 4;
  std::uint64_t seed = 0;
  std::size_t rl_prompts = 0;
  // Fraction of candidates receiving one deterministic corruption.
  double corruption_rate = 0.0;
  bool apply_format_filter = true;
  bool apply_judge = true;
  // Empty sampler selects bootstrap mode (grammar golden traces).
  TrajectorySampler sampler;
};

struct BuildResult {
  DatasetSplit split;
  StageCounts counts;
};

BuildResult build_datasets(std::span<const DialogueInstance> corpus,
                           const BuildOptions& options);

// ---- JSONL -----------------------------------------------------------------

void write_jsonl(const std::filesystem::path& path,
                 std::span<const nlohmann::json> records);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

void write_instances(const std::filesystem::path& path,
                     std::span<const DialogueInstance> instances);
std::vector<DialogueInstance> read_instances(const std::filesystem::path& path);

void write_sft_pairs(const std::filesystem::path& path,
                     std::span<const SftPair> pairs);

}  // namespace dualcog

#endif  // DUALCOG_CORPUS_HPP_
