// Command-line front end. Exit codes: 0 ok, 2 configuration error, 3 stage failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dualcog/corpus.hpp"
#include "dualcog/errors.hpp"
#include "dualcog/harness.hpp"
#include "dualcog/rewards.hpp"
#include "dualcog/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dualcog;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "global seed");
  cmd->add_option("--preset", c.preset, "parameter preset")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--out", c.out, "output directory");
}

// File values first, then flags; a preset expands before explicit values.
ExperimentConfig resolve(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ConfigError("cannot read config " + c.config);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(c.config + ": " + e.what());
    }
  }
  if (!c.preset.empty()) j["preset"] = c.preset;
  if (c.seed) j["seed"] = *c.seed;
  if (!c.out.empty()) j["out_dir"] = c.out;
  return ExperimentConfig::from_json(j, ExperimentConfig::for_preset(Preset::kDesk));
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << body;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

PolicyParams load_or_train_sft(const ExperimentConfig& cfg, const Workspace& ws,
                               const std::string& ckpt) {
  if (!ckpt.empty()) {
    PolicyParams p = load_checkpoint(ckpt);
    if (p.config.vocab_size != static_cast<int>(ws.vocab.size())) {
      throw ConfigError("checkpoint vocabulary does not match the configured corpus");
    }
    return p;
  }
  return run_sft_stage(cfg, ws, cfg.out_dir).params;
}

int cmd_gen_corpus(const ExperimentConfig& cfg) {
  const Workspace ws = prepare_workspace(cfg);
  const fs::path& dir = cfg.out_dir;
  fs::create_directories(dir);
  write_instances(dir / "instances.jsonl", ws.train);
  write_instances(dir / "heldout.jsonl", ws.heldout);
  write_sft_pairs(dir / "d_sft.jsonl", ws.data.split.d_sft);
  std::vector<json> rl;
  for (std::size_t i = 0; i < ws.data.split.d_rl.size(); ++i) {
    rl.push_back({{"instance_id", ws.data.split.d_rl_ids[i]}, {"prompt", ws.data.split.d_rl[i]}});
  }
  write_jsonl(dir / "d_rl.jsonl", rl);
  write_text(dir / "vocab.json", ws.vocab.to_json().dump() + "\n");
  const StageCounts& c = ws.data.counts;
  emit_report(dir / "corpus.json", {{"config", cfg.to_json()},
                                    {"candidates", c.candidates},
                                    {"after_format", c.after_format},
                                    {"after_judge", c.after_judge},
                                    {"injected", c.injected},
                                    {"injected_detected", c.injected_detected},
                                    {"clean_rejected", c.clean_rejected},
                                    {"reject_reasons", c.reject_reasons},
                                    {"d_sft", ws.data.split.d_sft.size()},
                                    {"d_rl", rl.size()},
                                    {"vocab_size", ws.vocab.size()}});
  std::printf("%zu instances, %zu SFT pairs, %zu RL prompts -> %s\n", ws.train.size(),
              ws.data.split.d_sft.size(), rl.size(), dir.string().c_str());
  return 0;
}

// Checks trajectories from a JSONL file ("target" or "raw" field, optional
// "instance_id" for the judge); without input, checks the built corpus.
int cmd_validate_traces(const ExperimentConfig& cfg, const std::string& input,
                        const std::string& instances) {
  json report;
  if (input.empty()) {
    const Workspace ws = prepare_workspace(cfg);
    const StageCounts& c = ws.data.counts;
    report = {{"candidates", c.candidates},       {"after_format", c.after_format},
              {"after_judge", c.after_judge},     {"injected", c.injected},
              {"injected_detected", c.injected_detected},
              {"clean_rejected", c.clean_rejected}, {"reject_reasons", c.reject_reasons}};
  } else {
    std::map<std::string, DialogueInstance> by_id;
    if (!instances.empty()) {
      for (auto& inst : read_instances(instances)) by_id.emplace(inst.instance_id, std::move(inst));
    }
    std::size_t total = 0, parsed = 0, accepted = 0;
    std::map<std::string, std::size_t> reasons;
    json rejected = json::array();
    for (const json& rec : read_jsonl(input)) {
      const std::string raw = rec.contains("raw") ? rec.at("raw").get<std::string>()
                                                  : rec.at("target").get<std::string>();
      ++total;
      const Trajectory t = parse_trace(raw);
      std::string reason;
      if (!t.parsed()) {
        reason = "format: " + *t.format_error;
      } else {
        ++parsed;
        if (rec.contains("instance_id")) {
          auto it = by_id.find(rec.at("instance_id").get<std::string>());
          if (it != by_id.end()) {
            const Verdict v = judge_stub(it->second, t);
            if (!v.accepted) reason = "judge: " + v.reason;
          }
        }
      }
      if (reason.empty()) {
        ++accepted;
      } else {
        ++reasons[reason];
        rejected.push_back({{"line", total}, {"reason", reason}});
      }
    }
    report = {{"total", total}, {"parsed", parsed}, {"accepted", accepted},
              {"reject_reasons", reasons}, {"rejected", rejected}};
  }
  fs::create_directories(cfg.out_dir);
  emit_report(cfg.out_dir / "validation.json", report);
  std::cout << canonical_dump(report);
  return 0;
}

int cmd_sft_train(const ExperimentConfig& cfg) {
  const Workspace ws = prepare_workspace(cfg);
  const SftOutcome s = run_sft_stage(cfg, ws, cfg.out_dir);
  write_loss_csv(cfg.out_dir / "sft_loss.csv", s.losses);
  json report = {{"config", cfg.to_json()},
                 {"nll_before", s.nll_before},
                 {"nll_after", s.nll_after},
                 {"nll_ratio", s.nll_after / s.nll_before},
                 {"greedy_parse_rate", s.greedy_parse_rate},
                 {"checkpoint", "sft.ckpt.json"},
                 {"curves", {{"sft_loss", s.losses}}}};
  emit_report(cfg.out_dir / "sft_report.json", report);
  std::printf("nll %.4f -> %.4f, greedy parse %.3f\n", s.nll_before, s.nll_after,
              s.greedy_parse_rate);
  return 0;
}

int cmd_rl_train(const ExperimentConfig& cfg, const std::string& ckpt) {
  const json r = run_pipeline(cfg, opt_path(ckpt));
  const json& g = r.at("grpo");
  std::printf("combined %.4f -> %.4f (paired %+.4f), format fail %.3f -> %.3f\n",
              g.at("before").at("mean_combined").get<double>(),
              g.at("after").at("mean_combined").get<double>(),
              g.at("paired_improvement").get<double>(),
              g.at("before").at("format_fail_rate").get<double>(),
              g.at("after").at("format_fail_rate").get<double>());
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& ckpt) {
  const json r = run_sweep(cfg, cfg.sweep, opt_path(ckpt));
  std::printf("%-8s %-8s %12s %10s %12s\n", "l_iclg", "l_lsa", "final_iclg", "final_lsa",
              "final_comb");
  for (const json& row : r.at("rows")) {
    std::printf("%-8.2f %-8.2f %12.4f %10.4f %12.4f\n", row.at("lambda_iclg").get<double>(),
                row.at("lambda_lsa").get<double>(), row.at("final_mean_iclg").get<double>(),
                row.at("final_mean_lsa").get<double>(),
                row.at("final_mean_combined").get<double>());
  }
  return 0;
}

// Matching accuracy of the reference embeddings: with the golden reply as the
// target, and with the policy's greedy reply as the target.
int cmd_eval_match(const ExperimentConfig& cfg, const std::string& ckpt,
                   const std::string& policy_ckpt, const std::string& instances) {
  std::vector<DialogueInstance> heldout;
  if (!instances.empty()) {
    try {
      heldout = read_instances(instances);
    } catch (const std::exception& e) {
      throw StageError("eval", e.what());
    }
  }
  const Workspace ws = prepare_workspace(cfg);
  if (instances.empty()) heldout = ws.heldout;
  const PolicyParams ref = snapshot(load_or_train_sft(cfg, ws, ckpt));
  const PolicyParams policy = policy_ckpt.empty() ? ref : load_checkpoint(policy_ckpt);
  const auto items = build_match_items(heldout, derive_seed(cfg.seed, {0x3a7c}));

  std::size_t golden_ok = 0, policy_ok = 0;
  json records = json::array();
  for (const MatchItem& item : items) {
    const TokenSeq x = encode_prompt(ws.vocab, item.prompt);
    const MatchResult g = semantic_match(ref, ws.vocab, x, item.options, item.target);
    golden_ok += g.choice == item.answer;

    SampleOptions o;
    o.greedy = true;
    o.max_new = cfg.eval.greedy_max_new;
    TokenSeq gen = sample_with_logprobs(policy, x, o).tokens;
    if (!gen.empty() && gen.back() == ws.vocab.id(Control::kEos)) gen.pop_back();
    const Trajectory t = parse_trace(decode(ws.vocab, gen));
    json rec = {{"instance_id", item.instance_id}, {"answer", item.answer},
                {"golden_choice", g.choice}, {"golden_scores", g.scores}};
    if (t.parsed() && t.response && !t.response->text().empty()) {
      const MatchResult p = semantic_match(ref, ws.vocab, x, item.options, t.response->text());
      policy_ok += p.choice == item.answer;
      rec["policy_choice"] = p.choice;
    } else {
      rec["policy_choice"] = nullptr;
    }
    records.push_back(std::move(rec));
  }
  const double n = static_cast<double>(items.size());
  json report = {{"items", items.size()},
                 {"golden_target_accuracy", golden_ok / n},
                 {"policy_target_accuracy", policy_ok / n},
                 {"records", records}};
  fs::create_directories(cfg.out_dir);
  emit_report(cfg.out_dir / "match.json", report);
  std::printf("golden target %.3f, policy target %.3f over %zu items\n", golden_ok / n,
              policy_ok / n, items.size());
  return 0;
}

// Scores sampled trajectories (or golden ones with --golden) on the held-out
// prompts and writes one JSONL record per trajectory.
int cmd_reward_debug(const ExperimentConfig& cfg, const std::string& ckpt,
                     const std::string& policy_ckpt, bool golden) {
  const Workspace ws = prepare_workspace(cfg);
  const PolicyParams ref = snapshot(load_or_train_sft(cfg, ws, ckpt));
  const PolicyParams policy = policy_ckpt.empty() ? ref : snapshot(load_checkpoint(policy_ckpt));
  std::vector<std::string> ids;
  std::vector<RewardBreakdown> rewards;
  for (std::size_t i = 0; i < ws.heldout_prompts.size(); ++i) {
    const RlPrompt& p = ws.heldout_prompts[i];
    const RewardScorer scorer(ws.vocab, policy, ref, cfg.grpo.reward, p.x, p.d_golden);
    if (golden) {
      const DialogueInstance& inst = ws.heldout[i];
      const std::string raw = serialize_cognition_block(*inst.golden_cognition) + " " +
                              serialize_answer_block(inst.golden_response);
      ids.push_back(p.id + "/golden");
      rewards.push_back(scorer.score_text(raw));
      continue;
    }
    for (int j = 0; j < cfg.eval.samples_per_prompt; ++j) {
      const TokenSeq gen = sample(policy, p.x, cfg.eval.temperature, cfg.eval.max_new_tokens,
                                  derive_seed(cfg.seed, {0xdeb, i, static_cast<std::uint64_t>(j)}));
      ids.push_back(p.id + "/" + std::to_string(j));
      rewards.push_back(scorer.score_tokens(gen));
    }
  }
  fs::create_directories(cfg.out_dir);
  write_reward_debug(cfg.out_dir / "reward_debug.jsonl", ids, rewards);
  std::printf("%zu trajectories -> %s\n", ids.size(),
              (cfg.out_dir / "reward_debug.jsonl").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-cognition role-play training toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string input, instances, ckpt, policy_ckpt;
  bool golden = false;

  auto* gen = app.add_subcommand("gen-corpus", "build the synthetic corpus and datasets");
  auto* val = app.add_subcommand("validate-traces", "run the format filter and judge");
  auto* sft = app.add_subcommand("sft-train", "supervised fine-tuning stage");
  auto* rl = app.add_subcommand("rl-train", "SFT (or a checkpoint) followed by GRPO and eval");
  auto* sweep = app.add_subcommand("sweep", "GRPO over reward weight pairs");
  auto* match = app.add_subcommand("eval-match", "semantic matching evaluation");
  auto* rdebug = app.add_subcommand("reward-debug", "per-trajectory reward breakdown");
  for (CLI::App* c : {gen, val, sft, rl, sweep, match, rdebug}) add_common(c, common);
  val->add_option("--input", input, "JSONL with raw or target fields");
  val->add_option("--instances", instances, "instances JSONL for the judge");
  match->add_option("--instances", instances, "held-out instances JSONL");
  for (CLI::App* c : {rl, sweep, match, rdebug}) {
    c->add_option("--sft-checkpoint", ckpt, "post-SFT checkpoint");
  }
  for (CLI::App* c : {match, rdebug}) {
    c->add_option("--policy", policy_ckpt, "policy checkpoint (defaults to the SFT one)");
  }
  rdebug->add_flag("--golden", golden, "score the golden trajectories instead of samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const ExperimentConfig cfg = resolve(common);
    if (*gen) return cmd_gen_corpus(cfg);
    if (*val) return cmd_validate_traces(cfg, input, instances);
    if (*sft) return cmd_sft_train(cfg);
    if (*rl) return cmd_rl_train(cfg, ckpt);
    if (*sweep) return cmd_sweep(cfg, ckpt);
    if (*match) return cmd_eval_match(cfg, ckpt, policy_ckpt, instances);
    if (*rdebug) return cmd_reward_debug(cfg, ckpt, policy_ckpt, golden);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const StageError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage: run: %s\n", e.what());
    return kExitStage;
  }
  return 0;
}
