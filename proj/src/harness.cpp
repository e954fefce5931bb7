#include "dualcog/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dualcog/errors.hpp"
#include "dualcog/rng.hpp"

namespace dualcog {

using nlohmann::json;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kCorpusStream = 0xc0;
constexpr std::uint64_t kSplitStream = 0x4e1d;
constexpr std::uint64_t kBuildStream = 0xb1d;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kSftStream = 0x5f;
constexpr std::uint64_t kGrpoStream = 0x6290;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kMatchStream = 0x3a7c;

const char* kSftCheckpoint = "sft.ckpt.json";
const char* kGrpoCheckpoint = "grpo.ckpt.json";

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Wraps everything but configuration errors into a StageError for `stage`.
template <typename F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

TokenSeq strip_eos(const Vocabulary& vocab, std::span<const TokenId> tokens) {
  TokenSeq out(tokens.begin(), tokens.end());
  if (!out.empty() && out.back() == vocab.id(Control::kEos)) out.pop_back();
  return out;
}

json curve(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

}  // namespace

// ---- configuration ---------------------------------------------------------

SweepSpec SweepSpec::defaults() {
  return {{{1.0, 0.0}, {0.7, 0.3}, {0.5, 0.5}, {0.3, 0.7}, {0.0, 1.0}}};
}

void SweepSpec::validate() const {
  if (pairs.empty()) throw ConfigError("sweep: no weight pairs");
  std::set<std::pair<double, double>> seen;
  for (const auto& p : pairs) {
    if (!seen.insert(p).second) throw ConfigError("sweep: duplicate weight pair");
    RewardConfig rc;
    rc.lambda_iclg = p.first;
    rc.lambda_lsa = p.second;
    rc.validate();
  }
}

ExperimentConfig ExperimentConfig::for_preset(Preset p) {
  ExperimentConfig c;
  c.preset = p;
  c.sft = SftConfig::for_preset(p);
  c.grpo = GrpoConfig::for_preset(p);
  c.propagate_seed();
  return c;
}

void ExperimentConfig::propagate_seed() {
  sft.seed = derive_seed(seed, {kSftStream});
  grpo.seed = derive_seed(seed, {kGrpoStream});
}

ExperimentConfig ExperimentConfig::from_json(const json& j, ExperimentConfig base) {
  require_object(j, "config");
  try {
    if (j.contains("preset")) {
      const auto seed = base.seed;
      const auto out = base.out_dir;
      base = for_preset(preset_from_name(j.at("preset").get<std::string>()));
      base.seed = seed;
      base.out_dir = out;
    }
    take(j, "seed", base.seed);
    base.propagate_seed();
    if (j.contains("out_dir")) base.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("corpus")) {
      const json& c = j.at("corpus");
      require_object(c, "corpus");
      take(c, "n_worlds", base.corpus.n_worlds);
      take(c, "n_instances", base.corpus.n_instances);
      take(c, "heldout", base.corpus.heldout);
      take(c, "trajs_per_instance", base.corpus.trajs_per_instance);
      take(c, "corruption_rate", base.corpus.corruption_rate);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      require_object(m, "model");
      take(m, "d_model", base.model.d_model);
      take(m, "n_layers", base.model.n_layers);
      take(m, "n_heads", base.model.n_heads);
      take(m, "context_length", base.model.context_length);
      take(m, "init_scale", base.model.init_scale);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      require_object(e, "eval");
      take(e, "samples_per_prompt", base.eval.samples_per_prompt);
      take(e, "temperature", base.eval.temperature);
      take(e, "max_new_tokens", base.eval.max_new_tokens);
      take(e, "greedy_max_new", base.eval.greedy_max_new);
    }
    take(j, "grpo_checkpoint_every", base.grpo_checkpoint_every);
    if (j.contains("sweep")) {
      base.sweep.pairs.clear();
      for (const json& p : j.at("sweep")) {
        if (!p.is_array() || p.size() != 2) throw ConfigError("sweep: pairs must be [l_iclg, l_lsa]");
        base.sweep.pairs.emplace_back(p[0].get<double>(), p[1].get<double>());
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  // Stage sections may carry their own seed; it wins over the derived one.
  if (j.contains("sft")) {
    require_object(j.at("sft"), "sft");
    json s = j.at("sft");
    s.erase("preset");
    base.sft = SftConfig::from_json(s, base.sft);
  }
  if (j.contains("grpo")) {
    require_object(j.at("grpo"), "grpo");
    json g = j.at("grpo");
    g.erase("preset");
    base.grpo = GrpoConfig::from_json(g, base.grpo);
  }
  base.validate();
  return base;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, std::move(base));
}

void ExperimentConfig::validate() const {
  if (corpus.n_worlds < 1) throw ConfigError("corpus: n_worlds must be positive");
  if (corpus.n_instances < 1) throw ConfigError("corpus: n_instances must be positive");
  if (corpus.heldout < 1) throw ConfigError("corpus: heldout must be positive");
  if (corpus.trajs_per_instance < 1) throw ConfigError("corpus: trajs_per_instance must be positive");
  if (!(corpus.corruption_rate >= 0.0 && corpus.corruption_rate < 1.0)) {
    throw ConfigError("corpus: corruption_rate must lie in [0, 1)");
  }
  if (model.d_model < 1 || model.n_layers < 1 || model.n_heads < 1) {
    throw ConfigError("model: sizes must be positive");
  }
  if (model.d_model % model.n_heads != 0) throw ConfigError("model: n_heads must divide d_model");
  if (model.context_length < 2) throw ConfigError("model: context_length must be at least 2");
  if (!(model.init_scale >= 0.0)) throw ConfigError("model: init_scale must be non-negative");
  if (eval.samples_per_prompt < 1) throw ConfigError("eval: samples_per_prompt must be positive");
  if (!(eval.temperature > 0.0)) throw ConfigError("eval: temperature must be positive");
  if (eval.max_new_tokens < 1 || eval.greedy_max_new < 1) {
    throw ConfigError("eval: token budgets must be positive");
  }
  if (grpo_checkpoint_every < 0) throw ConfigError("grpo_checkpoint_every must be non-negative");
  sft.validate();
  grpo.validate();
  sweep.validate();
}

json ExperimentConfig::to_json() const {
  json sw = json::array();
  for (const auto& [a, b] : sweep.pairs) sw.push_back({a, b});
  // out_dir stays out: reports from different directories must compare equal.
  return {{"seed", seed},
          {"preset", preset_name(preset)},
          {"corpus",
           {{"n_worlds", corpus.n_worlds},
            {"n_instances", corpus.n_instances},
            {"heldout", corpus.heldout},
            {"trajs_per_instance", corpus.trajs_per_instance},
            {"corruption_rate", corpus.corruption_rate}}},
          {"model",
           {{"d_model", model.d_model},
            {"n_layers", model.n_layers},
            {"n_heads", model.n_heads},
            {"context_length", model.context_length},
            {"init_scale", model.init_scale}}},
          {"eval",
           {{"samples_per_prompt", eval.samples_per_prompt},
            {"temperature", eval.temperature},
            {"max_new_tokens", eval.max_new_tokens},
            {"greedy_max_new", eval.greedy_max_new}}},
          {"sft", sft.to_json()},
          {"grpo", grpo.to_json()},
          {"grpo_checkpoint_every", grpo_checkpoint_every},
          {"sweep", sw}};
}

// ---- workspace -------------------------------------------------------------

RlPrompt make_rl_prompt(const Vocabulary& vocab, const DialogueInstance& inst) {
  return {inst.instance_id,
          encode_prompt(vocab, render_prompt(inst, "roleplay_infer", Perspective::kFirstPerson)),
          encode(vocab, serialize_answer_block(inst.golden_response))};
}

PolicyConfig policy_config_for(const ExperimentConfig& config, const Vocabulary& vocab) {
  PolicyConfig pc;
  pc.kind = PolicyKind::kMicroTransformer;
  pc.vocab_size = static_cast<int>(vocab.size());
  pc.context_length = config.model.context_length;
  pc.d_model = config.model.d_model;
  pc.n_layers = config.model.n_layers;
  pc.n_heads = config.model.n_heads;
  pc.pad_id = vocab.id(Control::kPad);
  pc.eos_id = vocab.id(Control::kEos);
  pc.validate();
  return pc;
}

Workspace prepare_workspace(const ExperimentConfig& config) {
  config.validate();
  const int total = config.corpus.n_instances + config.corpus.heldout;
  std::vector<DialogueInstance> all =
      generate_corpus(derive_seed(config.seed, {kCorpusStream}), config.corpus.n_worlds, total);

  // Seeded held-out split; both parts keep corpus order.
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.seed, {kSplitStream}));
  rng.shuffle(order.begin(), order.end());
  std::vector<bool> held(all.size(), false);
  for (int k = 0; k < config.corpus.heldout; ++k) held[order[k]] = true;

  Workspace ws;
  for (std::size_t i = 0; i < all.size(); ++i) {
    (held[i] ? ws.heldout : ws.train).push_back(std::move(all[i]));
  }

  BuildOptions bo;
  bo.trajs_per_instance = config.corpus.trajs_per_instance;
  bo.seed = derive_seed(config.seed, {kBuildStream});
  bo.rl_prompts = ws.train.size();
  bo.corruption_rate = config.corpus.corruption_rate;
  ws.data = build_datasets(ws.train, bo);

  std::vector<std::string> texts;
  for (const SftPair& p : ws.data.split.d_sft) {
    texts.push_back(p.prompt);
    texts.push_back(serialize_trace(p.target));
  }
  const auto& intents = grammar::self_intent_labels();
  const auto& emotions = grammar::self_emotion_labels();
  for (const auto* part : {&ws.train, &ws.heldout}) {
    for (const DialogueInstance& inst : *part) {
      texts.push_back(render_prompt(inst, "roleplay_infer", Perspective::kFirstPerson));
      texts.push_back(serialize_answer_block(inst.golden_response));
      // Every reply the matcher may offer as an option.
      for (std::size_t k = 0; k < intents.size(); ++k) {
        texts.push_back(grammar::reply_for(inst, intents[k], emotions[k % emotions.size()]).text());
      }
    }
  }
  ws.vocab = build_vocabulary(texts, default_reserved());
  ws.sft_examples = make_sft_examples(ws.vocab, ws.data.split.d_sft);

  std::map<std::string, const DialogueInstance*> by_id;
  for (const DialogueInstance& inst : ws.train) by_id[inst.instance_id] = &inst;
  for (const std::string& id : ws.data.split.d_rl_ids) {
    ws.rl_prompts.push_back(make_rl_prompt(ws.vocab, *by_id.at(id)));
  }
  for (const DialogueInstance& inst : ws.heldout) {
    ws.heldout_prompts.push_back(make_rl_prompt(ws.vocab, inst));
  }
  return ws;
}

// ---- evaluation ------------------------------------------------------------

json EvalSummary::to_json() const {
  return {{"mean_combined", mean_combined},
          {"mean_iclg", mean_iclg},
          {"mean_lsa", mean_lsa},
          {"format_fail_rate", format_fail_rate},
          {"judge_pass_rate", judge_pass_rate},
          {"per_prompt_combined", per_prompt_combined}};
}

EvalSummary evaluate_policy(const PolicyParams& policy, const PolicyParams& ref,
                            const Workspace& ws, const EvalConfig& eval,
                            const RewardConfig& reward, std::uint64_t seed) {
  const std::size_t n = ws.heldout_prompts.size();
  if (n == 0) throw PreconditionError("evaluate_policy: no held-out prompts");
  const int k = eval.samples_per_prompt;

  struct PromptStats {
    double combined = 0, iclg = 0, lsa = 0;
    int failed = 0, parsed = 0, judged_ok = 0;
  };
  std::vector<PromptStats> stats(n);
  std::vector<std::exception_ptr> errors(n);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const RlPrompt& p = ws.heldout_prompts[i];
      const RewardScorer scorer(ws.vocab, policy, ref, reward, p.x, p.d_golden);
      PromptStats& s = stats[i];
      for (int j = 0; j < k; ++j) {
        SampleOptions o;
        o.temperature = eval.temperature;
        o.max_new = eval.max_new_tokens;
        o.seed = derive_seed(seed, {i, static_cast<std::uint64_t>(j)});
        const SampleResult r = sample_with_logprobs(policy, p.x, o);
        const RewardBreakdown b = scorer.score_tokens(r.tokens);
        s.combined += b.combined;
        s.iclg += b.iclg;
        s.lsa += b.lsa;
        if (b.format_failed) {
          ++s.failed;
          continue;
        }
        ++s.parsed;
        const Trajectory t = parse_trace(decode(ws.vocab, strip_eos(ws.vocab, r.tokens)));
        if (t.parsed() && judge_stub(ws.heldout[i], t).accepted) ++s.judged_ok;
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalSummary out;
  double comb = 0, iclg = 0, lsa = 0;
  int failed = 0, parsed = 0, judged = 0;
  for (const PromptStats& s : stats) {
    comb += s.combined;
    iclg += s.iclg;
    lsa += s.lsa;
    failed += s.failed;
    parsed += s.parsed;
    judged += s.judged_ok;
    out.per_prompt_combined.push_back(s.combined / k);
  }
  const double total = static_cast<double>(n) * k;
  out.mean_combined = comb / total;
  out.mean_iclg = iclg / total;
  out.mean_lsa = lsa / total;
  out.format_fail_rate = failed / total;
  out.judge_pass_rate = parsed > 0 ? static_cast<double>(judged) / parsed : 0.0;
  return out;
}

double greedy_parse_rate(const PolicyParams& policy, const Workspace& ws, const EvalConfig& eval) {
  const std::size_t n = ws.heldout_prompts.size();
  if (n == 0) throw PreconditionError("greedy_parse_rate: no held-out prompts");
  std::vector<int> ok(n, 0);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      SampleOptions o;
      o.greedy = true;
      o.max_new = eval.greedy_max_new;
      const SampleResult r = sample_with_logprobs(policy, ws.heldout_prompts[i].x, o);
      ok[i] = parse_trace(decode(ws.vocab, strip_eos(ws.vocab, r.tokens))).parsed() ? 1 : 0;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return static_cast<double>(std::accumulate(ok.begin(), ok.end(), 0)) / static_cast<double>(n);
}

// ---- stages ----------------------------------------------------------------

SftOutcome run_sft_stage(const ExperimentConfig& config, const Workspace& ws,
                         const std::filesystem::path& ckpt_dir) {
  return in_stage("sft", [&] {
    const PolicyConfig pc = policy_config_for(config, ws.vocab);
    const PolicyParams init =
        init_params(pc, derive_seed(config.seed, {kInitStream}), config.model.init_scale);
    const std::vector<SftExample> fitted =
        fit_to_length(ws.sft_examples, std::min(config.sft.max_length, pc.context_length));

    SftOutcome out;
    out.nll_before = sft_loss(init, fitted);
    EpochCallback on_epoch;
    if (!ckpt_dir.empty()) {
      std::filesystem::create_directories(ckpt_dir);
      on_epoch = [&](int epoch, const PolicyParams& p) {
        save_checkpoint(ckpt_dir / ("sft.epoch" + std::to_string(epoch + 1) + ".ckpt.json"), p);
      };
    }
    SftResult r = sft_train(init, fitted, config.sft, on_epoch);
    out.params = std::move(r.params);
    out.losses = std::move(r.losses);
    out.nll_after = sft_loss(out.params, fitted);
    out.greedy_parse_rate = greedy_parse_rate(out.params, ws, config.eval);
    if (!ckpt_dir.empty()) {
      std::filesystem::create_directories(ckpt_dir);
      save_checkpoint(ckpt_dir / kSftCheckpoint, out.params);
    }
    return out;
  });
}

GrpoOutcome run_grpo_stage(const ExperimentConfig& config, const Workspace& ws,
                           const PolicyParams& sft_params, const GrpoConfig& grpo,
                           const std::filesystem::path& ckpt_dir) {
  const PolicyParams ref = snapshot(sft_params);
  const std::uint64_t eval_seed = derive_seed(config.seed, {kEvalStream});
  GrpoOutcome out;
  out.before = in_stage("eval", [&] {
    return evaluate_policy(ref, ref, ws, config.eval, grpo.reward, eval_seed);
  });
  GrpoResult r = in_stage("grpo", [&] {
    StepCallback on_step;
    if (!ckpt_dir.empty() && config.grpo_checkpoint_every > 0) {
      std::filesystem::create_directories(ckpt_dir);
      on_step = [&](const GrpoStepMetrics& m, const PolicyParams& p) {
        const int done = m.step + 1;
        if (done % config.grpo_checkpoint_every == 0) {
          save_checkpoint(ckpt_dir / ("grpo.step" + std::to_string(done) + ".ckpt.json"), p);
        }
      };
    }
    return grpo_train(sft_params, ws.rl_prompts, ws.vocab, grpo, on_step);
  });
  out.params = std::move(r.params);
  out.history = std::move(r.history);
  out.after = in_stage("eval", [&] {
    return evaluate_policy(out.params, ref, ws, config.eval, grpo.reward, eval_seed);
  });
  return out;
}

namespace {

json corpus_report(const Workspace& ws) {
  const StageCounts& c = ws.data.counts;
  json heldout_ids = json::array();
  for (const DialogueInstance& inst : ws.heldout) heldout_ids.push_back(inst.instance_id);
  return {{"train_instances", ws.train.size()},
          {"heldout_ids", heldout_ids},
          {"vocab_size", ws.vocab.size()},
          {"candidates", c.candidates},
          {"after_format", c.after_format},
          {"after_judge", c.after_judge},
          {"injected", c.injected},
          {"injected_detected", c.injected_detected},
          {"clean_rejected", c.clean_rejected},
          {"reject_reasons", c.reject_reasons},
          {"d_sft", ws.data.split.d_sft.size()},
          {"d_rl", ws.rl_prompts.size()}};
}

json sft_report(const SftOutcome& s) {
  return {{"nll_before", s.nll_before},
          {"nll_after", s.nll_after},
          {"nll_ratio", s.nll_after / s.nll_before},
          {"greedy_parse_rate", s.greedy_parse_rate},
          {"steps", s.losses.size()}};
}

// Reward proxies standing in for judged role-play dimensions.
json proxy_scores(const EvalSummary& e) {
  return {{"character_fidelity (proxy: mean LSA)", e.mean_lsa},
          {"storyline_consistency (proxy: mean ICLG)", e.mean_iclg},
          {"storyline_quality (proxy: format pass rate)", 1.0 - e.format_fail_rate},
          {"anthropomorphism (proxy: judge pass rate)", e.judge_pass_rate}};
}

double paired_improvement(const EvalSummary& before, const EvalSummary& after) {
  std::vector<double> d(before.per_prompt_combined.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = after.per_prompt_combined[i] - before.per_prompt_combined[i];
  }
  return mean_of(d);
}

std::vector<double> metric_curve(std::span<const GrpoStepMetrics> h,
                                 double GrpoStepMetrics::*field) {
  std::vector<double> out;
  for (const GrpoStepMetrics& m : h) out.push_back(m.*field);
  return out;
}

}  // namespace

json run_pipeline(const ExperimentConfig& config,
                  const std::optional<std::filesystem::path>& sft_checkpoint) {
  config.validate();
  const auto& dir = config.out_dir;
  const Workspace ws = in_stage("corpus", [&] { return prepare_workspace(config); });
  in_stage("corpus", [&] {
    std::filesystem::create_directories(dir);
    write_sft_pairs(dir / "d_sft.jsonl", ws.data.split.d_sft);
    std::ofstream(dir / "vocab.json") << ws.vocab.to_json().dump() << '\n';
    return 0;
  });

  SftOutcome sft;
  std::string sft_path = kSftCheckpoint;
  if (sft_checkpoint) {
    sft.params = in_stage("sft", [&] { return load_checkpoint(*sft_checkpoint); });
    if (sft.params.config.vocab_size != static_cast<int>(ws.vocab.size())) {
      throw ConfigError("checkpoint vocabulary does not match the configured corpus");
    }
    sft_path = sft_checkpoint->filename().string();
  } else {
    sft = run_sft_stage(config, ws, dir);
    in_stage("sft", [&] {
      write_loss_csv(dir / "sft_loss.csv", sft.losses);
      return 0;
    });
  }

  const GrpoOutcome g = run_grpo_stage(config, ws, sft.params, config.grpo, dir);
  in_stage("grpo", [&] {
    save_checkpoint(dir / kGrpoCheckpoint, g.params);
    write_metrics_jsonl(dir / "grpo_metrics.jsonl", g.history);
    return 0;
  });

  json report;
  report["config"] = config.to_json();
  report["corpus"] = corpus_report(ws);
  if (!sft_checkpoint) report["sft"] = sft_report(sft);
  report["grpo"] = {{"steps", g.history.size()},
                    {"before", g.before.to_json()},
                    {"after", g.after.to_json()},
                    {"paired_improvement", paired_improvement(g.before, g.after)},
                    {"proxy_scores_before", proxy_scores(g.before)},
                    {"proxy_scores_after", proxy_scores(g.after)}};
  json sft_epochs = json::array(), grpo_steps = json::array();
  if (!sft_checkpoint) {
    for (int e = 1; e <= config.sft.epochs; ++e) {
      sft_epochs.push_back("sft.epoch" + std::to_string(e) + ".ckpt.json");
    }
  }
  const int every = config.grpo_checkpoint_every;
  for (int k = every; every > 0 && k <= config.grpo.steps; k += every) {
    grpo_steps.push_back("grpo.step" + std::to_string(k) + ".ckpt.json");
  }
  report["checkpoints"] = {{"sft", sft_path},
                           {"grpo", kGrpoCheckpoint},
                           {"sft_epochs", sft_epochs},
                           {"grpo_periodic", grpo_steps}};
  report["curves"] = {
      {"sft_loss", curve(sft.losses)},
      {"grpo_reward", curve(metric_curve(g.history, &GrpoStepMetrics::mean_reward))},
      {"grpo_kl", curve(metric_curve(g.history, &GrpoStepMetrics::mean_kl))},
      {"grpo_format_fail", curve(metric_curve(g.history, &GrpoStepMetrics::format_fail_rate))}};
  in_stage("report", [&] {
    emit_report(dir / "report.json", report);
    return 0;
  });
  return report;
}

namespace {

struct TailMeans {
  double iclg = 0.0, lsa = 0.0, combined = 0.0, format_fail = 0.0;
};

// Rollout reward components averaged over the last tenth of training.
TailMeans tail_means(const std::vector<GrpoStepMetrics>& history) {
  TailMeans t;
  if (history.empty()) return t;
  const std::size_t k = std::max<std::size_t>(1, history.size() / 10);
  for (std::size_t i = history.size() - k; i < history.size(); ++i) {
    t.iclg += history[i].mean_iclg;
    t.lsa += history[i].mean_lsa;
    t.combined += history[i].mean_reward;
    t.format_fail += history[i].format_fail_rate;
  }
  const double n = static_cast<double>(k);
  t.iclg /= n;
  t.lsa /= n;
  t.combined /= n;
  t.format_fail /= n;
  return t;
}

}  // namespace

json run_sweep(const ExperimentConfig& config, const SweepSpec& sweep,
               const std::optional<std::filesystem::path>& sft_checkpoint) {
  config.validate();
  sweep.validate();
  const auto& dir = config.out_dir;
  const Workspace ws = in_stage("corpus", [&] { return prepare_workspace(config); });

  std::filesystem::path ckpt;
  json sft_info;
  if (sft_checkpoint) {
    ckpt = *sft_checkpoint;
  } else {
    const SftOutcome s = run_sft_stage(config, ws, dir);
    ckpt = dir / kSftCheckpoint;
    sft_info = sft_report(s);
  }
  const std::string bytes = in_stage("sweep", [&] { return read_bytes(ckpt); });
  const PolicyParams probe = in_stage("sweep", [&] { return params_from_json(json::parse(bytes)); });
  if (probe.config.vocab_size != static_cast<int>(ws.vocab.size())) {
    throw ConfigError("sweep: checkpoint vocabulary does not match the configured corpus");
  }

  const std::uint64_t eval_seed = derive_seed(config.seed, {kEvalStream});
  json rows = json::array();
  json curves = json::object();
  std::size_t best_lsa = 0, best_iclg = 0;
  std::vector<TailMeans> finals;
  for (std::size_t r = 0; r < sweep.pairs.size(); ++r) {
    // Every row starts from the same checkpoint bytes.
    const PolicyParams start = params_from_json(json::parse(bytes));
    GrpoConfig gc = config.grpo;
    gc.reward.lambda_iclg = sweep.pairs[r].first;
    gc.reward.lambda_lsa = sweep.pairs[r].second;
    const PolicyParams ref = snapshot(start);
    GrpoResult res = in_stage("grpo", [&] { return grpo_train(start, ws.rl_prompts, ws.vocab, gc); });
    const EvalSummary e = in_stage("eval", [&] {
      return evaluate_policy(res.params, ref, ws, config.eval, gc.reward, eval_seed);
    });
    const TailMeans t = tail_means(res.history);
    rows.push_back({{"lambda_iclg", gc.reward.lambda_iclg},
                    {"lambda_lsa", gc.reward.lambda_lsa},
                    {"final_mean_iclg", t.iclg},
                    {"final_mean_lsa", t.lsa},
                    {"final_mean_combined", t.combined},
                    {"final_format_fail_rate", t.format_fail},
                    {"heldout", e.to_json()}});
    curves["row" + std::to_string(r) + "_reward"] =
        curve(metric_curve(res.history, &GrpoStepMetrics::mean_reward));
    curves["row" + std::to_string(r) + "_iclg"] =
        curve(metric_curve(res.history, &GrpoStepMetrics::mean_iclg));
    curves["row" + std::to_string(r) + "_lsa"] =
        curve(metric_curve(res.history, &GrpoStepMetrics::mean_lsa));
    finals.push_back(t);
    if (t.lsa > finals[best_lsa].lsa) best_lsa = r;
    if (t.iclg > finals[best_iclg].iclg) best_iclg = r;
  }

  json report;
  report["config"] = config.to_json();
  report["heldout_ids"] = corpus_report(ws).at("heldout_ids");
  report["sft_checkpoint"] = {{"bytes", bytes.size()}, {"fnv1a", hex64(fnv1a(bytes))}};
  if (!sft_info.is_null()) report["sft"] = sft_info;
  report["rows"] = rows;
  report["argmax_final_mean_lsa"] = best_lsa;
  report["argmax_final_mean_iclg"] = best_iclg;
  report["curves"] = curves;
  in_stage("report", [&] {
    std::filesystem::create_directories(dir);
    emit_report(dir / "sweep.json", report);
    return 0;
  });
  return report;
}

// ---- semantic matching -----------------------------------------------------

MatchResult semantic_match(const PolicyParams& ref, const Vocabulary& vocab,
                           std::span<const TokenId> x, std::span<const std::string> options,
                           const std::string& target) {
  if (options.size() < 2) throw PreconditionError("semantic_match: need at least two options");
  const TokenSeq t = encode(vocab, target);
  if (t.empty()) throw PreconditionError("semantic_match: empty target");
  const Tensor th = hidden_states(ref, x, t);
  MatchResult out;
  for (std::size_t i = 0; i < options.size(); ++i) {
    const TokenSeq o = encode(vocab, options[i]);
    if (o.empty()) throw PreconditionError("semantic_match: empty option " + std::to_string(i));
    out.scores.push_back(lsa_from_hidden(th, hidden_states(ref, x, o)).value);
    if (out.scores[i] > out.scores[out.choice]) out.choice = i;
  }
  return out;
}

std::vector<MatchItem> build_match_items(std::span<const DialogueInstance> instances,
                                         std::uint64_t seed) {
  const auto& intents = grammar::self_intent_labels();
  const auto& emotions = grammar::self_emotion_labels();
  std::vector<MatchItem> items;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const DialogueInstance& inst = instances[i];
    const auto golden =
        grammar::reply_lexicon(inst.labels.self_intention, inst.labels.self_emotion);
    std::vector<std::pair<std::string, std::string>> pool;
    for (const auto& in : intents) {
      for (const auto& em : emotions) {
        const auto lex = grammar::reply_lexicon(in, em);
        const bool disjoint = std::none_of(lex.begin(), lex.end(),
                                           [&](const std::string& w) { return golden.count(w) > 0; });
        if (disjoint) pool.emplace_back(in, em);
      }
    }
    if (pool.size() < 3) {
      throw PreconditionError("build_match_items: too few disjoint distractors for " +
                              inst.instance_id);
    }
    Rng rng(derive_seed(seed, {kMatchStream, i}));
    rng.shuffle(pool.begin(), pool.end());

    MatchItem item;
    item.instance_id = inst.instance_id;
    item.prompt = render_prompt(inst, "roleplay_infer", Perspective::kFirstPerson);
    item.target = inst.golden_response.text();
    item.answer = static_cast<std::size_t>(rng.below(4));
    for (std::size_t k = 0, d = 0; k < 4; ++k) {
      if (k == item.answer) {
        item.options.push_back(item.target);
      } else {
        item.options.push_back(grammar::reply_for(inst, pool[d].first, pool[d].second).text());
        ++d;
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

// ---- reports ---------------------------------------------------------------

namespace {

std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

void dump_into(const json& j, int indent, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map: keys already sorted
        if (!first) out += ",\n";
        first = false;
        out += inner + json(it.key()).dump() + ": ";
        dump_into(it.value(), indent + 1, out);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      const bool scalars = std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_primitive(); });
      if (scalars) {
        out += "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          if (i) out += ", ";
          dump_into(j[i], indent + 1, out);
        }
        out += "]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        out += inner;
        dump_into(j[i], indent + 1, out);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::number_float:
      out += format_double(j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

}  // namespace

std::string canonical_dump(const json& j) {
  std::string out;
  dump_into(j, 0, out);
  out += "\n";
  return out;
}

void emit_report(const std::filesystem::path& path, const json& report) {
  auto write = [](const std::filesystem::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << body;
    if (!out) throw IoError("write failed for " + p.string());
  };
  write(path, canonical_dump(report));
  if (!report.is_object() || !report.contains("curves")) return;
  const json& curves = report.at("curves");
  if (!curves.is_object()) return;
  for (auto it = curves.begin(); it != curves.end(); ++it) {
    const json& values = it.value();
    if (!values.is_array()) continue;
    if (!std::all_of(values.begin(), values.end(), [](const json& v) { return v.is_number(); })) continue;
    std::string csv = "step,value\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
      csv += std::to_string(i) + "," + format_double(values[i].get<double>()) + "\n";
    }
    auto csv_path = path;
    csv_path.replace_filename(path.stem().string() + "." + it.key() + ".csv");
    write(csv_path, csv);
  }
}

}  // namespace dualcog
