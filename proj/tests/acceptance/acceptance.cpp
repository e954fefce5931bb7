// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. `--only A1,A6` restricts the run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dualcog/corpus.hpp"
#include "dualcog/grpo.hpp"
#include "dualcog/harness.hpp"
#include "dualcog/rewards.hpp"
#include "dualcog/rng.hpp"
#include "dualcog/sft.hpp"

using namespace dualcog;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
  std::printf("%s %s %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PolicyParams tabular(int vocab, double scale, std::uint64_t seed) {
  PolicyConfig c;
  c.kind = PolicyKind::kTabular;
  c.vocab_size = vocab;
  c.window = 1;
  c.context_length = 32;
  return init_params(c, seed, scale);
}

void set_row(PolicyParams& p, int key, int tok, double prob) {
  Tensor& t = p.tensors.at("table");
  for (int j = 0; j < t.cols; ++j) t(key, j) = std::log((1.0 - prob) / (t.cols - 1));
  t(key, tok) = std::log(prob);
}

PolicyParams micro(int vocab, std::uint64_t seed) {
  PolicyConfig c;
  c.vocab_size = vocab;
  c.context_length = 16;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  return init_params(c, seed, 0.3);
}

Tensor rows2(std::vector<double> v) {
  Tensor t(static_cast<int>(v.size() / 2), 2);
  t.data = std::move(v);
  return t;
}

// ---- A1 --------------------------------------------------------------------

void a1() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

  auto p = tabular(6, 0.0, 0);
  set_row(p, 4, 3, 0.8);
  set_row(p, 0, 3, 0.2);
  set_row(p, 3, 5, 0.5);
  track(iclg_reward(p, TokenSeq{0}, TokenSeq{4}, TokenSeq{3, 5}, 20.0), 2.0);
  auto q = tabular(6, 0.0, 0);
  set_row(q, 4, 3, 0.9);
  set_row(q, 0, 3, 0.3);
  track(iclg_reward(q, TokenSeq{0}, TokenSeq{4}, TokenSeq{3}, 20.0), 3.0);

  track(lsa_from_hidden(rows2({1, 0, 0, 1}), rows2({1, 0, 1, 0})).value, std::sqrt(0.5));
  RewardConfig rc;
  track(combined_reward(rc, 2.0, std::sqrt(0.5)), 0.7 * 2.0 + 0.3 * std::sqrt(0.5));
  track(std::round(combined_reward(rc, 2.0, 0.707107) * 1e6) / 1e6, 1.612132);

  const auto adv = compute_advantages(std::vector<double>{1, 2, 3});
  track(adv[0], -std::sqrt(1.5));
  track(adv[1], 0.0);
  track(adv[2], std::sqrt(1.5));
  const auto kl = per_token_kl(std::vector<double>{0.0}, std::vector<double>{std::log(2.0)});
  track(kl[0], 1.0 - std::log(2.0));

  GrpoConfig gc;
  gc.kl_beta = 0.0;
  for (auto [r, a, want] : {std::tuple{1.5, 1.0, -1.2}, std::tuple{0.5, -1.0, 0.8}}) {
    const auto u = tabular(5, 0.0, 0);
    RolloutGroup g;
    g.x = {0};
    RolloutTrajectory t;
    t.tokens = {3};
    const double lp = logprobs(u, g.x, t.tokens)[0];
    t.old_logprobs = {lp - std::log(r)};
    t.ref_logprobs = {lp};
    g.trajectories = {t};
    g.advantages = {a};
    std::vector<RolloutGroup> gs{g};
    track(grpo_loss(u, gs, u, gc), want);
  }

  // Tabular brute force: ratio of explicit sequence probabilities.
  const int v = 6;
  const auto bp = tabular(v, 1.5, 17);
  const Tensor& tab = bp.at("table");
  auto prob = [&](TokenId prev, TokenId tok) {
    double z = 0;
    for (int j = 0; j < v; ++j) z += std::exp(tab(prev, j));
    return std::exp(tab(prev, tok)) / z;
  };
  double brute_worst = 0.0;
  for (TokenId xl = 0; xl < v; ++xl)
    for (TokenId cl = 0; cl < v; ++cl)
      for (TokenId d0 = 0; d0 < v; ++d0)
        for (TokenId d1 = 0; d1 < v; ++d1) {
          const double with = prob(cl, d0) * prob(d0, d1);
          const double without = prob(xl, d0) * prob(d0, d1);
          const double want = std::sqrt(with / without);
          const double got = iclg_reward(bp, TokenSeq{0, xl}, TokenSeq{cl}, TokenSeq{d0, d1}, 20.0);
          brute_worst = std::max(brute_worst, std::abs(got - want));
        }
  const double secs = seconds_since(t0);
  report("A1", worst < 1e-9 && brute_worst < 1e-12 && secs < 5.0,
         fmt("reward oracles: max err %.2e, brute force %.2e, %.2f s", worst, brute_worst, secs));
}

// ---- A2 --------------------------------------------------------------------

double fd_max_rel(PolicyParams params, const std::function<double(const PolicyParams&)>& loss,
                  const Gradients& g) {
  const double eps = 1e-4;
  double worst = 0.0;
  for (auto& [name, t] : params.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t.data[i];
      t.data[i] = keep + eps;
      const double up = loss(params);
      t.data[i] = keep - eps;
      const double down = loss(params);
      t.data[i] = keep;
      const double num = (up - down) / (2 * eps);
      const double a = g.at(name).data[i];
      const double scale = std::max(std::abs(a), std::abs(num));
      if (scale > 1e-6) worst = std::max(worst, std::abs(a - num) / scale);
    }
  }
  return worst;
}

void a2() {
  const auto t0 = Clock::now();
  const int v = 10;
  auto theta = micro(v, 21);
  Rng rng(3);
  std::vector<SftExample> batch(3);
  for (auto& e : batch) {
    e.prompt = {0, 3 + static_cast<TokenId>(rng.below(v - 3))};
    for (int i = 0; i < 4; ++i) e.target.push_back(3 + static_cast<TokenId>(rng.below(v - 3)));
  }
  const double sft_err = fd_max_rel(
      theta, [&](const PolicyParams& q) { return sft_loss(q, batch); },
      sft_loss_and_grad(theta, batch).grads);

  const auto old = snapshot(micro(v, 21));
  const auto ref = snapshot(micro(v, 22));
  for (auto& [_, t] : theta.tensors)
    for (double& x : t.data) x += 0.05 * rng.normal();
  GrpoConfig gc;
  gc.group_size = 3;
  gc.max_new_tokens = 4;
  gc.kl_beta = 0.3;
  std::vector<RlPrompt> ps{{"a", {0, 4, 5}, {6}}, {"b", {0, 7}, {8}}};
  auto groups = rollout(old, ps, gc);
  for (auto& g : groups) {
    g.advantages.clear();
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) g.advantages.push_back(rng.normal());
  }
  const double grpo_err = fd_max_rel(
      theta, [&](const PolicyParams& q) { return grpo_loss(q, groups, ref, gc); },
      grpo_loss_and_grad(theta, groups, ref, gc).grads);
  const double secs = seconds_since(t0);
  report("A2", theta.parameter_count() <= 5000 && sft_err < 1e-4 && grpo_err < 1e-4 && secs < 60.0,
         fmt("gradient checks on %zu params: sft %.2e, grpo %.2e, %.1f s",
             theta.parameter_count(), sft_err, grpo_err, secs));
}

// ---- A3-A5 -----------------------------------------------------------------

struct DeskRun {
  SftOutcome sft;
  GrpoOutcome grpo;
  json sweep;
  double sft_secs = 0, grpo_secs = 0, sweep_secs = 0;
  std::string sft_body, grpo_body, sweep_body;
};

DeskRun desk_run(const fs::path& dir, bool with_sweep) {
  fs::remove_all(dir);
  ExperimentConfig cfg = ExperimentConfig::for_preset(Preset::kDesk);
  cfg.out_dir = dir;
  const Workspace ws = prepare_workspace(cfg);
  DeskRun r;
  auto t0 = Clock::now();
  r.sft = run_sft_stage(cfg, ws, dir);
  r.sft_secs = seconds_since(t0);
  r.sft_body = canonical_dump({{"nll_before", r.sft.nll_before},
                               {"nll_after", r.sft.nll_after},
                               {"greedy_parse_rate", r.sft.greedy_parse_rate},
                               {"losses", r.sft.losses},
                               {"checkpoint", slurp(dir / "sft.ckpt.json").size()}});
  t0 = Clock::now();
  r.grpo = run_grpo_stage(cfg, ws, r.sft.params, cfg.grpo);
  r.grpo_secs = seconds_since(t0);
  json hist = json::array();
  for (const auto& m : r.grpo.history) hist.push_back(m.to_json());
  r.grpo_body = canonical_dump(
      {{"before", r.grpo.before.to_json()}, {"after", r.grpo.after.to_json()}, {"history", hist}});
  if (with_sweep) {
    t0 = Clock::now();
    r.sweep = run_sweep(cfg, cfg.sweep, dir / "sft.ckpt.json");
    r.sweep_secs = seconds_since(t0);
    r.sweep_body = slurp(dir / "sweep.json");
  }
  return r;
}

void a3(const DeskRun& r) {
  const double ratio = r.sft.nll_after / r.sft.nll_before;
  report("A3", ratio < 0.5 && r.sft.greedy_parse_rate >= 0.95 && r.sft_secs < 180.0,
         fmt("sft: nll %.4f -> %.4f (ratio %.3f), greedy parse %.3f, %.1f s", r.sft.nll_before,
             r.sft.nll_after, ratio, r.sft.greedy_parse_rate, r.sft_secs));
}

void a4(const DeskRun& r) {
  const auto& b = r.grpo.before.per_prompt_combined;
  const auto& a = r.grpo.after.per_prompt_combined;
  double paired = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) paired += a[i] - b[i];
  paired /= static_cast<double>(b.size());
  const double fb = r.grpo.before.format_fail_rate, fa = r.grpo.after.format_fail_rate;
  report("A4", b.size() == 20 && paired > 0.0 && fa <= fb && r.grpo_secs < 600.0,
         fmt("grpo: combined %.4f -> %.4f over %zu prompts (paired %+.4f), format fail %.3f -> "
             "%.3f, %.1f s",
             r.grpo.before.mean_combined, r.grpo.after.mean_combined, b.size(), paired, fb, fa,
             r.grpo_secs));
}

void a5(const DeskRun& r) {
  const json& rows = r.sweep.at("rows");
  std::size_t pure_lsa = rows.size(), pure_iclg = rows.size();
  std::string table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double li = rows[i].at("lambda_iclg"), ll = rows[i].at("lambda_lsa");
    if (li == 0.0 && ll == 1.0) pure_lsa = i;
    if (li == 1.0 && ll == 0.0) pure_iclg = i;
    table += fmt(" (%.1f,%.1f): iclg %.4f lsa %.4f;", li, ll,
                 rows[i].at("final_mean_iclg").get<double>(),
                 rows[i].at("final_mean_lsa").get<double>());
  }
  const std::size_t best_lsa = r.sweep.at("argmax_final_mean_lsa");
  const std::size_t best_iclg = r.sweep.at("argmax_final_mean_iclg");
  report("A5",
         rows.size() == 5 && best_lsa == pure_lsa && best_iclg == pure_iclg && r.sweep_secs < 2700.0,
         fmt("sweep of %zu rows, %.0f s:", rows.size(), r.sweep_secs) + table);
}

// ---- A6 --------------------------------------------------------------------

void a6() {
  const auto corpus = generate_corpus(7, 8, 200);
  BuildOptions bo;
  bo.seed = 11;
  bo.trajs_per_instance = 4;
  bo.corruption_rate = 0.1;
  const BuildResult r = build_datasets(corpus, bo);
  const StageCounts& c = r.counts;
  const bool ok = c.injected > 0 && c.injected == c.candidates / 10 &&
                  c.injected_detected == c.injected && c.clean_rejected == 0 &&
                  r.split.d_sft.size() == c.candidates - c.injected;
  report("A6", ok,
         fmt("filters: %zu candidates, %zu injected, %zu detected, %zu clean rejected", c.candidates,
             c.injected, c.injected_detected, c.clean_rejected));
}

// ---- A7 --------------------------------------------------------------------

void a7(const DeskRun& a, const DeskRun& b) {
  const bool sft = a.sft_body == b.sft_body, grpo = a.grpo_body == b.grpo_body,
             sweep = a.sweep_body == b.sweep_body && !a.sweep_body.empty();
  report("A7", sft && grpo && sweep,
         fmt("repeat run: sft %s, grpo %s, sweep %s (%zu bytes)", sft ? "identical" : "differs",
             grpo ? "identical" : "differs", sweep ? "identical" : "differs",
             a.sft_body.size() + a.grpo_body.size() + a.sweep_body.size()));
}

// ---- A8 --------------------------------------------------------------------

void a8() {
  Rng rng(8);
  std::size_t cases = 0;
  bool ok = true;
  for (int i = 0; i < 10000; ++i, ++cases) {
    const std::size_t n = 2 + rng.below(14);
    const double scale = std::pow(10.0, rng.uniform() * 4.0 - 2.0), shift = rng.normal() * 50.0;
    std::vector<double> r(n), s(n);
    for (std::size_t k = 0; k < n; ++k) {
      r[k] = scale * rng.normal();
      s[k] = r[k] + shift;
    }
    const auto a = compute_advantages(r), b = compute_advantages(s);
    double mean = 0.0, var = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(n);
    for (double x : a) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);
    ok = ok && std::abs(mean) < 1e-9 && std::abs(var - 1.0) < 1e-9;
    for (std::size_t k = 0; k < n; ++k) ok = ok && std::abs(a[k] - b[k]) < 1e-6;

    const std::vector<double> flat(n, shift);
    for (double x : compute_advantages(flat)) ok = ok && x == 0.0;

    const double lt = -8.0 * rng.uniform(), lr = -8.0 * rng.uniform();
    ok = ok && per_token_kl(std::vector<double>{lt}, std::vector<double>{lr})[0] >= 0.0;

    Tensor h1(1 + static_cast<int>(rng.below(4)), 3), h2(1 + static_cast<int>(rng.below(4)), 3);
    for (double& x : h1.data) x = rng.normal();
    for (double& x : h2.data) x = rng.normal();
    const double l = lsa_from_hidden(h1, h2).value;
    ok = ok && l >= -1.0 && l <= 1.0;
  }
  report("A8", ok && cases >= 10000,
         fmt("invariants over %zu random cases: advantage mean/std, shift, degenerate, k3, lsa",
             cases));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") {
      std::stringstream ss(argv[i + 1]);
      std::string id;
      while (std::getline(ss, id, ',')) only.insert(id);
    }
  }
  auto want = [&](const char* id) { return only.empty() || only.count(id); };
  const fs::path root = fs::temp_directory_path() / "dualcog_acceptance";

  try {
    if (want("A1")) a1();
    if (want("A2")) a2();
    if (want("A6")) a6();
    if (want("A8")) a8();
    const bool sweep = want("A5") || want("A7");
    if (want("A3") || want("A4") || sweep) {
      const DeskRun first = desk_run(root / "run1", sweep);
      if (want("A3")) a3(first);
      if (want("A4")) a4(first);
      if (want("A5")) a5(first);
      if (want("A7")) a7(first, desk_run(root / "run2", true));
    }
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
