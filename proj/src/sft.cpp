#include "dualcog/sft.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dualcog/errors.hpp"
#include "dualcog/optim.hpp"
#include "dualcog/rng.hpp"

namespace dualcog {

std::string preset_name(Preset p) { return p == Preset::kPaperFaithful ? "paper" : "desk"; }

Preset preset_from_name(const std::string& name) {
  if (name == "paper") return Preset::kPaperFaithful;
  if (name == "desk") return Preset::kDesk;
  throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
}

SftConfig SftConfig::for_preset(Preset p) {
  SftConfig c;
  c.preset = p;
  if (p == Preset::kPaperFaithful) {
    c.learning_rate = 1e-5;
    c.batch_size = 64;
    c.epochs = 2;
    c.max_length = 10240;
  } else {
    c.learning_rate = 3e-3;
    c.batch_size = 4;
    c.epochs = 2;
    c.max_length = 256;
  }
  return c;
}

void SftConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("sft: learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("sft: batch_size must be positive");
  if (epochs < 1) throw ConfigError("sft: epochs must be positive");
  if (max_length < 2) throw ConfigError("sft: max_length must be at least 2");
}

nlohmann::json SftConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"epochs", epochs},               {"max_length", max_length},
          {"seed", seed},                   {"preset", preset_name(preset)}};
}

SftConfig SftConfig::from_json(const nlohmann::json& j, SftConfig base) {
  try {
    if (j.contains("preset")) {
      const std::uint64_t seed = base.seed;
      base = for_preset(preset_from_name(j.at("preset").get<std::string>()));
      base.seed = seed;
    }
    if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) base.epochs = j.at("epochs").get<int>();
    if (j.contains("max_length")) base.max_length = j.at("max_length").get<int>();
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sft config: ") + e.what());
  }
  base.validate();
  return base;
}

TokenSeq encode_prompt(const Vocabulary& vocab, std::string_view prompt) {
  TokenSeq out{vocab.id(Control::kBos)};
  const TokenSeq body = encode(vocab, prompt);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

TokenSeq encode_target(const Vocabulary& vocab, const Trajectory& target) {
  TokenSeq out = encode(vocab, serialize_trace(target));
  out.push_back(vocab.id(Control::kEos));
  return out;
}

std::vector<SftExample> make_sft_examples(const Vocabulary& vocab,
                                          std::span<const SftPair> pairs) {
  std::vector<SftExample> out;
  out.reserve(pairs.size());
  for (const SftPair& p : pairs) {
    out.push_back({encode_prompt(vocab, p.prompt), encode_target(vocab, p.target)});
  }
  return out;
}

namespace {

std::size_t target_tokens(std::span<const SftExample> batch) {
  std::size_t n = 0;
  for (const SftExample& e : batch) n += e.target.size();
  return n;
}

}  // namespace

LossAndGrad sft_loss_and_grad(const PolicyParams& params, std::span<const SftExample> batch,
                              Exec exec) {
  if (batch.empty()) throw PreconditionError("sft_loss: empty batch");
  const std::size_t n = target_tokens(batch);
  if (n == 0) throw PreconditionError("sft_loss: batch has no target tokens");
  const double w = -1.0 / static_cast<double>(n);
  return accumulate_gradients(
      params, batch.size(),
      [&](Tape& t, std::size_t i) {
        return ad::scale(t.graph(), ad::sum(t.graph(), t.logprobs(batch[i].prompt, batch[i].target)),
                         w);
      },
      exec);
}

double sft_loss(const PolicyParams& params, std::span<const SftExample> batch) {
  if (batch.empty()) throw PreconditionError("sft_loss: empty batch");
  const std::size_t n = target_tokens(batch);
  if (n == 0) throw PreconditionError("sft_loss: batch has no target tokens");
  double total = 0.0;
  for (const SftExample& e : batch) {
    for (double lp : logprobs(params, e.prompt, e.target)) total -= lp;
  }
  const double loss = total / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("sft_loss: non-finite loss");
  return loss;
}

std::vector<SftExample> fit_to_length(std::span<const SftExample> data, int limit) {
  std::vector<SftExample> out(data.begin(), data.end());
  for (SftExample& e : out) {
    if (static_cast<int>(e.prompt.size()) >= limit) {
      throw LengthError("prompt of " + std::to_string(e.prompt.size()) +
                        " tokens does not fit max_length " + std::to_string(limit));
    }
    const std::size_t room = static_cast<std::size_t>(limit) - e.prompt.size();
    if (e.target.size() > room) e.target.resize(room);
  }
  return out;
}

SftResult sft_train(const PolicyParams& init, std::span<const SftExample> data,
                    const SftConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw PreconditionError("sft_train: empty dataset");
  const std::vector<SftExample> examples =
      fit_to_length(data, std::min(config.max_length, init.config.context_length));

  SftResult result{init, {}};
  result.params.frozen = false;
  AdamConfig ac;
  ac.learning_rate = config.learning_rate;
  Adam adam(ac);
  std::vector<std::size_t> order(examples.size());
  std::vector<SftExample> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, {0x5f7ULL, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(examples[order[k]]);
      const std::size_t step = result.losses.size();
      try {
        const LossAndGrad lg = sft_loss_and_grad(result.params, batch);
        result.losses.push_back(lg.loss);
        adam.step(result.params, lg.grads);
      } catch (const NumericError& e) {
        throw NumericError("sft_train: diverged at step " + std::to_string(step) + ": " + e.what());
      }
    }
    if (on_epoch) on_epoch(epoch, result.params);
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i, losses[i]);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace dualcog
