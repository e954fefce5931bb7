#ifndef DUALCOG_SFT_HPP_
#define DUALCOG_SFT_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualcog/codec.hpp"
#include "dualcog/corpus.hpp"
#include "dualcog/policy.hpp"

namespace dualcog {

enum class Preset { kPaperFaithful, kDesk };

std::string preset_name(Preset p);
// "paper" or "desk"; throws ConfigError otherwise.
Preset preset_from_name(const std::string& name);

struct SftConfig {
  double learning_rate = 3e-3;
  int batch_size = 4;
  int epochs = 2;
  int max_length = 256;  // prompt + target tokens; longer targets are cut
  std::uint64_t seed = 0;
  Preset preset = Preset::kDesk;

  static SftConfig for_preset(Preset p);
  void validate() const;
  nlohmann::json to_json() const;
  // Fields absent from j keep the values of `base`.
  static SftConfig from_json(const nlohmann::json& j, SftConfig base);
  friend bool operator==(const SftConfig&, const SftConfig&) = default;
};

struct SftExample {
  TokenSeq prompt;  // conditioning only, never scored
  TokenSeq target;
};

// BOS followed by the prompt words.
TokenSeq encode_prompt(const Vocabulary& vocab, std::string_view prompt);
// Canonical trajectory text followed by EOS.
TokenSeq encode_target(const Vocabulary& vocab, const Trajectory& target);
std::vector<SftExample> make_sft_examples(const Vocabulary& vocab,
                                          std::span<const SftPair> pairs);

// Cuts targets so prompt + target fits in `limit` tokens. Throws LengthError
// when a prompt alone does not fit.
std::vector<SftExample> fit_to_length(std::span<const SftExample> data, int limit);

// Mean over all target tokens of the batch of -log pi(y_i | x, y_<i).
double sft_loss(const PolicyParams& params, std::span<const SftExample> batch);
LossAndGrad sft_loss_and_grad(const PolicyParams& params, std::span<const SftExample> batch,
                              Exec exec = Exec::kParallel);

struct SftResult {
  PolicyParams params;
  std::vector<double> losses;  // one per optimizer step, before the update
};

using EpochCallback = std::function<void(int epoch, const PolicyParams&)>;

SftResult sft_train(const PolicyParams& init, std::span<const SftExample> data,
                    const SftConfig& config, const EpochCallback& on_epoch = {});

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses);

}  // namespace dualcog

#endif  // DUALCOG_SFT_HPP_
