#ifndef DUALCOG_POLICY_HPP_
#define DUALCOG_POLICY_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualcog/autodiff.hpp"
#include "dualcog/codec.hpp"
#include "dualcog/tensor.hpp"

namespace dualcog {

enum class PolicyKind { kMicroTransformer, kTabular };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kMicroTransformer;
  int vocab_size = 0;
  int context_length = 256;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int window = 1;  // Tabular only: number of previous tokens in the key
  TokenId pad_id = 2;
  TokenId eos_id = 1;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static PolicyConfig from_json(const nlohmann::json& j);
  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

struct PolicyParams {
  PolicyConfig config;
  std::map<std::string, Tensor> tensors;
  bool frozen = false;

  std::size_t parameter_count() const;
  const Tensor& at(const std::string& name) const;
  // Same config and bitwise-equal tensors; the frozen flag is ignored.
  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.config == b.config && a.tensors == b.tensors;
  }
};

// Gaussian(0, scale^2) weights, zero biases, unit layer-norm gains.
PolicyParams init_params(const PolicyConfig& config, std::uint64_t seed, double scale);

// Deep copy marked frozen.
PolicyParams snapshot(const PolicyParams& params);

// log pi(target_t | context + target_<t) for every t.
std::vector<double> logprobs(const PolicyParams& params, std::span<const TokenId> context,
                             std::span<const TokenId> target);

// Final-layer-norm outputs at the positions of `segment` (T x d_model).
Tensor hidden_states(const PolicyParams& params, std::span<const TokenId> context,
                     std::span<const TokenId> segment);

struct SampleOptions {
  double temperature = 1.0;
  int max_new = 64;
  std::uint64_t seed = 0;
  bool greedy = false;
};

struct SampleResult {
  TokenSeq tokens;
  // Untempered log pi of each sampled token under the sampling params.
  std::vector<double> logprobs;
};

SampleResult sample_with_logprobs(const PolicyParams& params, std::span<const TokenId> context,
                                  const SampleOptions& options);
TokenSeq sample(const PolicyParams& params, std::span<const TokenId> context,
                double temperature, int max_new, std::uint64_t seed);

// ---- differentiable evaluation ---------------------------------------------

// Binds one graph to a parameter set. Leaves require gradients only when
// tracking is on and the params are not frozen.
class Tape {
 public:
  Tape(ad::Graph& graph, const PolicyParams& params, bool track_grad = true);

  ad::Graph& graph() { return graph_; }
  const PolicyParams& params() const { return params_; }

  // Column (|target| x 1) of log-probabilities.
  ad::Var logprobs(std::span<const TokenId> context, std::span<const TokenId> target);
  ad::Var hidden_states(std::span<const TokenId> context, std::span<const TokenId> segment);

  // Leaf for a named tensor, created on first use.
  ad::Var param(const std::string& name);
  const std::map<std::string, ad::Var>& leaves() const { return leaves_; }

 private:
  // Hidden rows for every token of seq.
  ad::Var trunk(std::span<const TokenId> seq);

  ad::Graph& graph_;
  const PolicyParams& params_;
  bool track_;
  std::map<std::string, ad::Var> leaves_;
};

using Gradients = std::map<std::string, Tensor>;

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;  // trainable tensors only; empty for frozen params
};

// Builds the loss on a fresh tape and runs reverse mode. Throws NumericError
// on a non-finite loss.
LossAndGrad loss_gradients(const PolicyParams& params,
                           const std::function<ad::Var(Tape&)>& loss_fn);

enum class Exec { kSerial, kParallel };

// Sum over items of per-item losses and gradients. Items run on independent
// tapes (in parallel under Exec::kParallel) and are merged in item order, so
// both modes give bitwise-identical results.
LossAndGrad accumulate_gradients(const PolicyParams& params, std::size_t n_items,
                                 const std::function<ad::Var(Tape&, std::size_t)>& item_loss,
                                 Exec exec = Exec::kParallel);

// ---- checkpoints -----------------------------------------------------------

nlohmann::json params_to_json(const PolicyParams& params);
PolicyParams params_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dualcog

#endif  // DUALCOG_POLICY_HPP_
