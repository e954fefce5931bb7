#include "dualcog/policy.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>

#include "dualcog/errors.hpp"
#include "dualcog/kernels.hpp"
#include "dualcog/rng.hpp"

namespace dualcog {
namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kHiddenStateDefinition =
    "final block output after the last layer norm, positions of the segment only";
constexpr double kLnEps = 1e-5;

std::string block_name(int layer, const char* leaf) {
  return "blocks." + std::to_string(layer) + "." + leaf;
}

bool is_bias(const std::string& name) {
  return name.ends_with(".b") || name == "out.b";
}
bool is_gain(const std::string& name) { return name.ends_with(".g"); }

long long table_rows(const PolicyConfig& c) {
  long long r = 1;
  for (int i = 0; i < c.window; ++i) r *= c.vocab_size;
  return r;
}

// Row index of the Tabular key formed by the `window` tokens before `pos`.
int tabular_key(const PolicyConfig& c, std::span<const TokenId> seq, std::size_t pos) {
  long long key = 0;
  for (int i = c.window; i >= 1; --i) {
    const long long idx = static_cast<long long>(pos) - i;
    const TokenId tok = idx >= 0 ? seq[static_cast<std::size_t>(idx)] : c.pad_id;
    key = key * c.vocab_size + tok;
  }
  return static_cast<int>(key);
}

void check_tokens(const PolicyConfig& c, std::span<const TokenId> seq) {
  for (TokenId t : seq) {
    if (t < 0 || t >= c.vocab_size) throw RangeError("token id out of range");
  }
}

void log_softmax_inplace(std::vector<double>& v) {
  double mx = -INFINITY;
  for (double x : v) mx = std::max(mx, x);
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  for (double& x : v) x -= lse;
}

}  // namespace

// ---- config ----------------------------------------------------------------

void PolicyConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("policy: vocab_size must be at least 2");
  if (context_length < 2) throw ConfigError("policy: context_length must be at least 2");
  if (pad_id < 0 || pad_id >= vocab_size || eos_id < 0 || eos_id >= vocab_size) {
    throw ConfigError("policy: pad_id/eos_id outside the vocabulary");
  }
  if (kind == PolicyKind::kTabular) {
    if (window < 1) throw ConfigError("policy: tabular window must be at least 1");
    if (std::pow(static_cast<double>(vocab_size), window + 1) > 5e7) {
      throw ConfigError("policy: tabular table too large");
    }
    return;
  }
  if (d_model < 1 || n_layers < 1 || n_heads < 1) {
    throw ConfigError("policy: d_model, n_layers and n_heads must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("policy: d_model not divisible by n_heads");
}

nlohmann::json PolicyConfig::to_json() const {
  return {{"kind", kind == PolicyKind::kTabular ? "tabular" : "micro_transformer"},
          {"vocab_size", vocab_size},
          {"context_length", context_length},
          {"d_model", d_model},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"window", window},
          {"pad_id", pad_id},
          {"eos_id", eos_id}};
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& j) {
  PolicyConfig c;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "tabular") {
      c.kind = PolicyKind::kTabular;
    } else if (kind == "micro_transformer") {
      c.kind = PolicyKind::kMicroTransformer;
    } else {
      throw ConfigError("policy: unknown kind '" + kind + "'");
    }
    c.vocab_size = j.at("vocab_size").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.window = j.at("window").get<int>();
    c.pad_id = j.at("pad_id").get<TokenId>();
    c.eos_id = j.at("eos_id").get<TokenId>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("policy config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- params ----------------------------------------------------------------

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

const Tensor& PolicyParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw StateError("policy: missing tensor '" + name + "'");
  return it->second;
}

PolicyParams init_params(const PolicyConfig& config, std::uint64_t seed, double scale) {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("init_params: scale must be >= 0");
  config.validate();
  PolicyParams p;
  p.config = config;
  const int v = config.vocab_size;
  if (config.kind == PolicyKind::kTabular) {
    p.tensors["table"] = Tensor(static_cast<int>(table_rows(config)), v);
  } else {
    const int d = config.d_model;
    p.tensors["tok_emb"] = Tensor(v, d);
    p.tensors["pos_emb"] = Tensor(config.context_length, d);
    for (int l = 0; l < config.n_layers; ++l) {
      p.tensors[block_name(l, "ln1.g")] = Tensor(1, d);
      p.tensors[block_name(l, "ln1.b")] = Tensor(1, d);
      p.tensors[block_name(l, "attn.qkv.w")] = Tensor(d, 3 * d);
      p.tensors[block_name(l, "attn.qkv.b")] = Tensor(1, 3 * d);
      p.tensors[block_name(l, "attn.out.w")] = Tensor(d, d);
      p.tensors[block_name(l, "attn.out.b")] = Tensor(1, d);
      p.tensors[block_name(l, "ln2.g")] = Tensor(1, d);
      p.tensors[block_name(l, "ln2.b")] = Tensor(1, d);
      p.tensors[block_name(l, "ffn.w1")] = Tensor(d, 4 * d);
      p.tensors[block_name(l, "ffn.w1.b")] = Tensor(1, 4 * d);
      p.tensors[block_name(l, "ffn.w2")] = Tensor(4 * d, d);
      p.tensors[block_name(l, "ffn.w2.b")] = Tensor(1, d);
    }
    p.tensors["lnf.g"] = Tensor(1, d);
    p.tensors["lnf.b"] = Tensor(1, d);
    p.tensors["out.b"] = Tensor(1, v);
  }
  Rng rng(seed);
  for (auto& [name, t] : p.tensors) {
    if (is_gain(name)) {
      t.fill(1.0);
    } else if (!is_bias(name)) {
      for (double& x : t.data) x = scale * rng.normal();
    }
  }
  return p;
}

PolicyParams snapshot(const PolicyParams& params) {
  PolicyParams s = params;
  s.frozen = true;
  return s;
}

// ---- tape ------------------------------------------------------------------

Tape::Tape(ad::Graph& graph, const PolicyParams& params, bool track_grad)
    : graph_(graph), params_(params), track_(track_grad && !params.frozen) {}

ad::Var Tape::param(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const ad::Var v = graph_.leaf(params_.at(name), track_);
  leaves_.emplace(name, v);
  return v;
}

ad::Var Tape::trunk(std::span<const TokenId> seq) {
  const PolicyConfig& c = params_.config;
  ad::Graph& g = graph_;
  std::vector<int> ids(seq.begin(), seq.end());
  std::vector<int> pos(seq.size());
  std::iota(pos.begin(), pos.end(), 0);
  ad::Var x = ad::add(g, ad::embed(g, param("tok_emb"), ids), ad::embed(g, param("pos_emb"), pos));
  for (int l = 0; l < c.n_layers; ++l) {
    ad::Var h = ad::layer_norm(g, x, param(block_name(l, "ln1.g")), param(block_name(l, "ln1.b")),
                               kLnEps);
    ad::Var qkv = ad::add_row(g, ad::matmul(g, h, param(block_name(l, "attn.qkv.w"))),
                              param(block_name(l, "attn.qkv.b")));
    ad::Var att = ad::causal_attention(g, qkv, c.n_heads);
    att = ad::add_row(g, ad::matmul(g, att, param(block_name(l, "attn.out.w"))),
                      param(block_name(l, "attn.out.b")));
    x = ad::add(g, x, att);
    h = ad::layer_norm(g, x, param(block_name(l, "ln2.g")), param(block_name(l, "ln2.b")), kLnEps);
    ad::Var f = ad::gelu(g, ad::add_row(g, ad::matmul(g, h, param(block_name(l, "ffn.w1"))),
                                        param(block_name(l, "ffn.w1.b"))));
    f = ad::add_row(g, ad::matmul(g, f, param(block_name(l, "ffn.w2"))),
                    param(block_name(l, "ffn.w2.b")));
    x = ad::add(g, x, f);
  }
  return ad::layer_norm(g, x, param("lnf.g"), param("lnf.b"), kLnEps);
}

ad::Var Tape::logprobs(std::span<const TokenId> context, std::span<const TokenId> target) {
  const PolicyConfig& c = params_.config;
  if (context.size() + target.size() > static_cast<std::size_t>(c.context_length)) {
    throw LengthError("logprobs: sequence of " + std::to_string(context.size() + target.size()) +
                      " tokens exceeds context_length " + std::to_string(c.context_length));
  }
  check_tokens(c, context);
  check_tokens(c, target);
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.insert(seq.end(), target.begin(), target.end());
  std::vector<int> targets(target.begin(), target.end());
  const int n_t = static_cast<int>(target.size());

  if (c.kind == PolicyKind::kTabular) {
    std::vector<int> rows(target.size());
    for (std::size_t t = 0; t < target.size(); ++t) {
      rows[t] = tabular_key(c, seq, context.size() + t);
    }
    return ad::pick_log_softmax(graph_, param("table"), rows, targets);
  }

  if (context.empty()) throw PreconditionError("logprobs: transformer needs a non-empty context");
  if (target.empty()) return graph_.constant(Tensor(0, 1));
  std::span<const TokenId> feed(seq.data(), seq.size() - 1);
  ad::Var h = trunk(feed);
  ad::Var hs = ad::slice_rows(graph_, h, static_cast<int>(context.size()) - 1, n_t);
  ad::Var logits = ad::add_row(graph_, ad::matmul_nt(graph_, hs, param("tok_emb")), param("out.b"));
  std::vector<int> rows(target.size());
  std::iota(rows.begin(), rows.end(), 0);
  return ad::pick_log_softmax(graph_, logits, rows, targets);
}

ad::Var Tape::hidden_states(std::span<const TokenId> context, std::span<const TokenId> segment) {
  const PolicyConfig& c = params_.config;
  if (c.kind == PolicyKind::kTabular) {
    throw CapabilityError("hidden_states: tabular policy has no hidden states");
  }
  if (context.size() + segment.size() > static_cast<std::size_t>(c.context_length)) {
    throw LengthError("hidden_states: sequence exceeds context_length");
  }
  if (segment.empty()) throw PreconditionError("hidden_states: empty segment");
  check_tokens(c, context);
  check_tokens(c, segment);
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.insert(seq.end(), segment.begin(), segment.end());
  ad::Var h = trunk(seq);
  return ad::slice_rows(graph_, h, static_cast<int>(context.size()),
                        static_cast<int>(segment.size()));
}

// ---- plain evaluation ------------------------------------------------------

std::vector<double> logprobs(const PolicyParams& params, std::span<const TokenId> context,
                             std::span<const TokenId> target) {
  ad::Graph g;
  Tape tape(g, params, false);
  const Tensor& col = g.value(tape.logprobs(context, target));
  return col.data;
}

Tensor hidden_states(const PolicyParams& params, std::span<const TokenId> context,
                     std::span<const TokenId> segment) {
  if (params.config.kind == PolicyKind::kTabular) {
    throw CapabilityError("hidden_states: tabular policy has no hidden states");
  }
  ad::Graph g;
  Tape tape(g, params, false);
  return g.value(tape.hidden_states(context, segment));
}

// ---- incremental decoder ---------------------------------------------------

namespace {

// Feeds one token at a time and keeps per-layer key/value rows.
class Decoder {
 public:
  explicit Decoder(const PolicyParams& p) : p_(p), c_(p.config) {
    if (c_.kind == PolicyKind::kMicroTransformer) {
      keys_.resize(c_.n_layers);
      values_.resize(c_.n_layers);
    }
  }

  // Consumes `tok` at the next position; fills `logits` when non-null.
  void step(TokenId tok, std::vector<double>* logits) {
    seq_.push_back(tok);
    if (c_.kind == PolicyKind::kTabular) {
      if (logits) {
        const Tensor& table = p_.at("table");
        const int key = tabular_key(c_, seq_, seq_.size());
        logits->assign(table.row(key), table.row(key) + c_.vocab_size);
      }
      return;
    }
    const int d = c_.d_model;
    const int pos = static_cast<int>(seq_.size()) - 1;
    std::vector<double> x(d), h(d);
    const Tensor& te = p_.at("tok_emb");
    const Tensor& pe = p_.at("pos_emb");
    for (int i = 0; i < d; ++i) x[i] = te(tok, i) + pe(pos, i);
    std::vector<double> qkv(3 * d), att(d), proj(d), f1(4 * d), f2(d);
    for (int l = 0; l < c_.n_layers; ++l) {
      layer_norm(x, block_name(l, "ln1.g"), block_name(l, "ln1.b"), h);
      affine(h, block_name(l, "attn.qkv.w"), block_name(l, "attn.qkv.b"), qkv);
      keys_[l].insert(keys_[l].end(), qkv.begin() + d, qkv.begin() + 2 * d);
      values_[l].insert(values_[l].end(), qkv.begin() + 2 * d, qkv.end());
      attend(l, qkv, att);
      affine(att, block_name(l, "attn.out.w"), block_name(l, "attn.out.b"), proj);
      for (int i = 0; i < d; ++i) x[i] += proj[i];
      layer_norm(x, block_name(l, "ln2.g"), block_name(l, "ln2.b"), h);
      affine(h, block_name(l, "ffn.w1"), block_name(l, "ffn.w1.b"), f1);
      for (double& v : f1) {
        const double t = std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v));
        v = 0.5 * v * (1.0 + t);
      }
      affine(f1, block_name(l, "ffn.w2"), block_name(l, "ffn.w2.b"), f2);
      for (int i = 0; i < d; ++i) x[i] += f2[i];
    }
    if (!logits) return;
    layer_norm(x, "lnf.g", "lnf.b", h);
    const Tensor& ob = p_.at("out.b");
    logits->assign(c_.vocab_size, 0.0);
    for (int v = 0; v < c_.vocab_size; ++v) {
      const double* e = te.row(v);
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += h[i] * e[i];
      (*logits)[v] = s + ob.data[v];
    }
  }

 private:
  void layer_norm(const std::vector<double>& x, const std::string& g, const std::string& b,
                  std::vector<double>& out) const {
    const Tensor& gv = p_.at(g);
    const Tensor& bv = p_.at(b);
    const int n = static_cast<int>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < n; ++i) out[i] = (x[i] - mean) * rstd * gv.data[i] + bv.data[i];
  }

  void affine(const std::vector<double>& in, const std::string& w, const std::string& b,
              std::vector<double>& out) const {
    const Tensor& wv = p_.at(w);
    const Tensor& bv = p_.at(b);
    std::fill(out.begin(), out.end(), 0.0);
    for (int i = 0; i < wv.rows; ++i) {
      const double a = in[i];
      const double* wr = wv.row(i);
      for (int j = 0; j < wv.cols; ++j) out[j] += a * wr[j];
    }
    for (int j = 0; j < wv.cols; ++j) out[j] += bv.data[j];
  }

  void attend(int l, const std::vector<double>& qkv, std::vector<double>& out) const {
    const int d = c_.d_model;
    const int hd = d / c_.n_heads;
    const int n = static_cast<int>(keys_[l].size()) / d;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> w(n);
    std::fill(out.begin(), out.end(), 0.0);
    for (int hh = 0; hh < c_.n_heads; ++hh) {
      const int o = hh * hd;
      double mx = -INFINITY;
      for (int j = 0; j < n; ++j) {
        const double* k = keys_[l].data() + static_cast<std::size_t>(j) * d + o;
        double s = 0.0;
        for (int i = 0; i < hd; ++i) s += qkv[o + i] * k[i];
        w[j] = s * inv_sqrt;
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        w[j] = std::exp(w[j] - mx);
        z += w[j];
      }
      for (int j = 0; j < n; ++j) {
        const double* v = values_[l].data() + static_cast<std::size_t>(j) * d + o;
        const double pj = w[j] / z;
        for (int i = 0; i < hd; ++i) out[o + i] += pj * v[i];
      }
    }
  }

  const PolicyParams& p_;
  const PolicyConfig& c_;
  std::vector<TokenId> seq_;
  std::vector<std::vector<double>> keys_;
  std::vector<std::vector<double>> values_;
};

}  // namespace

SampleResult sample_with_logprobs(const PolicyParams& params, std::span<const TokenId> context,
                                  const SampleOptions& options) {
  const PolicyConfig& c = params.config;
  if (!options.greedy && !(options.temperature > 0.0)) {
    throw PreconditionError("sample: temperature must be positive");
  }
  if (options.max_new < 1) throw PreconditionError("sample: max_new must be at least 1");
  if (context.size() >= static_cast<std::size_t>(c.context_length)) {
    throw LengthError("sample: context fills the whole context window");
  }
  if (c.kind == PolicyKind::kMicroTransformer && context.empty()) {
    throw PreconditionError("sample: transformer needs a non-empty context");
  }
  check_tokens(c, context);

  Decoder dec(params);
  std::vector<double> logits;
  if (context.empty()) {
    // Tabular with an empty prefix: the all-pad key.
    const Tensor& table = params.at("table");
    const int key = tabular_key(c, std::span<const TokenId>{}, 0);
    logits.assign(table.row(key), table.row(key) + c.vocab_size);
  }
  for (std::size_t i = 0; i < context.size(); ++i) {
    dec.step(context[i], i + 1 == context.size() ? &logits : nullptr);
  }

  Rng rng(options.seed);
  SampleResult out;
  std::vector<double> probs(c.vocab_size);
  for (int n = 0; n < options.max_new; ++n) {
    std::vector<double> logp = logits;
    log_softmax_inplace(logp);
    TokenId tok = 0;
    if (options.greedy) {
      for (int v = 1; v < c.vocab_size; ++v) {
        if (logits[v] > logits[tok]) tok = v;
      }
    } else {
      double mx = -INFINITY;
      for (double l : logits) mx = std::max(mx, l / options.temperature);
      double z = 0.0;
      for (int v = 0; v < c.vocab_size; ++v) {
        probs[v] = std::exp(logits[v] / options.temperature - mx);
        z += probs[v];
      }
      const double u = rng.uniform() * z;
      double acc = 0.0;
      tok = c.vocab_size - 1;
      for (int v = 0; v < c.vocab_size; ++v) {
        acc += probs[v];
        if (u < acc) {
          tok = v;
          break;
        }
      }
    }
    out.tokens.push_back(tok);
    out.logprobs.push_back(logp[tok]);
    if (tok == c.eos_id) break;
    if (context.size() + out.tokens.size() >= static_cast<std::size_t>(c.context_length)) break;
    dec.step(tok, &logits);
  }
  return out;
}

TokenSeq sample(const PolicyParams& params, std::span<const TokenId> context, double temperature,
                int max_new, std::uint64_t seed) {
  SampleOptions o;
  o.temperature = temperature;
  o.max_new = max_new;
  o.seed = seed;
  return sample_with_logprobs(params, context, o).tokens;
}

// ---- gradients -------------------------------------------------------------

LossAndGrad loss_gradients(const PolicyParams& params,
                           const std::function<ad::Var(Tape&)>& loss_fn) {
  ad::Graph g;
  Tape tape(g, params);
  const ad::Var loss = loss_fn(tape);
  const Tensor& lv = g.value(loss);
  if (lv.rows != 1 || lv.cols != 1) throw PreconditionError("loss_gradients: loss must be scalar");
  LossAndGrad out;
  out.loss = lv(0, 0);
  if (!std::isfinite(out.loss)) throw NumericError("loss_gradients: non-finite loss");
  if (params.frozen) return out;
  g.backward(loss);
  for (const auto& [name, t] : params.tensors) {
    auto it = tape.leaves().find(name);
    if (it != tape.leaves().end() && g.has_grad(it->second)) {
      out.grads[name] = g.grad(it->second);
    } else {
      out.grads[name] = Tensor(t.rows, t.cols);
    }
  }
  return out;
}

LossAndGrad accumulate_gradients(const PolicyParams& params, std::size_t n_items,
                                 const std::function<ad::Var(Tape&, std::size_t)>& item_loss,
                                 Exec exec) {
  std::vector<LossAndGrad> parts(n_items);
  std::vector<std::exception_ptr> errors(n_items);
  auto run = [&](std::size_t i) {
    try {
      parts[i] = loss_gradients(params, [&](Tape& t) { return item_loss(t, i); });
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (exec == Exec::kParallel) {
    kernels::parallel_for(n_items, run);
  } else {
    kernels::serial::parallel_for(n_items, run);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  LossAndGrad total;
  if (!params.frozen) {
    for (const auto& [name, t] : params.tensors) total.grads[name] = Tensor(t.rows, t.cols);
  }
  for (const LossAndGrad& part : parts) {
    total.loss += part.loss;
    for (auto& [name, g] : total.grads) {
      const Tensor& src = part.grads.at(name);
      for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += src.data[k];
    }
  }
  return total;
}

// ---- checkpoints -----------------------------------------------------------

nlohmann::json params_to_json(const PolicyParams& params) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : params.tensors) {
    tensors[name] = {{"rows", t.rows}, {"cols", t.cols}, {"data", t.data}};
  }
  return {{"format", "dualcog-policy"},
          {"version", kCheckpointVersion},
          {"config", params.config.to_json()},
          {"hidden_state_definition", kHiddenStateDefinition},
          {"frozen", params.frozen},
          {"tensors", tensors}};
}

PolicyParams params_from_json(const nlohmann::json& j) {
  PolicyParams p;
  try {
    if (j.at("format").get<std::string>() != "dualcog-policy") {
      throw IoError("checkpoint: unrecognized format");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw IoError("checkpoint: unsupported version");
    }
    p.config = PolicyConfig::from_json(j.at("config"));
    p.frozen = j.at("frozen").get<bool>();
    for (const auto& [name, t] : j.at("tensors").items()) {
      Tensor tensor(t.at("rows").get<int>(), t.at("cols").get<int>());
      tensor.data = t.at("data").get<std::vector<double>>();
      if (tensor.data.size() != static_cast<std::size_t>(tensor.rows) * tensor.cols) {
        throw IoError("checkpoint: tensor '" + name + "' has wrong element count");
      }
      p.tensors.emplace(name, std::move(tensor));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  const PolicyParams shape = init_params(p.config, 0, 0.0);
  for (const auto& [name, t] : shape.tensors) {
    auto it = p.tensors.find(name);
    if (it == p.tensors.end() || !it->second.same_shape(t)) {
      throw IoError("checkpoint: tensor '" + name + "' missing or misshapen");
    }
  }
  if (p.tensors.size() != shape.tensors.size()) throw IoError("checkpoint: unexpected tensors");
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  out << params_to_json(params).dump() << '\n';
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  return params_from_json(j);
}

}  // namespace dualcog
