#include "dualcog/optim.hpp"

#include <cmath>

#include "dualcog/errors.hpp"

namespace dualcog {

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
}

void Adam::step(PolicyParams& params, const Gradients& grads) {
  if (params.frozen) throw StateError("adam: refusing to update frozen params");
  for (const auto& [name, g] : grads) {
    for (double v : g.data) {
      if (!std::isfinite(v)) throw NumericError("adam: non-finite gradient for '" + name + "'");
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, t_);
  const double c2 = 1.0 - std::pow(config_.beta2, t_);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.tensors.at(name);
    Tensor& m = m_.try_emplace(name, p.rows, p.cols).first->second;
    Tensor& v = v_.try_emplace(name, p.rows, p.cols).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = config_.beta1 * m.data[i] + (1.0 - config_.beta1) * g.data[i];
      v.data[i] = config_.beta2 * v.data[i] + (1.0 - config_.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / c1;
      const double vhat = v.data[i] / c2;
      p.data[i] -= config_.learning_rate *
                   (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * p.data[i]);
    }
  }
}

}  // namespace dualcog
