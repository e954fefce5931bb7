#ifndef DUALCOG_OPTIM_HPP_
#define DUALCOG_OPTIM_HPP_

#include <map>
#include <string>

#include "dualcog/policy.hpp"

namespace dualcog {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

class Adam {
 public:
  explicit Adam(AdamConfig config);

  // Applies one bias-corrected update. Throws StateError on frozen params and
  // NumericError when a gradient is not finite.
  void step(PolicyParams& params, const Gradients& grads);
  int steps() const { return t_; }

 private:
  AdamConfig config_;
  std::map<std::string, Tensor> m_, v_;
  int t_ = 0;
};

}  // namespace dualcog

#endif  // DUALCOG_OPTIM_HPP_
