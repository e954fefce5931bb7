#ifndef DUALCOG_TESTS_HELPERS_HPP_
#define DUALCOG_TESTS_HELPERS_HPP_

#include <algorithm>
#include <cmath>
#include <functional>

#include "dualcog/policy.hpp"

namespace dualcog::testing {

inline PolicyParams tiny_transformer(int vocab, std::uint64_t seed, double scale = 0.3,
                                     int context = 16) {
  PolicyConfig c;
  c.vocab_size = vocab;
  c.context_length = context;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  return init_params(c, seed, scale);
}

struct FdReport {
  double max_rel = 0.0;
  double max_abs_small = 0.0;  // abs error where both magnitudes are tiny
  std::size_t checked = 0;
};

// Central differences over every scalar of every tensor.
inline FdReport finite_difference_check(PolicyParams params,
                                        const std::function<double(const PolicyParams&)>& loss,
                                        const Gradients& analytic, double eps = 1e-4) {
  FdReport r;
  for (auto& [name, t] : params.tensors) {
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t.data[i];
      t.data[i] = keep + eps;
      const double up = loss(params);
      t.data[i] = keep - eps;
      const double down = loss(params);
      t.data[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = g.data[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      if (scale > 1e-6) {
        r.max_rel = std::max(r.max_rel, std::abs(a - numeric) / scale);
      } else {
        r.max_abs_small = std::max(r.max_abs_small, std::abs(a - numeric));
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace dualcog::testing

#endif  // DUALCOG_TESTS_HELPERS_HPP_
