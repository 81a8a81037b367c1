#pragma once

#include "met/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace met {

struct GradcheckResult {
  std::string name;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
  // Location of the largest violation (or largest error when all pass).
  std::size_t worst_input = 0;
  Index worst_element = 0;
};

struct GradcheckOptions {
  double step = 1e-4;
  double rtol = 1e-3;
  double atol = 1e-5;
  // When non-zero, only this many elements per input are perturbed, chosen
  // by a generator seeded with sample_seed.
  std::size_t max_elements = 0;
  std::uint64_t sample_seed = 0;
};

// Compares the taped gradient of loss_fn() with respect to each input against
// central finite differences. An element passes when
// |analytic - numeric| <= atol + rtol * |numeric|.
GradcheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                const std::vector<Tensor>& inputs, const GradcheckOptions& opt = {});

}  // namespace met
