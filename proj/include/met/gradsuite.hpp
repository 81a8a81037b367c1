#pragma once

// Finite-difference checks over every differentiable op plus a two-story
// end-to-end pipeline (graphs, reasoning, fusion, injector, decoder, joint loss).

#include "met/gradcheck.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace met {

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  // Name of a check whose backward pass is deliberately corrupted; used to
  // confirm that a bad rule is caught and reported by name.
  std::string fault = "";
  double rtol = 1e-3;
  double atol = 1e-5;
};

std::vector<std::string> gradcheck_suite_names();
std::vector<GradcheckResult> run_gradcheck_suite(const GradSuiteOptions& opt);

}  // namespace met
