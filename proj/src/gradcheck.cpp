#include "met/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace met {

GradcheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                const std::vector<Tensor>& inputs, const GradcheckOptions& opt) {
  GradcheckResult res;
  res.name = name;
  std::vector<Tensor> xs = inputs;
  for (auto& x : xs) x.zero_grad();

  std::vector<Matrix> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (const auto& x : xs) analytic.push_back(x.grad());
  }

  NoTapeScope no_tape;
  std::mt19937_64 rng(opt.sample_seed);
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    Matrix& value = xs[k].mutable_value();
    std::vector<Index> elements(static_cast<std::size_t>(value.size()));
    std::iota(elements.begin(), elements.end(), Index{0});
    if (opt.max_elements > 0 && elements.size() > opt.max_elements) {
      std::shuffle(elements.begin(), elements.end(), rng);
      elements.resize(opt.max_elements);
    }
    for (const Index i : elements) {
      const double saved = value.data()[i];
      value.data()[i] = saved + opt.step;
      const double up = loss_fn().item();
      value.data()[i] = saved - opt.step;
      const double down = loss_fn().item();
      value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k].data()[i];
      const double err = std::abs(a - numeric);
      const double excess = err - (opt.atol + opt.rtol * std::abs(numeric));
      if (excess > worst_excess) {
        worst_excess = excess;
        res.worst_input = k;
        res.worst_element = i;
      }
      res.max_abs_error = std::max(res.max_abs_error, err);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      if (denom > opt.atol) res.max_rel_error = std::max(res.max_rel_error, err / denom);
      if (err > opt.atol + opt.rtol * std::abs(numeric)) res.passed = false;
      ++res.checked;
    }
  }
  for (auto& x : xs) x.zero_grad();
  return res;
}

}  // namespace met
