#pragma once

#include "met/tensor.hpp"

#include <random>

namespace testutil {

inline met::Matrix random_matrix(met::Index r, met::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  met::Matrix m(r, c);
  for (met::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Gradient of loss() with respect to x on a fresh tape.
template <class F>
met::Matrix taped_grad(met::Tensor x, F&& loss) {
  x.zero_grad();
  met::Tape tape;
  met::TapeScope scope(tape);
  tape.backward(loss());
  return x.grad();
}

}  // namespace testutil
