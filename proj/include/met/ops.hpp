#pragma once

// Differentiable operations over met::Tensor.

#include "met/tensor.hpp"

#include <vector>

namespace met {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Elementwise with broadcasting: shapes must be equal, or the right operand
// may be a 1 x n row, an m x 1 column, or a 1 x 1 scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

enum class Axis { Rows = 0, Cols = 1 };

// Softmax along an axis (Cols normalizes each row).
Tensor softmax(const Tensor& x, Axis axis = Axis::Cols);
Tensor log_softmax(const Tensor& x);

// Normalizes each row to zero mean and unit variance, then applies gain/bias (1 x d).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Mean of the rows selected by mask; result is 1 x d.
Tensor mean_pool(const Tensor& x, const std::vector<bool>& mask);

// Mean negative log-likelihood of the target index per row; rows whose
// target equals ignore_index are excluded.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index = -1);
Tensor cross_entropy(const Tensor& logits, int target);

// Mean binary cross-entropy; p is clamped to [eps, 1 - eps].
Tensor binary_cross_entropy(const Tensor& p, const Matrix& targets, double eps = 1e-7);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor vstack(const std::vector<Tensor>& parts);
Tensor hstack(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows);
Tensor slice_cols(const Tensor& x, Index start, Index count);
Tensor slice_rows(const Tensor& x, Index start, Index count);

// Copy of base with the listed rows replaced by the rows of values.
Tensor scatter_rows(const Tensor& base, const std::vector<Index>& rows, const Tensor& values);

}  // namespace met
