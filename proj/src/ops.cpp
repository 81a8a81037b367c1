#include "met/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace met {

namespace {

enum class Broadcast { Same, Row, Col, Scalar };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " +
                       shape_string(a));
}

Matrix expand(const Matrix& b, Index rows, Index cols, Broadcast kind) {
  switch (kind) {
    case Broadcast::Same: return b;
    case Broadcast::Row: return b.replicate(rows, 1);
    case Broadcast::Col: return b.replicate(1, cols);
    case Broadcast::Scalar: return Matrix::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Matrix reduce_to(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::Same: return g;
    case Broadcast::Row: return g.colwise().sum();
    case Broadcast::Col: return g.rowwise().sum();
    case Broadcast::Scalar: {
      Matrix s(1, 1);
      s(0, 0) = g.sum();
      return s;
    }
  }
  return g;
}

Matrix row_softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

Matrix row_log_softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = (x.row(i).array() - lse).matrix();
  }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.value()) + " x " +
                         shape_string(b.value()));
  }
  return make_result(a.value() * b.value(), "matmul", {a, b}, [](const Tape::Record& r) {
    const Matrix& g = r.output->grad;
    auto& A = *r.inputs[0];
    auto& B = *r.inputs[1];
    if (A.requires_grad) accumulate_grad(A, g * B.value.transpose());
    if (B.requires_grad) accumulate_grad(B, A.value.transpose() * g);
  });
}

Tensor transpose(const Tensor& x) {
  return make_result(x.value().transpose(), "transpose", {x}, [](const Tape::Record& r) {
    accumulate_grad(*r.inputs[0], r.output->grad.transpose());
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "add");
  Matrix v = a.value() + expand(b.value(), a.rows(), a.cols(), kind);
  return make_result(std::move(v), "add", {a, b}, [kind](const Tape::Record& r) {
    const Matrix& g = r.output->grad;
    accumulate_grad(*r.inputs[0], g);
    if (r.inputs[1]->requires_grad) accumulate_grad(*r.inputs[1], reduce_to(g, kind));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "sub");
  Matrix v = a.value() - expand(b.value(), a.rows(), a.cols(), kind);
  return make_result(std::move(v), "sub", {a, b}, [kind](const Tape::Record& r) {
    const Matrix& g = r.output->grad;
    accumulate_grad(*r.inputs[0], g);
    if (r.inputs[1]->requires_grad) accumulate_grad(*r.inputs[1], reduce_to(-g, kind));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "mul");
  Matrix bx = expand(b.value(), a.rows(), a.cols(), kind);
  Matrix v = a.value().cwiseProduct(bx);
  return make_result(std::move(v), "mul", {a, b}, [kind, bx = std::move(bx)](const Tape::Record& r) {
    const Matrix& g = r.output->grad;
    auto& A = *r.inputs[0];
    auto& B = *r.inputs[1];
    if (A.requires_grad) accumulate_grad(A, g.cwiseProduct(bx));
    if (B.requires_grad) accumulate_grad(B, reduce_to(g.cwiseProduct(A.value), kind));
  });
}

Tensor scale(const Tensor& x, double s) {
  return make_result(x.value() * s, "scale", {x}, [s](const Tape::Record& r) {
    accumulate_grad(*r.inputs[0], r.output->grad * s);
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  return make_result((x.value().array() + s).matrix(), "add_scalar", {x},
                     [](const Tape::Record& r) { accumulate_grad(*r.inputs[0], r.output->grad); });
}

Tensor relu(const Tensor& x) {
  return make_result(x.value().cwiseMax(0.0), "relu", {x}, [](const Tape::Record& r) {
    const Matrix& in = r.inputs[0]->value;
    Matrix g = (in.array() > 0.0).select(r.output->grad, 0.0);
    accumulate_grad(*r.inputs[0], g);
  });
}

Tensor sigmoid(const Tensor& x) {
  Matrix v = x.value().unaryExpr([](double z) {
    // Split by sign so exp never overflows.
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
  return make_result(std::move(v), "sigmoid", {x}, [](const Tape::Record& r) {
    const Matrix& y = r.output->value;
    Matrix g = r.output->grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
    accumulate_grad(*r.inputs[0], g);
  });
}

Tensor softmax(const Tensor& x, Axis axis) {
  const Index n = axis == Axis::Cols ? x.cols() : x.rows();
  if (n < 1 || x.size() == 0) throw DimensionError("softmax: empty axis in " + shape_string(x.value()));
  Matrix v = axis == Axis::Cols ? row_softmax(x.value()) : Matrix(row_softmax(x.value().transpose()).transpose());
  return make_result(std::move(v), "softmax", {x}, [axis](const Tape::Record& r) {
    const Matrix& y = r.output->value;
    const Matrix& g = r.output->grad;
    Matrix dx;
    if (axis == Axis::Cols) {
      Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
      dx = y.cwiseProduct((g.colwise() - dots).eval());
    } else {
      Eigen::RowVectorXd dots = g.cwiseProduct(y).colwise().sum();
      dx = y.cwiseProduct((g.rowwise() - dots).eval());
    }
    accumulate_grad(*r.inputs[0], dx);
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.cols() < 1 || x.rows() < 1) throw DimensionError("log_softmax: empty axis in " + shape_string(x.value()));
  return make_result(row_log_softmax(x.value()), "log_softmax", {x}, [](const Tape::Record& r) {
    const Matrix& y = r.output->value;
    const Matrix& g = r.output->grad;
    Matrix p = y.array().exp().matrix();
    Eigen::VectorXd sums = g.rowwise().sum();
    Matrix dx = g - (p.array().colwise() * sums.array()).matrix();
    accumulate_grad(*r.inputs[0], dx);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(d) + ", got " +
                         shape_string(gain.value()) + " and " + shape_string(bias.value()));
  }
  Matrix xhat(x.rows(), d);
  Eigen::VectorXd inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.value().row(i).mean();
    Eigen::RowVectorXd c = x.value().row(i).array() - mu;
    const double var = c.squaredNorm() / static_cast<double>(d);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = c * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  return make_result(std::move(y), "layer_norm", {x, gain, bias},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tape::Record& r) {
                       const Matrix& g = r.output->grad;
                       auto& X = *r.inputs[0];
                       auto& G = *r.inputs[1];
                       auto& B = *r.inputs[2];
                       if (G.requires_grad) accumulate_grad(G, g.cwiseProduct(xhat).colwise().sum());
                       if (B.requires_grad) accumulate_grad(B, g.colwise().sum());
                       if (X.requires_grad) {
                         Matrix dxhat = (g.array().rowwise() * G.value.row(0).array()).matrix();
                         const double d = static_cast<double>(xhat.cols());
                         Matrix dx(g.rows(), g.cols());
                         for (Index i = 0; i < g.rows(); ++i) {
                           const double m1 = dxhat.row(i).sum() / d;
                           const double m2 = dxhat.row(i).dot(xhat.row(i)) / d;
                           dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
                         }
                         accumulate_grad(X, dx);
                       }
                     });
}

Tensor mean_pool(const Tensor& x, const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != x.rows()) {
    throw DimensionError("mean_pool: mask length " + std::to_string(mask.size()) + " vs " +
                         shape_string(x.value()));
  }
  const auto count = std::count(mask.begin(), mask.end(), true);
  if (count == 0) throw ContractError("mean_pool: empty span (mask selects no rows)");
  Matrix v = Matrix::Zero(1, x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) v += x.value().row(i);
  }
  const double inv = 1.0 / static_cast<double>(count);
  v *= inv;
  return make_result(std::move(v), "mean_pool", {x}, [mask, inv](const Tape::Record& r) {
    const auto& in = *r.inputs[0];
    Matrix dx = Matrix::Zero(in.value.rows(), in.value.cols());
    for (Index i = 0; i < dx.rows(); ++i) {
      if (mask[static_cast<std::size_t>(i)]) dx.row(i) = r.output->grad.row(0) * inv;
    }
    accumulate_grad(*r.inputs[0], dx);
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.value()));
  }
  Matrix logp = row_log_softmax(logits.value());
  double total = 0.0;
  int counted = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= logits.cols()) {
      throw DimensionError("cross_entropy: target " + std::to_string(t) + " outside " +
                           std::to_string(logits.cols()) + " classes");
    }
    total -= logp(i, t);
    ++counted;
  }
  if (counted == 0) throw ContractError("cross_entropy: every target is ignored");
  const double inv = 1.0 / counted;
  Matrix v(1, 1);
  v(0, 0) = total * inv;
  return make_result(std::move(v), "cross_entropy", {logits},
                     [targets, ignore_index, inv, logp = std::move(logp)](const Tape::Record& r) {
                       const double g = r.output->grad(0, 0);
                       Matrix dx = Matrix::Zero(logp.rows(), logp.cols());
                       for (Index i = 0; i < logp.rows(); ++i) {
                         const int t = targets[static_cast<std::size_t>(i)];
                         if (t == ignore_index) continue;
                         dx.row(i) = logp.row(i).array().exp().matrix();
                         dx(i, t) -= 1.0;
                       }
                       accumulate_grad(*r.inputs[0], dx * (g * inv));
                     });
}

Tensor cross_entropy(const Tensor& logits, int target) {
  if (logits.rows() != 1) throw DimensionError("cross_entropy: expected 1xV logits, got " + shape_string(logits.value()));
  return cross_entropy(logits, std::vector<int>{target});
}

Tensor binary_cross_entropy(const Tensor& p, const Matrix& targets, double eps) {
  if (p.rows() != targets.rows() || p.cols() != targets.cols()) {
    throw DimensionError("binary_cross_entropy: " + shape_string(p.value()) + " vs targets " +
                         shape_string(targets));
  }
  const double n = static_cast<double>(p.size());
  Matrix pc = p.value().cwiseMax(eps).cwiseMin(1.0 - eps);
  double total = 0.0;
  for (Index i = 0; i < pc.size(); ++i) {
    const double y = targets.data()[i];
    const double q = pc.data()[i];
    total -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  Matrix v(1, 1);
  v(0, 0) = total / n;
  return make_result(std::move(v), "binary_cross_entropy", {p},
                     [targets, eps, n, pc = std::move(pc)](const Tape::Record& r) {
                       const double g = r.output->grad(0, 0);
                       const Matrix& raw = r.inputs[0]->value;
                       Matrix dx(raw.rows(), raw.cols());
                       for (Index i = 0; i < raw.size(); ++i) {
                         const double q = pc.data()[i];
                         const double y = targets.data()[i];
                         const bool clamped = raw.data()[i] < eps || raw.data()[i] > 1.0 - eps;
                         dx.data()[i] = clamped ? 0.0 : -(y / q - (1.0 - y) / (1.0 - q)) * g / n;
                       }
                       accumulate_grad(*r.inputs[0], dx);
                     });
}

Tensor sum(const Tensor& x) {
  Matrix v(1, 1);
  v(0, 0) = x.value().sum();
  return make_result(std::move(v), "sum", {x}, [](const Tape::Record& r) {
    const auto& in = r.inputs[0]->value;
    accumulate_grad(*r.inputs[0], Matrix::Constant(in.rows(), in.cols(), r.output->grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor vstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("vstack: no parts");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("vstack: column mismatch " + shape_string(parts.front().value()) + " vs " +
                           shape_string(p.value()));
    }
    rows += p.rows();
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(v), "vstack", parts, [](const Tape::Record& r) {
    Index at = 0;
    for (const auto& in : r.inputs) {
      const Index n = in->value.rows();
      if (in->requires_grad) accumulate_grad(*in, r.output->grad.middleRows(at, n));
      at += n;
    }
  });
}

Tensor hstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("hstack: no parts");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("hstack: row mismatch " + shape_string(parts.front().value()) + " vs " +
                           shape_string(p.value()));
    }
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(v), "hstack", parts, [](const Tape::Record& r) {
    Index at = 0;
    for (const auto& in : r.inputs) {
      const Index n = in->value.cols();
      if (in->requires_grad) accumulate_grad(*in, r.output->grad.middleCols(at, n));
      at += n;
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows) {
  Matrix v(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(x.value()));
    }
    v.row(static_cast<Index>(i)) = x.value().row(rows[i]);
  }
  return make_result(std::move(v), "gather_rows", {x}, [rows](const Tape::Record& r) {
    const auto& in = r.inputs[0]->value;
    Matrix dx = Matrix::Zero(in.rows(), in.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += r.output->grad.row(static_cast<Index>(i));
    accumulate_grad(*r.inputs[0], dx);
  });
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                         shape_string(x.value()));
  }
  return make_result(x.value().middleCols(start, count), "slice_cols", {x}, [start, count](const Tape::Record& r) {
    const auto& in = r.inputs[0]->value;
    Matrix dx = Matrix::Zero(in.rows(), in.cols());
    dx.middleCols(start, count) = r.output->grad;
    accumulate_grad(*r.inputs[0], dx);
  });
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                         shape_string(x.value()));
  }
  return make_result(x.value().middleRows(start, count), "slice_rows", {x}, [start, count](const Tape::Record& r) {
    const auto& in = r.inputs[0]->value;
    Matrix dx = Matrix::Zero(in.rows(), in.cols());
    dx.middleRows(start, count) = r.output->grad;
    accumulate_grad(*r.inputs[0], dx);
  });
}

Tensor scatter_rows(const Tensor& base, const std::vector<Index>& rows, const Tensor& values) {
  if (values.rows() != static_cast<Index>(rows.size()) || values.cols() != base.cols()) {
    throw DimensionError("scatter_rows: values " + shape_string(values.value()) + " for " +
                         std::to_string(rows.size()) + " rows of " + shape_string(base.value()));
  }
  Matrix v = base.value();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= base.rows()) {
      throw DimensionError("scatter_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(base.value()));
    }
    v.row(rows[i]) = values.value().row(static_cast<Index>(i));
  }
  return make_result(std::move(v), "scatter_rows", {base, values}, [rows](const Tape::Record& r) {
    Matrix gb = r.output->grad;
    Matrix gv(static_cast<Index>(rows.size()), gb.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      gv.row(static_cast<Index>(i)) = gb.row(rows[i]);
      gb.row(rows[i]).setZero();
    }
    accumulate_grad(*r.inputs[0], gb);
    accumulate_grad(*r.inputs[1], gv);
  });
}

}  // namespace met
