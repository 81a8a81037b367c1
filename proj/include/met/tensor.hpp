#pragma once

// Dense tensors with a reverse-mode gradient tape.
//
// Every tensor is a row-major matrix of doubles; vectors are 1 x d rows and
// scalars are 1 x 1. Operations record onto the tape installed for the
// current thread (see TapeScope). With no tape installed they only compute
// values, which is what inference paths use.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace met {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Matrix& m);

struct TensorNode {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  // Set by backward() on leaves that received a gradient contribution.
  bool grad_populated = false;
  // True for tensors produced by a recorded operation.
  bool is_intermediate = false;
};

class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols);
  static Tensor scalar(double v);
  static Tensor row(const std::vector<double>& values);

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }

  const Matrix& value() const { return node_->value; }
  // Direct write access for optimizers and initializers; never use on taped values.
  Matrix& mutable_value() { return node_->value; }

  // Same shape as value(); zeros when no gradient has been accumulated.
  Matrix grad() const;
  bool grad_populated() const { return node_->grad_populated; }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const;
  bool is_finite() const;

  // Shares no state with this tensor and never records gradients.
  Tensor detach() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  bool same_as(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    // Reads output->grad and accumulates into the inputs.
    std::function<void(const Record&)> backward;
  };

  void record(Record r) { records_.push_back(std::move(r)); }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  // Replays the recorded operations in reverse. Leaf gradients accumulate
  // across calls; intermediate gradients are reset on every call.
  void backward(const Tensor& loss);

  // Name of the first recorded op whose output is non-finite, or "" if none.
  std::string first_nonfinite_op() const;

 private:
  std::vector<Record> records_;
};

Tape* active_tape();

// Installs a tape for the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the current thread for the lifetime of the scope.
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

// Runs backward on the active tape.
void backward(const Tensor& loss);

// Adds g into the node's gradient when it participates in differentiation.
void accumulate_grad(TensorNode& node, const Matrix& g);

// Builds an op output, recording it when a tape is active and an input
// requires a gradient.
Tensor make_result(Matrix value, const char* op, std::vector<Tensor> inputs,
                   std::function<void(const Tape::Record&)> backward);

}  // namespace met
