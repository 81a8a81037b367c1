#include "met/tensor.hpp"

#include <sstream>

namespace met {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<TensorNode>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<TensorNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

Tensor Tensor::row(const std::vector<double>& values) {
  Matrix m(1, static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
  return Tensor(std::move(m));
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.resize(0, 0);
  node_->grad_populated = false;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(value()));
  return node_->value(0, 0);
}

bool Tensor::is_finite() const { return node_->value.allFinite(); }

Tensor Tensor::detach() const { return Tensor(node_->value, false); }

void accumulate_grad(TensorNode& node, const Matrix& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
  if (!node.is_intermediate) node.grad_populated = true;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_string(loss.value()));
  }
  const auto& root = loss.node();
  if (!root->is_intermediate) {
    // A leaf loss: its own gradient is one.
    accumulate_grad(*root, Matrix::Ones(1, 1));
    return;
  }
  for (auto& r : records_) r.output->grad = Matrix::Zero(r.output->value.rows(), r.output->value.cols());
  root->grad = Matrix::Ones(1, 1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.isZero(0.0)) continue;
    it->backward(*it);
  }
}

std::string Tape::first_nonfinite_op() const {
  for (const auto& r : records_) {
    if (!r.output->value.allFinite()) return r.op;
  }
  return "";
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

Tensor make_result(Matrix value, const char* op, std::vector<Tensor> inputs,
                   std::function<void(const Tape::Record&)> backward) {
  Tensor out(std::move(value));
  Tape* tape = active_tape();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.node()->requires_grad = true;
  out.node()->is_intermediate = true;
  Tape::Record r;
  r.op = op;
  r.inputs.reserve(inputs.size());
  for (auto& t : inputs) r.inputs.push_back(t.node());
  r.output = out.node();
  r.backward = std::move(backward);
  tape->record(std::move(r));
  return out;
}

}  // namespace met
