#pragma once

#include "met/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace met {

using Rng = std::mt19937_64;

class MissingGradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered registry of every trainable tensor, addressed by name.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool decay = true;
  };

  Tensor add(const std::string& name, Matrix init, bool decay = true);

  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), fan_in = rows.
  Tensor add_weight(const std::string& name, Index rows, Index cols, Rng& rng);
  Tensor add_bias(const std::string& name, Index cols);
  Tensor add_gain(const std::string& name, Index cols);
  // normal(0, 0.02)
  Tensor add_embedding(const std::string& name, Index rows, Index cols, Rng& rng);

  Tensor at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  double grad_norm() const;
  void scale_grads(double s);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  std::int64_t step = 0;
};

// Adam with decoupled weight decay; applies weight decay only to entries
// registered with decay = true.
void adam_step(ModelParams& params, AdamState& state, const AdamOptions& opt);

// Checkpoint layout (all integers little-endian):
//   bytes 0..7    magic "METCKPT1"
//   bytes 8..15   uint64 header length H
//   next H bytes  UTF-8 JSON header:
//                 {"meta": {...}, "tensors": [{"name", "shape": [r, c], "offset"}]}
//   remainder     float64 little-endian row-major data; offset counts doubles
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;
};

void save_checkpoint(const std::string& path, const ModelParams& params, const nlohmann::json& meta);
Checkpoint read_checkpoint(const std::string& path);
// Copies checkpoint tensors into params; throws CheckpointError listing every
// missing, unexpected, or shape-mismatched tensor.
void load_into(ModelParams& params, const Checkpoint& ckpt);

}  // namespace met
