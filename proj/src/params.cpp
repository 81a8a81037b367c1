#include "met/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace met {

Tensor ModelParams::add(const std::string& name, Matrix init, bool decay) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  Tensor t(std::move(init), true);
  index_[name] = entries_.size();
  entries_.push_back({name, t, decay});
  return t;
}

Tensor ModelParams::add_weight(const std::string& name, Index rows, Index cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return add(name, std::move(m), true);
}

Tensor ModelParams::add_bias(const std::string& name, Index cols) { return add(name, Matrix::Zero(1, cols), false); }

Tensor ModelParams::add_gain(const std::string& name, Index cols) { return add(name, Matrix::Ones(1, cols), false); }

Tensor ModelParams::add_embedding(const std::string& name, Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 0.02);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return add(name, std::move(m), true);
}

Tensor ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.tensor.size());
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

double ModelParams::grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    if (e.tensor.node()->grad.size()) s += e.tensor.node()->grad.squaredNorm();
  }
  return std::sqrt(s);
}

void ModelParams::scale_grads(double s) {
  for (auto& e : entries_) {
    if (e.tensor.node()->grad.size()) e.tensor.node()->grad *= s;
  }
}

void adam_step(ModelParams& params, AdamState& state, const AdamOptions& opt) {
  bool any = false;
  for (const auto& e : params.entries()) any = any || e.tensor.grad_populated();
  if (!any) throw MissingGradError("adam_step: no parameter has a gradient; run backward() first");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (const auto& e : params.entries()) {
    Tensor w = e.tensor;
    const Matrix g = w.grad();
    auto [mit, m_new] = state.m.try_emplace(e.name, Matrix::Zero(w.rows(), w.cols()));
    auto [vit, v_new] = state.v.try_emplace(e.name, Matrix::Zero(w.rows(), w.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    Matrix update = ((m / c1).array() / ((v / c2).array().sqrt() + opt.eps)).matrix();
    if (e.decay && opt.weight_decay != 0.0) update += opt.weight_decay * w.value();
    w.mutable_value() -= opt.lr * update;
  }
}

namespace {

constexpr char kMagic[8] = {'M', 'E', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw CheckpointError("checkpoint truncated in header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) { write_u64(os, std::bit_cast<std::uint64_t>(d)); }

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const nlohmann::json& meta) {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : params.entries()) {
    header["tensors"].push_back({{"name", e.name}, {"shape", {e.tensor.rows(), e.tensor.cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.tensor.size());
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : params.entries()) {
    const Matrix& m = e.tensor.value();
    for (Index i = 0; i < m.size(); ++i) write_f64(os, m.data()[i]);
  }
  if (!os) throw CheckpointError("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("not a checkpoint file: " + path);
  const std::uint64_t hlen = read_u64(is);
  std::string text(hlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw CheckpointError("checkpoint truncated in JSON header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  std::uint64_t expected_offset = 0;
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("shape").at(0).get<Index>();
    const auto cols = t.at("shape").at(1).get<Index>();
    if (t.at("offset").get<std::uint64_t>() != expected_offset) {
      throw CheckpointError("checkpoint tensor " + t.at("name").get<std::string>() + " has a non-contiguous offset");
    }
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(read_u64(is));
    expected_offset += static_cast<std::uint64_t>(m.size());
    ck.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return ck;
}

void load_into(ModelParams& params, const Checkpoint& ckpt) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& [name, m] : ckpt.tensors) {
    seen.insert(name);
    if (!params.contains(name)) {
      problems.push_back(name + " (not in model)");
      continue;
    }
    Tensor t = params.at(name);
    if (t.rows() != m.rows() || t.cols() != m.cols()) {
      problems.push_back(name + " (checkpoint " + shape_string(m) + ", model " + shape_string(t.value()) + ")");
    }
  }
  for (const auto& e : params.entries()) {
    if (!seen.count(e.name)) problems.push_back(e.name + " (missing from checkpoint)");
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "checkpoint does not match model; offending tensors:";
    for (const auto& p : problems) os << "\n  " << p;
    throw CheckpointError(os.str());
  }
  for (const auto& [name, m] : ckpt.tensors) params.at(name).mutable_value() = m;
}

}  // namespace met
