#pragma once

#include <map>
#include <string>

#include "coopsim/binio.hpp"
#include "coopsim/rng.hpp"
#include "coopsim/tensor.hpp"

namespace coopsim {

// Named trainable tensors. std::map keeps serialization order stable.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    t.impl()->requires_grad = true;
    auto [it, fresh] = params_.emplace(name, std::move(t));
    if (!fresh) throw std::invalid_argument("ParamStore: duplicate name " + name);
    return it->second;
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParamStore: missing " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParamStore: missing " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  size_t total_coords() const {
    size_t n = 0;
    for (auto& [name, t] : params_) n += t.numel();
    return n;
  }

  ParamStore clone() const {
    ParamStore out;
    for (auto& [name, t] : params_)
      out.add(name, Tensor::from_data(t.shape(), t.data()));
    return out;
  }

 private:
  std::map<std::string, Tensor> params_;
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Tensor init_linear_weight(Rng& rng, size_t fan_in, size_t fan_out) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return Tensor::from_data({fan_in, fan_out}, std::move(w));
}

inline Tensor init_bias(Rng& rng, size_t fan_in, size_t fan_out) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> b(fan_out);
  for (double& v : b) v = rng.uniform(-bound, bound);
  return Tensor::from_data({fan_out}, std::move(b));
}

// Parameter checkpoint, "CPNP": magic, version u16, count u32, then per
// tensor: name length u16 + UTF-8 name, rank u8, extents u32 each, float64
// data little-endian. An optional trailing u32-length-prefixed JSON blob
// carries the training config echo.
inline constexpr uint16_t kCheckpointVersion = 1;

inline std::vector<uint8_t> encode_checkpoint(const ParamStore& params, const std::string& config_json = "") {
  ByteWriter w;
  w.put_magic("CPNP");
  w.put<uint16_t>(kCheckpointVersion);
  w.put<uint32_t>(static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.put<uint16_t>(static_cast<uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<uint8_t>(static_cast<uint8_t>(t.rank()));
    for (size_t e : t.shape()) w.put<uint32_t>(static_cast<uint32_t>(e));
    w.put_bytes(t.data().data(), t.numel() * sizeof(double));
  }
  if (!config_json.empty()) {
    w.put<uint32_t>(static_cast<uint32_t>(config_json.size()));
    w.put_bytes(config_json.data(), config_json.size());
  }
  return w.take();
}

struct Checkpoint {
  ParamStore params;
  std::string config_json;
};

inline Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("CPNP", "checkpoint");
  uint16_t version = r.get<uint16_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  uint32_t count = r.get<uint32_t>();
  Checkpoint ck;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.get<uint16_t>();
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    uint8_t rank = r.get<uint8_t>();
    Shape shape(rank);
    for (uint8_t d = 0; d < rank; ++d) shape[d] = r.get<uint32_t>();
    std::vector<double> data(shape_numel(shape));
    r.get_bytes(data.data(), data.size() * sizeof(double));
    ck.params.add(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  if (r.remaining() >= 4) {
    uint32_t len = r.get<uint32_t>();
    ck.config_json.resize(len);
    r.get_bytes(ck.config_json.data(), len);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const std::string& config_json = "") {
  write_file(path, encode_checkpoint(params, config_json));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace coopsim
