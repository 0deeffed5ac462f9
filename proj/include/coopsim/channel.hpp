#pragma once

#include <cstdint>
#include <vector>

#include "coopsim/binio.hpp"
#include "coopsim/geometry.hpp"
#include "coopsim/rng.hpp"

namespace coopsim {

// V2V message exchange: the CPMS wire codec, bandwidth accounting, neighbor
// selection, and a capacity-limited lossy channel calibrated to measured
// radio numbers (C-V2X 7.2 Mbps, DSRC 2.0 Mbps, <5% packet loss).

// Sender header plus K keypoint coordinates and K feature vectors.
struct Message {
  uint32_t sender_id = 0;
  uint32_t frame_id = 0;
  Pose sender_pose;
  std::vector<Vec3> keypoints;                 // K x 3, sender frame
  std::vector<std::vector<double>> features;   // K x D, f32 at the wire

  size_t k() const { return keypoints.size(); }
  size_t d() const { return features.empty() ? 0 : features[0].size(); }
};

struct ChannelConfig {
  double throughput_mbps = 7.2;  // measured C-V2X capacity
  double packet_loss_prob = 0.05;
  double window = 0.1;  // seconds; one LiDAR frame at 10 Hz
  uint64_t rng_seed = 7;

  void validate() const {
    if (packet_loss_prob < 0.0 || packet_loss_prob >= 1.0)
      throw std::invalid_argument("ChannelConfig: packet_loss_prob must be in [0,1)");
    if (throughput_mbps <= 0.0) throw std::invalid_argument("ChannelConfig: throughput must be positive");
    if (window <= 0.0) throw std::invalid_argument("ChannelConfig: window must be positive");
  }
};

// Wire size of a K x (D,3) message: 32-byte header + 12K coords + 4KD
// features.
inline size_t wire_bytes(size_t k, size_t d) { return 32 + 12 * k + 4 * k * d; }

// Required throughput in Mbps at the given message rate.
inline double bandwidth_mbps(size_t k, size_t d, double rate_hz) {
  return static_cast<double>(wire_bytes(k, d)) * 8.0 * rate_hz / 1e6;
}

inline constexpr uint16_t kMessageVersion = 1;

// CPMS layout, little-endian, header exactly 32 bytes:
//   magic "CPMS" (4) | version u16 | sender_id u32 | frame_id u16 |
//   pose 4 x f32 (x,y,z,yaw) | K u16 | D u16
// then K x 3 f32 coords and K x D f32 features. frame_id is u16 on the wire
// (64k frames = ~2 h at 10 Hz).
inline std::vector<uint8_t> encode_wire(const Message& msg) {
  const size_t k = msg.k(), d = msg.d();
  if (k > 0xFFFF || d > 0xFFFF)
    throw std::invalid_argument("encode_wire: K or D exceeds u16 range");
  if (msg.frame_id > 0xFFFF)
    throw std::invalid_argument("encode_wire: frame_id exceeds u16 range");
  if (!msg.features.empty() && msg.features.size() != k)
    throw std::invalid_argument("encode_wire: feature rows != keypoint count");
  for (const Vec3& p : msg.keypoints)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::invalid_argument("encode_wire: non-finite keypoint");
  ByteWriter w;
  w.put_magic("CPMS");
  w.put<uint16_t>(kMessageVersion);
  w.put<uint32_t>(msg.sender_id);
  w.put<uint16_t>(static_cast<uint16_t>(msg.frame_id));
  w.put<float>(static_cast<float>(msg.sender_pose.x));
  w.put<float>(static_cast<float>(msg.sender_pose.y));
  w.put<float>(static_cast<float>(msg.sender_pose.z));
  w.put<float>(static_cast<float>(msg.sender_pose.yaw));
  w.put<uint16_t>(static_cast<uint16_t>(k));
  w.put<uint16_t>(static_cast<uint16_t>(d));
  for (const Vec3& p : msg.keypoints) {
    w.put<float>(static_cast<float>(p.x));
    w.put<float>(static_cast<float>(p.y));
    w.put<float>(static_cast<float>(p.z));
  }
  for (const auto& row : msg.features) {
    if (row.size() != d) throw std::invalid_argument("encode_wire: ragged feature row");
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("encode_wire: non-finite feature");
      w.put<float>(static_cast<float>(v));
    }
  }
  return w.take();
}

inline Message decode_wire(ByteReader& r) {
  r.expect_magic("CPMS", "message");
  uint16_t version = r.get<uint16_t>();
  if (version != kMessageVersion) throw std::runtime_error("message: unsupported version");
  Message msg;
  msg.sender_id = r.get<uint32_t>();
  msg.frame_id = r.get<uint16_t>();
  msg.sender_pose.x = r.get<float>();
  msg.sender_pose.y = r.get<float>();
  msg.sender_pose.z = r.get<float>();
  msg.sender_pose.yaw = r.get<float>();
  uint16_t k = r.get<uint16_t>();
  uint16_t d = r.get<uint16_t>();
  msg.keypoints.resize(k);
  for (uint16_t i = 0; i < k; ++i) {
    msg.keypoints[i].x = r.get<float>();
    msg.keypoints[i].y = r.get<float>();
    msg.keypoints[i].z = r.get<float>();
  }
  if (d > 0) {
    msg.features.assign(k, std::vector<double>(d));
    for (uint16_t i = 0; i < k; ++i)
      for (uint16_t j = 0; j < d; ++j) msg.features[i][j] = r.get<float>();
  }
  return msg;
}

inline Message decode_wire(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  return decode_wire(r);
}

// Uniform random subset of the in-range networked vehicles, excluding ego,
// of size min(max_n, candidates). Returned in draw order.
struct NeighborInfo {
  uint32_t id = 0;
  Pose pose;
  bool networked = false;
};

inline std::vector<uint32_t> select_neighbors(const std::vector<NeighborInfo>& vehicles, uint32_t ego_id,
                                              const Pose& ego_pose, double comm_range, size_t max_n,
                                              Rng& rng) {
  std::vector<uint32_t> in_range;
  for (const NeighborInfo& v : vehicles) {
    if (v.id == ego_id || !v.networked) continue;
    double dx = v.pose.x - ego_pose.x, dy = v.pose.y - ego_pose.y;
    if (std::sqrt(dx * dx + dy * dy) <= comm_range) in_range.push_back(v.id);
  }
  std::sort(in_range.begin(), in_range.end());
  auto picks = rng.sample_without_replacement(in_range.size(), max_n);
  std::vector<uint32_t> out;
  out.reserve(picks.size());
  for (size_t i : picks) out.push_back(in_range[i]);
  return out;
}

// Channel core shared by keypoint messages and raw-cloud sharing: per-item
// Bernoulli loss, then in-order admission against the window's byte budget.
// Admission stops at the first item that would overflow the window.
inline std::vector<size_t> transmit_sizes(const std::vector<size_t>& byte_sizes, const ChannelConfig& cfg,
                                          Rng& rng) {
  cfg.validate();
  std::vector<size_t> kept;
  double budget_bits = cfg.throughput_mbps * 1e6 * cfg.window;
  double used_bits = 0.0;
  bool open = true;
  for (size_t i = 0; i < byte_sizes.size(); ++i) {
    bool lost = rng.bernoulli(cfg.packet_loss_prob);
    if (lost || !open) continue;
    double bits = static_cast<double>(byte_sizes[i]) * 8.0;
    if (used_bits + bits > budget_bits) {
      open = false;
      continue;
    }
    used_bits += bits;
    kept.push_back(i);
  }
  return kept;
}

// Delivered messages are bit-identical to sent ones; the delivered set is
// always an in-order subset of the sent list.
inline std::vector<Message> transmit(const std::vector<Message>& msgs, const ChannelConfig& cfg, Rng& rng) {
  std::vector<size_t> sizes(msgs.size());
  for (size_t i = 0; i < msgs.size(); ++i) sizes[i] = wire_bytes(msgs[i].k(), msgs[i].d());
  std::vector<Message> out;
  for (size_t i : transmit_sizes(sizes, cfg, rng)) out.push_back(msgs[i]);
  return out;
}

}  // namespace coopsim
