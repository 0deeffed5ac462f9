#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "coopsim/binio.hpp"
#include "coopsim/geometry.hpp"

namespace coopsim {

// Coordinate-frame owner of a cloud: a vehicle id, or one of the sentinels.
using FrameId = uint32_t;
inline constexpr FrameId kWorldFrame = 0xFFFFFFFFu;

// Set of 3D points with optional per-point feature vectors.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::vector<double>> features;  // empty, or one row per point
  FrameId frame = kWorldFrame;

  size_t size() const { return points.size(); }
  bool has_features() const { return !features.empty(); }
  size_t feature_dim() const { return features.empty() ? 0 : features[0].size(); }

  void validate() const {
    for (const Vec3& p : points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw std::invalid_argument("PointCloud: non-finite coordinate");
    if (!features.empty() && features.size() != points.size())
      throw std::invalid_argument("PointCloud: feature rows != point count");
  }
};

namespace detail {

// Cell key per the floor rule: boundary points belong to the higher cell.
inline std::tuple<int64_t, int64_t, int64_t> voxel_key(const Vec3& p, double voxel_size) {
  return {static_cast<int64_t>(std::floor(p.x / voxel_size)),
          static_cast<int64_t>(std::floor(p.y / voxel_size)),
          static_cast<int64_t>(std::floor(p.z / voxel_size))};
}

inline bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

}  // namespace detail

// One point per occupied voxel cell at the arithmetic centroid of the cell's
// members. Output is sorted by cell key, so it is invariant to input order.
inline PointCloud voxel_centroid_pool(const PointCloud& cloud, double voxel_size) {
  if (voxel_size <= 0.0) throw std::invalid_argument("voxel_centroid_pool: voxel_size must be positive");
  std::map<std::tuple<int64_t, int64_t, int64_t>, std::vector<size_t>> cells;
  for (size_t i = 0; i < cloud.points.size(); ++i)
    cells[detail::voxel_key(cloud.points[i], voxel_size)].push_back(i);
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(cells.size());
  for (auto& [key, members] : cells) {
    // Canonical member order makes the summation order-independent.
    std::sort(members.begin(), members.end(),
              [&](size_t a, size_t b) { return detail::lex_less(cloud.points[a], cloud.points[b]); });
    Vec3 c{0, 0, 0};
    for (size_t i : members) {
      c.x += cloud.points[i].x;
      c.y += cloud.points[i].y;
      c.z += cloud.points[i].z;
    }
    double inv = 1.0 / static_cast<double>(members.size());
    out.points.push_back({c.x * inv, c.y * inv, c.z * inv});
  }
  return out;
}

// Per occupied cell: coordinate = centroid of member points, feature =
// elementwise max over member features. Coincident duplicates collapse first
// (max over their features), so re-sent copies of the same points are
// idempotent. Output sorted by cell key.
inline PointCloud voxel_feature_max_pool(const PointCloud& cloud, double voxel_size) {
  if (voxel_size <= 0.0) throw std::invalid_argument("voxel_feature_max_pool: voxel_size must be positive");
  if (!cloud.has_features()) throw std::invalid_argument("voxel_feature_max_pool: features required");
  const size_t d = cloud.feature_dim();
  std::map<std::tuple<int64_t, int64_t, int64_t>, std::vector<size_t>> cells;
  for (size_t i = 0; i < cloud.points.size(); ++i)
    cells[detail::voxel_key(cloud.points[i], voxel_size)].push_back(i);
  PointCloud out;
  out.frame = cloud.frame;
  for (auto& [key, members] : cells) {
    std::sort(members.begin(), members.end(),
              [&](size_t a, size_t b) { return detail::lex_less(cloud.points[a], cloud.points[b]); });
    // Collapse exact coordinate duplicates, feature-maxed.
    std::vector<size_t> uniq;
    std::vector<std::vector<double>> uniq_feat;
    for (size_t i : members) {
      const Vec3& p = cloud.points[i];
      if (!uniq.empty()) {
        const Vec3& q = cloud.points[uniq.back()];
        if (p.x == q.x && p.y == q.y && p.z == q.z) {
          for (size_t j = 0; j < d; ++j)
            uniq_feat.back()[j] = std::max(uniq_feat.back()[j], cloud.features[i][j]);
          continue;
        }
      }
      uniq.push_back(i);
      uniq_feat.push_back(cloud.features[i]);
    }
    Vec3 c{0, 0, 0};
    std::vector<double> f(d, -std::numeric_limits<double>::infinity());
    for (size_t m = 0; m < uniq.size(); ++m) {
      const Vec3& p = cloud.points[uniq[m]];
      c.x += p.x;
      c.y += p.y;
      c.z += p.z;
      for (size_t j = 0; j < d; ++j) f[j] = std::max(f[j], uniq_feat[m][j]);
    }
    double inv = 1.0 / static_cast<double>(uniq.size());
    out.points.push_back({c.x * inv, c.y * inv, c.z * inv});
    out.features.push_back(std::move(f));
  }
  return out;
}

// Greedy farthest point sampling from seed_index; each pick maximizes the
// minimum distance to the already-picked set, lowest index on ties.
inline std::vector<size_t> farthest_point_sample(const PointCloud& cloud, size_t k, size_t seed_index) {
  const size_t n = cloud.size();
  if (k < 1 || k > n)
    throw std::invalid_argument("farthest_point_sample: k=" + std::to_string(k) + " out of range for n=" +
                                std::to_string(n));
  if (seed_index >= n) throw std::invalid_argument("farthest_point_sample: seed_index out of range");
  std::vector<size_t> picked;
  picked.reserve(k);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  size_t cur = seed_index;
  for (size_t step = 0; step < k; ++step) {
    picked.push_back(cur);
    taken[cur] = 1;
    if (step + 1 == k) break;
    const Vec3& pc = cloud.points[cur];
    size_t best = n;
    double best_d2 = -1.0;
    for (size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dx = cloud.points[i].x - pc.x;
      double dy = cloud.points[i].y - pc.y;
      double dz = cloud.points[i].z - pc.z;
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    cur = best;
  }
  return picked;
}

// Index of the point nearest the given origin (default FPS seed).
inline size_t nearest_point_index(const PointCloud& cloud, const Vec3& origin = {0, 0, 0}) {
  if (cloud.size() == 0) throw std::invalid_argument("nearest_point_index: empty cloud");
  size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < cloud.size(); ++i) {
    double dx = cloud.points[i].x - origin.x;
    double dy = cloud.points[i].y - origin.y;
    double dz = cloud.points[i].z - origin.z;
    double d2 = dx * dx + dy * dy + dz * dz;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

// k nearest references per query by Euclidean distance, ties broken by lower
// index. Brute force; desk-scale clouds stay small.
inline std::vector<std::vector<size_t>> knn(const std::vector<Vec3>& queries,
                                            const std::vector<Vec3>& refs, size_t k) {
  if (k > refs.size())
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " exceeds reference count " +
                                std::to_string(refs.size()));
  std::vector<std::vector<size_t>> out(queries.size());
  std::vector<std::pair<double, size_t>> dist(refs.size());
  for (size_t q = 0; q < queries.size(); ++q) {
    for (size_t i = 0; i < refs.size(); ++i) {
      double dx = refs[i].x - queries[q].x;
      double dy = refs[i].y - queries[q].y;
      double dz = refs[i].z - queries[q].z;
      dist[i] = {dx * dx + dy * dy + dz * dz, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
    out[q].resize(k);
    for (size_t i = 0; i < k; ++i) out[q][i] = dist[i].second;
  }
  return out;
}

inline std::vector<std::vector<size_t>> knn(const PointCloud& queries, const PointCloud& refs, size_t k) {
  return knn(queries.points, refs.points, k);
}

// Rigid re-expression src -> world -> dst (yaw rotation + translation).
// Features untouched; frame relabeled to the destination's.
inline PointCloud transform_to_frame(const PointCloud& cloud, const Pose& src, const Pose& dst,
                                     FrameId dst_frame = kWorldFrame) {
  PointCloud out;
  out.features = cloud.features;
  out.frame = dst_frame;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back(dst.to_local(src.to_world(p)));
  return out;
}

// ---- preprocessing ----------------------------------------------------------

// Bisection on voxel size so that voxel_centroid_pool emits ~target points.
// The result is a calibration output stored in config.
inline double calibrate_voxel_size(const PointCloud& sample, size_t target, double lo = 1e-3,
                                   double hi = 100.0, int iters = 48) {
  auto count_at = [&](double s) { return voxel_centroid_pool(sample, s).size(); };
  for (int i = 0; i < iters; ++i) {
    double mid = 0.5 * (lo + hi);
    if (count_at(mid) > target)
      lo = mid;  // cells too small -> too many points -> grow
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Fixed-cardinality encoder input: farthest-point subsample when over, cyclic
// repeat when under. Empty clouds get a sentinel ground point at the sensor
// origin first.
inline PointCloud pad_or_subsample(const PointCloud& cloud, size_t target) {
  PointCloud out;
  out.frame = cloud.frame;
  if (cloud.size() == 0) {
    out.points.assign(1, Vec3{0, 0, 0});
  } else {
    out.points = cloud.points;
  }
  if (out.points.size() > target) {
    PointCloud tmp;
    tmp.points = out.points;
    auto idx = farthest_point_sample(tmp, target, nearest_point_index(tmp));
    std::sort(idx.begin(), idx.end());
    std::vector<Vec3> sel;
    sel.reserve(target);
    for (size_t i : idx) sel.push_back(out.points[i]);
    out.points = std::move(sel);
  } else {
    size_t base = out.points.size();
    for (size_t i = base; i < target; ++i) out.points.push_back(out.points[i % base]);
  }
  return out;
}

// ---- CPCD dump format ---------------------------------------------------------

// magic "CPCD", version u16, N u32, D u16, frame-id u32, then N*3 f32 coords,
// N*D f32 features, little-endian.
inline constexpr uint16_t kCloudVersion = 1;

inline void encode_cloud(ByteWriter& w, const PointCloud& cloud) {
  w.put_magic("CPCD");
  w.put<uint16_t>(kCloudVersion);
  w.put<uint32_t>(static_cast<uint32_t>(cloud.size()));
  w.put<uint16_t>(static_cast<uint16_t>(cloud.feature_dim()));
  w.put<uint32_t>(cloud.frame);
  for (const Vec3& p : cloud.points) {
    w.put<float>(static_cast<float>(p.x));
    w.put<float>(static_cast<float>(p.y));
    w.put<float>(static_cast<float>(p.z));
  }
  for (const auto& row : cloud.features)
    for (double v : row) w.put<float>(static_cast<float>(v));
}

inline PointCloud decode_cloud(ByteReader& r) {
  r.expect_magic("CPCD", "point cloud");
  uint16_t version = r.get<uint16_t>();
  if (version != kCloudVersion) throw std::runtime_error("point cloud: unsupported version");
  uint32_t n = r.get<uint32_t>();
  uint16_t d = r.get<uint16_t>();
  PointCloud cloud;
  cloud.frame = r.get<uint32_t>();
  cloud.points.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    cloud.points[i].x = r.get<float>();
    cloud.points[i].y = r.get<float>();
    cloud.points[i].z = r.get<float>();
  }
  if (d > 0) {
    cloud.features.assign(n, std::vector<double>(d));
    for (uint32_t i = 0; i < n; ++i)
      for (uint16_t j = 0; j < d; ++j) cloud.features[i][j] = r.get<float>();
  }
  return cloud;
}

inline std::vector<uint8_t> encode_cloud(const PointCloud& cloud) {
  ByteWriter w;
  encode_cloud(w, cloud);
  return w.take();
}

inline PointCloud decode_cloud(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  return decode_cloud(r);
}

}  // namespace coopsim
