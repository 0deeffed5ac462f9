#pragma once

#include <array>
#include <string>
#include <vector>

#include "coopsim/action.hpp"
#include "coopsim/checkpoint.hpp"
#include "coopsim/pointcloud.hpp"
#include "coopsim/tensor.hpp"

namespace coopsim {

// Point Transformer policy network: per-vehicle point encoder, ego-frame
// representation aggregator, and the control head.

struct LinearParams {
  Tensor w, b;
};

struct Mlp2Params {
  Tensor w1, b1, w2, b2;
};

// Two layers, one relu, no final bias: the attention logits go straight into
// a per-channel softmax over neighbors, which cancels any constant shift, so
// a final bias would be exactly inert.
struct AttnMlpParams {
  Tensor w1, b1, w2;
};

// One vector self-attention layer: per-point maps phi/psi/alpha, attention
// MLP gamma (two layers, one relu), position-encoding MLP theta (3 -> D,
// two layers, one relu). All maps share the attention width D.
struct PTLayerParams {
  LinearParams phi, psi, alpha;
  AttnMlpParams gamma;
  Mlp2Params theta;
};

struct PTBlockParams {
  LinearParams lin_in, lin_out;
  PTLayerParams layer;
};

struct EncoderParams {
  LinearParams embed;  // 3 -> D input embedding
  std::array<PTBlockParams, 3> blocks;
  std::array<LinearParams, 3> down_proj;  // used at stages with rate > 1
};

struct HeadParams {
  LinearParams l1, l2, out;
};

struct PolicyParams {
  EncoderParams enc;
  PTBlockParams agg;
  HeadParams head;
};

struct EncoderConfig {
  size_t input_points = 256;
  std::array<size_t, 3> downsample_rates = {1, 4, 4};
  size_t feature_dim = 32;
  size_t knn_k = 8;
  size_t keypoint_budget = 16;
  // Meters-to-network-units factor for the embedding and position encodings;
  // keeps activations O(1) for desk-scale scenes (tens of meters).
  double coord_scale = 0.1;

  void validate() const {
    if (coord_scale <= 0.0) throw std::invalid_argument("EncoderConfig: coord_scale must be positive");
    size_t prod = downsample_rates[0] * downsample_rates[1] * downsample_rates[2];
    if (prod == 0 || input_points == 0 || input_points % prod != 0)
      throw std::invalid_argument("EncoderConfig: rates do not divide input_points");
    if (input_points / prod != keypoint_budget)
      throw std::invalid_argument("EncoderConfig: input_points / prod(rates) != keypoint_budget");
    if (feature_dim == 0 || knn_k == 0) throw std::invalid_argument("EncoderConfig: zero dims");
  }
};

// K keypoint coordinates (sender frame) with K feature vectors.
struct Representation {
  std::vector<Vec3> keypoints;
  Tensor features;  // (K, D)
};

namespace detail {

// Creates parameters into the store, or binds existing ones (checking dims).
class ParamBinder {
 public:
  ParamBinder(ParamStore& store, Rng* rng) : store_(store), rng_(rng) {}

  LinearParams linear(const std::string& name, size_t in, size_t out) {
    LinearParams p;
    p.w = tensor(name + ".w", {in, out}, in);
    p.b = tensor(name + ".b", {out}, in);
    return p;
  }

  Mlp2Params mlp2(const std::string& name, size_t in, size_t hidden, size_t out) {
    Mlp2Params p;
    p.w1 = tensor(name + ".w1", {in, hidden}, in);
    p.b1 = tensor(name + ".b1", {hidden}, in);
    p.w2 = tensor(name + ".w2", {hidden, out}, hidden);
    p.b2 = tensor(name + ".b2", {out}, hidden);
    return p;
  }

  AttnMlpParams attn_mlp(const std::string& name, size_t in, size_t hidden, size_t out) {
    AttnMlpParams p;
    p.w1 = tensor(name + ".w1", {in, hidden}, in);
    p.b1 = tensor(name + ".b1", {hidden}, in);
    p.w2 = tensor(name + ".w2", {hidden, out}, hidden);
    return p;
  }

  PTLayerParams pt_layer(const std::string& name, size_t d) {
    PTLayerParams p;
    p.phi = linear(name + ".phi", d, d);
    p.psi = linear(name + ".psi", d, d);
    p.alpha = linear(name + ".alpha", d, d);
    p.gamma = attn_mlp(name + ".gamma", d, d, d);
    p.theta = mlp2(name + ".theta", 3, d, d);
    return p;
  }

  PTBlockParams pt_block(const std::string& name, size_t d) {
    PTBlockParams p;
    p.lin_in = linear(name + ".lin_in", d, d);
    p.lin_out = linear(name + ".lin_out", d, d);
    p.layer = pt_layer(name + ".layer", d);
    return p;
  }

 private:
  Tensor tensor(const std::string& name, Shape shape, size_t fan_in) {
    if (rng_) {
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = rng_->uniform(-bound, bound);
      return store_.add(name, Tensor::from_data(std::move(shape), std::move(v)));
    }
    Tensor t = store_.at(name);
    if (t.shape() != shape)
      throw std::runtime_error("checkpoint dim mismatch for " + name + ": have " + shape_str(t.shape()) +
                               ", config wants " + shape_str(shape));
    return t;
  }

  ParamStore& store_;
  Rng* rng_;
};

inline PolicyParams build_policy_params(ParamStore& store, const EncoderConfig& cfg, Rng* rng) {
  cfg.validate();
  ParamBinder b(store, rng);
  PolicyParams p;
  const size_t d = cfg.feature_dim;
  p.enc.embed = b.linear("enc.embed", 3, d);
  for (size_t i = 0; i < 3; ++i) {
    p.enc.blocks[i] = b.pt_block("enc.b" + std::to_string(i + 1), d);
    if (cfg.downsample_rates[i] > 1)
      p.enc.down_proj[i] = b.linear("enc.down" + std::to_string(i + 1) + ".proj", d, d);
  }
  p.agg = b.pt_block("agg.blk", d);
  p.head.l1 = b.linear("head.l1", d + 1, 2 * d);
  p.head.l2 = b.linear("head.l2", 2 * d, 2 * d);
  p.head.out = b.linear("head.out", 2 * d, 3);
  return p;
}

}  // namespace detail

// Fresh randomly-initialized parameters registered into `store`.
inline PolicyParams make_policy_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  return detail::build_policy_params(store, cfg, &rng);
}

// Binds an existing store (e.g. a loaded checkpoint) to the given config,
// erroring on any dimension mismatch.
inline PolicyParams bind_policy_params(ParamStore& store, const EncoderConfig& cfg) {
  return detail::build_policy_params(store, cfg, nullptr);
}

// ---- forward ----------------------------------------------------------------

inline Tensor linear_rows(const Tensor& x, const LinearParams& p) {
  return add_bias(matmul(x, p.w), p.b);
}

inline Tensor linear_vec(const Tensor& x, const LinearParams& p) {
  Tensor row = reshape(x, {1, x.dim(0)});
  Tensor y = add_bias(matmul(row, p.w), p.b);
  return reshape(y, {y.dim(1)});
}

inline Tensor mlp2_rows(const Tensor& x, const Mlp2Params& p) {
  return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

inline Tensor attn_mlp_rows(const Tensor& x, const AttnMlpParams& p) {
  return matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2);
}

inline Tensor points_tensor(const std::vector<Vec3>& pts) {
  std::vector<double> v;
  v.reserve(pts.size() * 3);
  for (const Vec3& p : pts) {
    v.push_back(p.x);
    v.push_back(p.y);
    v.push_back(p.z);
  }
  return Tensor::from_data({pts.size(), 3}, std::move(v));
}

// Vector self-attention over kNN neighborhoods:
//   y_i = sum_j softmax_j(gamma(phi(x_i) - psi(x_j) + delta_ij)) * (alpha(x_j) + delta_ij)
// with delta_ij = theta(p_i - p_j). The softmax normalizes per channel across
// the neighbor axis. Neighborhoods include the query point itself.
inline Tensor pt_layer(const std::vector<Vec3>& points, const Tensor& features,
                       const PTLayerParams& params, size_t knn_k, double coord_scale = 1.0) {
  const size_t n = points.size();
  if (features.rank() != 2 || features.dim(0) != n)
    throw std::invalid_argument("pt_layer: features " + shape_str(features.shape()) + " vs " +
                                std::to_string(n) + " points");
  if (knn_k == 0 || knn_k > n)
    throw std::invalid_argument("pt_layer: knn_k=" + std::to_string(knn_k) + " out of range for n=" +
                                std::to_string(n));
  auto nbrs = knn(points, points, knn_k);
  std::vector<size_t> idx_center(n * knn_k), idx_nbr(n * knn_k);
  std::vector<double> pdiff(n * knn_k * 3);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < knn_k; ++j) {
      size_t r = i * knn_k + j;
      idx_center[r] = i;
      idx_nbr[r] = nbrs[i][j];
      pdiff[r * 3 + 0] = (points[i].x - points[nbrs[i][j]].x) * coord_scale;
      pdiff[r * 3 + 1] = (points[i].y - points[nbrs[i][j]].y) * coord_scale;
      pdiff[r * 3 + 2] = (points[i].z - points[nbrs[i][j]].z) * coord_scale;
    }
  Tensor rel = Tensor::from_data({n * knn_k, 3}, std::move(pdiff));
  Tensor delta = mlp2_rows(rel, params.theta);
  Tensor phi_x = linear_rows(features, params.phi);
  Tensor psi_x = linear_rows(features, params.psi);
  Tensor alpha_x = linear_rows(features, params.alpha);
  Tensor att_in = add(sub(gather_rows(phi_x, idx_center), gather_rows(psi_x, idx_nbr)), delta);
  Tensor weights = softmax_blocked(attn_mlp_rows(att_in, params.gamma), knn_k);
  Tensor values = add(gather_rows(alpha_x, idx_nbr), delta);
  return sum_rows_blocked(mul(weights, values), knn_k);
}

// Linear -> attention layer -> linear, with a residual connection from block
// input to block output.
inline Tensor pt_block(const std::vector<Vec3>& points, const Tensor& features,
                       const PTBlockParams& params, size_t knn_k, double coord_scale = 1.0) {
  Tensor h = linear_rows(features, params.lin_in);
  h = pt_layer(points, h, params.layer, knn_k, coord_scale);
  h = linear_rows(h, params.lin_out);
  return add(features, h);
}

// Farthest point sampling to n/rate points, then per selected point an
// elementwise max over the (linearly projected) features of its knn_k
// neighbors in the full input set.
inline std::pair<std::vector<Vec3>, Tensor> downsample_block(const std::vector<Vec3>& points,
                                                             const Tensor& features, size_t rate,
                                                             size_t knn_k, const LinearParams& proj) {
  const size_t n = points.size();
  if (rate == 0 || n % rate != 0)
    throw std::invalid_argument("downsample_block: rate " + std::to_string(rate) +
                                " does not divide cardinality " + std::to_string(n));
  const size_t m = n / rate;
  PointCloud pc;
  pc.points = points;
  auto sel = farthest_point_sample(pc, m, nearest_point_index(pc));
  std::vector<Vec3> new_points(m);
  for (size_t i = 0; i < m; ++i) new_points[i] = points[sel[i]];
  size_t k = std::min(knn_k, n);
  auto nbrs = knn(new_points, points, k);
  Tensor projected = linear_rows(features, proj);
  std::vector<std::vector<size_t>> groups(m);
  for (size_t i = 0; i < m; ++i) groups[i] = nbrs[i];
  Tensor new_features = max_rows_grouped(projected, groups);
  return {std::move(new_points), new_features};
}

// Three attention blocks with down-sampling between stages per the configured
// rates. Emits keypoint_budget keypoints with feature_dim features in the
// sender frame. Attention k is clamped to the stage cardinality.
inline Representation encode(const PointCloud& cloud, const EncoderConfig& cfg,
                             const EncoderParams& params) {
  cfg.validate();
  if (cloud.size() == 0) throw std::invalid_argument("encode: empty cloud");
  if (cloud.size() != cfg.input_points)
    throw std::invalid_argument("encode: cloud size " + std::to_string(cloud.size()) +
                                " != input_points " + std::to_string(cfg.input_points) +
                                " (pad or subsample upstream)");
  std::vector<Vec3> pts = cloud.points;
  Tensor x = linear_rows(scale(points_tensor(pts), cfg.coord_scale), params.embed);
  for (size_t stage = 0; stage < 3; ++stage) {
    if (cfg.downsample_rates[stage] > 1) {
      auto [np, nx] = downsample_block(pts, x, cfg.downsample_rates[stage],
                                       std::min(cfg.knn_k, pts.size()), params.down_proj[stage]);
      pts = std::move(np);
      x = nx;
    }
    x = pt_block(pts, x, params.blocks[stage], std::min(cfg.knn_k, pts.size()), cfg.coord_scale);
  }
  return {std::move(pts), x};
}

namespace detail {

struct VoxelCell {
  Vec3 centroid;
  std::vector<size_t> members;  // row indices, all duplicates included
};

// Cells sorted by key; centroids computed over coordinate-deduplicated
// members in lexicographic order, so the result is independent of input
// ordering and of exact re-sent duplicates.
inline std::vector<VoxelCell> collect_voxel_cells(const std::vector<Vec3>& points, double voxel_size) {
  std::map<std::tuple<int64_t, int64_t, int64_t>, std::vector<size_t>> cells;
  for (size_t i = 0; i < points.size(); ++i) cells[voxel_key(points[i], voxel_size)].push_back(i);
  std::vector<VoxelCell> out;
  out.reserve(cells.size());
  for (auto& [key, members] : cells) {
    std::sort(members.begin(), members.end(),
              [&](size_t a, size_t b) { return lex_less(points[a], points[b]); });
    VoxelCell cell;
    cell.members = members;
    Vec3 c{0, 0, 0};
    size_t uniq = 0;
    for (size_t m = 0; m < members.size(); ++m) {
      const Vec3& p = points[members[m]];
      if (m > 0) {
        const Vec3& q = points[members[m - 1]];
        if (p.x == q.x && p.y == q.y && p.z == q.z) continue;
      }
      c.x += p.x;
      c.y += p.y;
      c.z += p.z;
      ++uniq;
    }
    double inv = 1.0 / static_cast<double>(uniq);
    cell.centroid = {c.x * inv, c.y * inv, c.z * inv};
    out.push_back(std::move(cell));
  }
  return out;
}

}  // namespace detail

// Ego-frame fusion: neighbor keypoints are transformed into the ego frame,
// unioned with the ego keypoints, voxel max-pooled, passed through one
// attention block, and reduced by a global elementwise max. Invariant under
// neighbor ordering and per-message point ordering.
inline Tensor aggregate(const Representation& ego, const std::vector<std::pair<Representation, Pose>>& neighbors,
                        const Pose& ego_pose, double voxel_size, const PTBlockParams& agg_params,
                        size_t knn_k, double coord_scale = 1.0) {
  std::vector<Vec3> union_pts = ego.keypoints;
  std::vector<Tensor> feature_parts{ego.features};
  for (const auto& [rep, pose] : neighbors) {
    for (const Vec3& p : rep.keypoints) union_pts.push_back(ego_pose.to_local(pose.to_world(p)));
    feature_parts.push_back(rep.features);
  }
  Tensor features = concat_rows(feature_parts);
  auto cells = detail::collect_voxel_cells(union_pts, voxel_size);
  std::vector<Vec3> pooled_pts(cells.size());
  std::vector<std::vector<size_t>> groups(cells.size());
  for (size_t i = 0; i < cells.size(); ++i) {
    pooled_pts[i] = cells[i].centroid;
    groups[i] = cells[i].members;
  }
  Tensor pooled = max_rows_grouped(features, groups);
  Tensor fused = pt_block(pooled_pts, pooled, agg_params, std::min(knn_k, pooled_pts.size()), coord_scale);
  return max_over_rows(fused);
}

// MLP on concat(fused, normalized speed); outputs clipped to their valid
// ranges: throttle [0,1], brake [0,1], steer [-1,1]. Returns the (3,) tensor
// so training can flow through it.
inline Tensor control_head_forward(const Tensor& fused, double speed_norm, const HeadParams& params) {
  Tensor inp = concat_vec({fused, Tensor::from_data({1}, {speed_norm})});
  Tensor h = relu(linear_vec(inp, params.l1));
  h = relu(linear_vec(h, params.l2));
  Tensor raw = reshape(linear_vec(h, params.out), {3, 1});
  Tensor tb = clip(gather_rows(raw, {0, 1}), 0.0, 1.0);
  Tensor steer = clip(gather_rows(raw, {2}), -1.0, 1.0);
  return reshape(concat_rows({tb, steer}), {3});
}

inline Action control_head(const Tensor& fused, double speed_norm, const HeadParams& params) {
  Tensor out = control_head_forward(fused, speed_norm, params);
  return {out.data()[0], out.data()[1], out.data()[2]};
}

// Speed limiter: above the limit, throttle is cut and brake raised by the
// controller error term; at or below the limit the action passes through.
struct PidSpeedLimiter {
  double kp = 0.5;
  double ki = 0.1;
  double integral = 0.0;

  Action apply(const Action& action, double ego_speed, double limit, double dt = 0.1) {
    if (limit <= 0.0) throw std::invalid_argument("PidSpeedLimiter: limit must be positive");
    if (ego_speed <= limit) {
      integral = 0.0;
      return action;
    }
    double err = ego_speed - limit;
    integral += err * dt;
    Action out = action;
    out.throttle = 0.0;
    out.brake = std::clamp(std::max(action.brake, kp * err + ki * integral), 0.0, 1.0);
    return out;
  }
};

inline Action pid_speed_limit(const Action& action, double ego_speed, double limit) {
  PidSpeedLimiter limiter;
  return limiter.apply(action, ego_speed, limit);
}

}  // namespace coopsim
