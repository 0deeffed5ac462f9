#pragma once

#include <memory>
#include <string>

#include "coopsim/channel.hpp"
#include "coopsim/expert.hpp"
#include "coopsim/point_transformer.hpp"
#include "coopsim/world.hpp"

namespace coopsim {

// What the driving policy sees each frame: its own scan and speed, plus
// whatever the channel delivered.
struct Observation {
  PointCloud ego_scan;  // sensor frame
  Pose ego_pose;
  double ego_speed = 0.0;
  std::vector<Message> messages;             // delivered keypoint messages
  std::vector<PointCloud> neighbor_clouds;   // delivered raw clouds (early fusion)
  std::vector<Pose> neighbor_poses;          // poses for neighbor_clouds, same order
};

enum class PolicyKind : uint8_t { cooperative = 0, no_v2v = 1, early_fusion = 2 };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::cooperative: return "cooperative";
    case PolicyKind::no_v2v: return "no_v2v";
    default: return "early_fusion";
  }
}

inline PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "cooperative") return PolicyKind::cooperative;
  if (s == "no_v2v") return PolicyKind::no_v2v;
  if (s == "early_fusion") return PolicyKind::early_fusion;
  throw std::invalid_argument("unknown policy kind: " + s);
}

struct PolicyConfig {
  PolicyKind kind = PolicyKind::cooperative;
  EncoderConfig encoder;        // desk defaults: 256 -> 16 keypoints, D=32
  double preprocess_voxel = 0.4;  // raw scan pooling cell size
  double aggregator_voxel = 2.0;  // ego-frame fusion cell size
  double speed_limit = 6.94;      // 25 km/h; normalizes the speed feature

  void validate() const {
    encoder.validate();
    if (preprocess_voxel <= 0 || aggregator_voxel <= 0 || speed_limit <= 0)
      throw std::invalid_argument("PolicyConfig: non-positive voxel or speed limit");
  }
};

// Voxel-pool a raw scan and fix its cardinality for the encoder.
inline PointCloud preprocess_scan(const PointCloud& scan, const PolicyConfig& cfg) {
  PointCloud pooled = voxel_centroid_pool(scan, cfg.preprocess_voxel);
  pooled.frame = scan.frame;
  PointCloud fixed = pad_or_subsample(pooled, cfg.encoder.input_points);
  fixed.frame = scan.frame;
  return fixed;
}

// Sender-side message construction. When `with_features` is false (no neural
// consumer this episode) the representation features are zeroed; keypoints
// are still the true sampled coordinates.
inline Message encode_message(const PointCloud& raw_scan, const Pose& sender_pose, VehicleId sender,
                              uint32_t frame, const PolicyConfig& cfg, const PolicyParams* params,
                              bool with_features) {
  PointCloud input = preprocess_scan(raw_scan, cfg);
  Message msg;
  msg.sender_id = sender;
  msg.frame_id = frame;
  msg.sender_pose = sender_pose;
  const size_t k = cfg.encoder.keypoint_budget;
  const size_t d = cfg.encoder.feature_dim;
  if (with_features && params) {
    Representation rep = encode(input, cfg.encoder, params->enc);
    msg.keypoints = rep.keypoints;
    msg.features.assign(k, std::vector<double>(d));
    for (size_t i = 0; i < k; ++i)
      for (size_t j = 0; j < d; ++j) msg.features[i][j] = f32_round(rep.features.data()[i * d + j]);
  } else {
    auto idx = farthest_point_sample(input, k, nearest_point_index(input));
    msg.keypoints.reserve(k);
    for (size_t i : idx) msg.keypoints.push_back(input.points[i]);
    msg.features.assign(k, std::vector<double>(d, 0.0));
  }
  for (Vec3& p : msg.keypoints) p = {f32_round(p.x), f32_round(p.y), f32_round(p.z)};
  return msg;
}

// DAgger sampling policy: execute the expert with probability beta, the
// student otherwise. One draw per frame.
inline Action mixed_rollout_action(const Action& expert_a, const Action& student_a, double beta, Rng& rng) {
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("mixed_rollout_action: beta outside [0,1]");
  return rng.bernoulli(beta) ? expert_a : student_a;
}

// The learned driving model: shared point encoder, ego-frame aggregator,
// control head. The three evaluation configurations are the same pipeline
// fed differently.
class LearnedPolicy {
 public:
  LearnedPolicy(PolicyConfig cfg, ParamStore store) : cfg_(cfg), store_(std::move(store)) {
    cfg_.validate();
    params_ = bind_policy_params(store_, cfg_.encoder);
  }

  static LearnedPolicy fresh(PolicyConfig cfg, uint64_t seed) {
    ParamStore store;
    Rng rng(derive_seed(seed, "params"));
    make_policy_params(store, cfg.encoder, rng);
    return LearnedPolicy(cfg, std::move(store));
  }

  const PolicyConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const PolicyParams& params() const { return params_; }

  // Differentiable forward to the clipped (3,) action tensor. Messages can be
  // given as live representations (training re-encode path) or the decoded
  // wire payloads (inference path).
  Tensor forward(const PointCloud& ego_scan, double ego_speed, const Pose& ego_pose,
                 const std::vector<std::pair<Representation, Pose>>& neighbor_reps) const {
    PointCloud input = preprocess_scan(ego_scan, cfg_);
    Representation ego_rep = encode(input, cfg_.encoder, params_.enc);
    Tensor fused = aggregate(ego_rep, neighbor_reps, ego_pose, cfg_.aggregator_voxel, params_.agg,
                             cfg_.encoder.knn_k, cfg_.encoder.coord_scale);
    return control_head_forward(fused, ego_speed / cfg_.speed_limit, params_.head);
  }

  // Early-fusion forward: the raw neighbor clouds are warped into the ego
  // frame, unioned with the ego scan, and the joint cloud runs the pipeline
  // with no message inputs.
  Tensor forward_early_fusion(const PointCloud& ego_scan, double ego_speed, const Pose& ego_pose,
                              const std::vector<PointCloud>& neighbor_clouds,
                              const std::vector<Pose>& neighbor_poses) const {
    PointCloud joint;
    joint.frame = ego_scan.frame;
    joint.points = ego_scan.points;
    for (size_t i = 0; i < neighbor_clouds.size(); ++i) {
      PointCloud warped = transform_to_frame(neighbor_clouds[i], neighbor_poses[i], ego_pose, ego_scan.frame);
      joint.points.insert(joint.points.end(), warped.points.begin(), warped.points.end());
    }
    return forward(joint, ego_speed, ego_pose, {});
  }

  Action act(const Observation& obs) const {
    Tensor out;
    switch (cfg_.kind) {
      case PolicyKind::no_v2v:
        out = forward(obs.ego_scan, obs.ego_speed, obs.ego_pose, {});
        break;
      case PolicyKind::early_fusion:
        out = forward_early_fusion(obs.ego_scan, obs.ego_speed, obs.ego_pose, obs.neighbor_clouds,
                                   obs.neighbor_poses);
        break;
      default: {
        std::vector<std::pair<Representation, Pose>> reps;
        reps.reserve(obs.messages.size());
        for (const Message& m : obs.messages) {
          Representation rep;
          rep.keypoints = m.keypoints;
          std::vector<double> flat;
          flat.reserve(m.k() * m.d());
          for (const auto& row : m.features) flat.insert(flat.end(), row.begin(), row.end());
          rep.features = Tensor::from_data({m.k(), m.d()}, std::move(flat));
          reps.push_back({std::move(rep), m.sender_pose});
        }
        out = forward(obs.ego_scan, obs.ego_speed, obs.ego_pose, reps);
      }
    }
    return {out.data()[0], out.data()[1], out.data()[2]};
  }

 private:
  PolicyConfig cfg_;
  ParamStore store_;
  PolicyParams params_;
};

}  // namespace coopsim
