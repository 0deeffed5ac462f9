#pragma once

#include <functional>
#include <optional>

#include "json.hpp"

#include "coopsim/policy.hpp"
#include "coopsim/scenario.hpp"

namespace coopsim {

enum class Outcome : uint8_t { success = 0, collision = 1, timeout = 2, stagnation = 3 };

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::success: return "success";
    case Outcome::collision: return "collision";
    case Outcome::timeout: return "timeout";
    default: return "stagnation";
  }
}

struct EpisodeConfig {
  ScenarioConfig scenario;
  ChannelConfig channel;
  PolicyConfig policy_cfg;   // message dimensions even when no student runs
  double time_limit = 60.0;
  size_t max_neighbors = 3;
  double comm_range = 40.0;
  size_t n_beams = 360;
  double lidar_range = 40.0;
  double stagnation_speed = 0.1;
  double stagnation_window = 30.0;
  double obstruction_radius = 15.0;  // stagnation timer pauses with traffic this close
  double beta = -1.0;                // >=0: execute expert with this probability per frame
  uint64_t episode_index = 0;
  bool record_frames = true;
};

struct TraceVehicle {
  VehicleId id;
  Pose pose;
  double speed;
};

struct TraceFrame {
  uint32_t frame = 0;
  Action executed, expert;
  std::vector<TraceVehicle> vehicles;
  std::vector<PointCloud> clouds;   // [0] = ego scan; then delivered senders' raw scans
  std::vector<Message> messages;    // delivered keypoint messages
};

// Per-frame log of observations, messages and actions plus the terminal
// outcome for one episode.
struct TraceRecord {
  nlohmann::json header;
  std::vector<TraceFrame> frames;
  Outcome outcome = Outcome::timeout;
  double t_agent = 0.0;
};

using StudentFn = std::function<Action(const Observation&)>;

// Closed-loop rollout. The expert action is computed and recorded every
// frame; the executed action is the student's (learned policy or scripted
// function), the expert's when no student is given, or the DAgger mixture
// when beta >= 0. Fully deterministic given the config seeds.
inline TraceRecord run_episode(const EpisodeConfig& cfg, const LearnedPolicy* policy = nullptr,
                               const StudentFn& scripted = nullptr) {
  WorldState world = spawn_scenario(cfg.scenario);
  ExpertConfig expert_cfg;
  PidSpeedLimiter limiter;

  const bool has_student = policy != nullptr || scripted != nullptr;
  const bool features_on = policy != nullptr;
  const bool raw_cloud_mode = policy && policy->config().kind == PolicyKind::early_fusion;

  Rng select_rng(derive_seed(cfg.scenario.seed, "select", cfg.episode_index));
  Rng channel_rng(derive_seed(cfg.channel.rng_seed, "channel", cfg.episode_index));
  Rng mix_rng(derive_seed(cfg.scenario.seed, "mix", cfg.episode_index));

  TraceRecord trace;
  trace.header["format"] = "coopsim-trace";
  trace.header["version"] = 1;
  trace.header["dt"] = world.dt;
  trace.header["time_limit"] = cfg.time_limit;
  trace.header["beta"] = cfg.beta;
  trace.header["features_encoded"] = features_on;
  trace.header["scenario"] = {{"kind", to_string(cfg.scenario.kind)},
                              {"traffic_density", cfg.scenario.traffic_density},
                              {"spawn_jitter", cfg.scenario.spawn_jitter},
                              {"collider_speed", cfg.scenario.collider_speed},
                              {"seed", cfg.scenario.seed},
                              {"background_seed", cfg.scenario.background_seed},
                              {"accident_enabled", cfg.scenario.accident_enabled},
                              {"convoy_size", cfg.scenario.convoy_size}};
  trace.header["channel"] = {{"throughput_mbps", cfg.channel.throughput_mbps},
                             {"packet_loss_prob", cfg.channel.packet_loss_prob},
                             {"window", cfg.channel.window},
                             {"rng_seed", cfg.channel.rng_seed}};
  trace.header["policy"] = {{"kind", policy ? to_string(policy->config().kind) : "expert"},
                            {"keypoints", cfg.policy_cfg.encoder.keypoint_budget},
                            {"feature_dim", cfg.policy_cfg.encoder.feature_dim}};
  trace.header["roles"] = {{"ego", world.ego_id},
                           {"occluder", world.occluder_id},
                           {"colliders", world.collider_ids}};
  {
    nlohmann::json route = nlohmann::json::array();
    for (const Vec2& p : world.ego().route.points) route.push_back({p.x, p.y});
    trace.header["route"] = route;
  }

  double stagnation_timer = 0.0;
  uint32_t frame = 0;
  trace.outcome = Outcome::timeout;
  trace.t_agent = cfg.time_limit;

  while (true) {
    if (world.time >= cfg.time_limit - 1e-9) {
      trace.outcome = Outcome::timeout;
      trace.t_agent = cfg.time_limit;
      break;
    }

    // Scans for the ego and every networked vehicle.
    std::map<VehicleId, PointCloud> scans;
    for (const auto& [id, v] : world.vehicles)
      if (id == world.ego_id || v.networked)
        scans[id] = lidar_scan(world, id, cfg.n_beams, cfg.lidar_range);

    // Neighbor selection among in-range networked vehicles.
    std::vector<NeighborInfo> infos;
    for (const auto& [id, v] : world.vehicles) infos.push_back({id, v.pose, v.networked});
    std::vector<uint32_t> selected =
        select_neighbors(infos, world.ego_id, world.ego().pose, cfg.comm_range, cfg.max_neighbors, select_rng);

    // Senders transmit; the channel delivers a subset.
    std::vector<uint32_t> delivered_ids;
    std::vector<Message> delivered_msgs;
    if (raw_cloud_mode) {
      std::vector<size_t> sizes;
      for (uint32_t id : selected) sizes.push_back(encode_cloud(scans.at(id)).size());
      for (size_t i : transmit_sizes(sizes, cfg.channel, channel_rng)) delivered_ids.push_back(selected[i]);
    } else {
      std::vector<Message> msgs;
      for (uint32_t id : selected)
        msgs.push_back(encode_message(scans.at(id), world.vehicles.at(id).pose, id, frame, cfg.policy_cfg,
                                      policy ? &policy->params() : nullptr, features_on));
      for (const Message& m : transmit(msgs, cfg.channel, channel_rng)) {
        delivered_msgs.push_back(decode_wire(encode_wire(m)));
        delivered_ids.push_back(m.sender_id);
      }
    }

    // Observation bundle for the student.
    Observation obs;
    obs.ego_scan = scans.at(world.ego_id);
    obs.ego_pose = world.ego().pose;
    obs.ego_speed = world.ego().speed;
    obs.messages = delivered_msgs;
    if (raw_cloud_mode) {
      for (uint32_t id : delivered_ids) {
        obs.neighbor_clouds.push_back(scans.at(id));
        obs.neighbor_poses.push_back(world.vehicles.at(id).pose);
      }
    }

    Action expert_a = expert_action(world, world.ego_id, world.goal, expert_cfg);
    Action student_a = expert_a;
    if (policy) student_a = policy->act(obs);
    else if (scripted) student_a = scripted(obs);

    Action executed = expert_a;
    if (has_student) {
      if (cfg.beta >= 0.0)
        executed = mixed_rollout_action(expert_a, student_a, cfg.beta, mix_rng);
      else
        executed = student_a;
    }
    executed = limiter.apply(executed, world.ego().speed, cfg.policy_cfg.speed_limit, world.dt);

    // Everyone else follows their route controller.
    std::map<VehicleId, Action> actions;
    actions[world.ego_id] = executed;
    for (auto& [id, v] : world.vehicles)
      if (id != world.ego_id) actions[id] = background_action(world, id);

    if (cfg.record_frames) {
      TraceFrame fr;
      fr.frame = frame;
      fr.executed = executed;
      fr.expert = expert_a;
      for (const auto& [id, v] : world.vehicles) fr.vehicles.push_back({id, v.pose, v.speed});
      fr.clouds.push_back(obs.ego_scan);
      for (uint32_t id : delivered_ids) fr.clouds.push_back(scans.at(id));
      fr.messages = delivered_msgs;
      trace.frames.push_back(std::move(fr));
    }

    step(world, actions, world.dt);
    ++frame;

    if (ego_collided(world)) {
      trace.outcome = Outcome::collision;
      trace.t_agent = world.time;
      break;
    }
    if ((world.ego().pose.position() - world.goal).norm() <= world.goal_radius) {
      trace.outcome = Outcome::success;
      trace.t_agent = world.time;
      break;
    }
    // Stagnation: stopped for too long with nothing nearby to wait for.
    bool obstructed = false;
    for (const auto& [id, v] : world.vehicles) {
      if (id == world.ego_id) continue;
      if ((v.pose.position() - world.ego().pose.position()).norm() < cfg.obstruction_radius)
        obstructed = true;
    }
    if (world.ego().speed < cfg.stagnation_speed && !obstructed)
      stagnation_timer += world.dt;
    else
      stagnation_timer = 0.0;
    if (stagnation_timer >= cfg.stagnation_window) {
      trace.outcome = Outcome::stagnation;
      trace.t_agent = world.time;
      break;
    }
  }
  trace.header["frames"] = trace.frames.size();
  return trace;
}

// ---- trace file format --------------------------------------------------------

// Header JSON line, then one "CPFR" block per frame, then a "CPEN" terminal
// block: outcome u8, t_agent f32, frame count u32.
inline std::vector<uint8_t> encode_trace(const TraceRecord& trace) {
  ByteWriter w;
  std::string header = trace.header.dump();
  header.push_back('\n');
  w.put_bytes(header.data(), header.size());
  for (const TraceFrame& fr : trace.frames) {
    w.put_magic("CPFR");
    w.put<uint32_t>(fr.frame);
    for (double v : {fr.executed.throttle, fr.executed.brake, fr.executed.steer}) w.put<float>(static_cast<float>(v));
    for (double v : {fr.expert.throttle, fr.expert.brake, fr.expert.steer}) w.put<float>(static_cast<float>(v));
    w.put<uint16_t>(static_cast<uint16_t>(fr.vehicles.size()));
    for (const TraceVehicle& tv : fr.vehicles) {
      w.put<uint32_t>(tv.id);
      w.put<float>(static_cast<float>(tv.pose.x));
      w.put<float>(static_cast<float>(tv.pose.y));
      w.put<float>(static_cast<float>(tv.pose.z));
      w.put<float>(static_cast<float>(tv.pose.yaw));
      w.put<float>(static_cast<float>(tv.speed));
    }
    w.put<uint16_t>(static_cast<uint16_t>(fr.clouds.size()));
    for (const PointCloud& c : fr.clouds) encode_cloud(w, c);
    w.put<uint16_t>(static_cast<uint16_t>(fr.messages.size()));
    for (const Message& m : fr.messages) {
      auto bytes = encode_wire(m);
      w.put_bytes(bytes.data(), bytes.size());
    }
  }
  w.put_magic("CPEN");
  w.put<uint8_t>(static_cast<uint8_t>(trace.outcome));
  w.put<float>(static_cast<float>(trace.t_agent));
  w.put<uint32_t>(static_cast<uint32_t>(trace.frames.size()));
  return w.take();
}

inline TraceRecord decode_trace(const std::vector<uint8_t>& bytes) {
  size_t nl = 0;
  while (nl < bytes.size() && bytes[nl] != '\n') ++nl;
  if (nl == bytes.size()) throw std::runtime_error("trace: missing header line");
  TraceRecord trace;
  trace.header = nlohmann::json::parse(std::string(bytes.begin(), bytes.begin() + static_cast<long>(nl)));
  ByteReader r(bytes.data() + nl + 1, bytes.size() - nl - 1);
  while (true) {
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::memcmp(magic, "CPEN", 4) == 0) {
      trace.outcome = static_cast<Outcome>(r.get<uint8_t>());
      trace.t_agent = r.get<float>();
      uint32_t n = r.get<uint32_t>();
      if (n != trace.frames.size()) throw std::runtime_error("trace: frame count mismatch");
      break;
    }
    if (std::memcmp(magic, "CPFR", 4) != 0) throw std::runtime_error("trace: bad frame magic");
    TraceFrame fr;
    fr.frame = r.get<uint32_t>();
    fr.executed.throttle = r.get<float>();
    fr.executed.brake = r.get<float>();
    fr.executed.steer = r.get<float>();
    fr.expert.throttle = r.get<float>();
    fr.expert.brake = r.get<float>();
    fr.expert.steer = r.get<float>();
    uint16_t nveh = r.get<uint16_t>();
    for (uint16_t i = 0; i < nveh; ++i) {
      TraceVehicle tv;
      tv.id = r.get<uint32_t>();
      tv.pose.x = r.get<float>();
      tv.pose.y = r.get<float>();
      tv.pose.z = r.get<float>();
      tv.pose.yaw = r.get<float>();
      tv.speed = r.get<float>();
      fr.vehicles.push_back(tv);
    }
    uint16_t nclouds = r.get<uint16_t>();
    for (uint16_t i = 0; i < nclouds; ++i) fr.clouds.push_back(decode_cloud(r));
    uint16_t nmsgs = r.get<uint16_t>();
    for (uint16_t i = 0; i < nmsgs; ++i) fr.messages.push_back(decode_wire(r));
    trace.frames.push_back(std::move(fr));
  }
  return trace;
}

inline void write_trace(const std::string& path, const TraceRecord& trace) {
  write_file(path, encode_trace(trace));
}

inline TraceRecord read_trace(const std::string& path) { return decode_trace(read_file(path)); }

}  // namespace coopsim
