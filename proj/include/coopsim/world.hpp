#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coopsim/action.hpp"
#include "coopsim/geometry.hpp"
#include "coopsim/lane_graph.hpp"
#include "coopsim/pointcloud.hpp"

namespace coopsim {

using VehicleId = uint32_t;

enum class VehicleKind : uint8_t { car = 0, truck = 1 };
enum class VehicleRole : uint8_t { ego = 0, occluder = 1, collider = 2, background = 3 };

// Bicycle-model constants shared by every vehicle (calibration values; the
// upstream system delegates physics to a full simulator).
struct VehicleDynamics {
  double a_max = 3.0;       // m/s^2 at full throttle
  double b_max = 8.0;       // m/s^2 at full brake
  double delta_max = 35.0 * kPi / 180.0;
  double drag = 0.1;        // 1/s
};

struct VehicleState {
  Pose pose;
  double speed = 0.0;
  double wheelbase = 2.7;
  double half_len = 2.25;
  double half_wid = 0.95;
  double height = 1.5;
  VehicleKind kind = VehicleKind::car;
  VehicleRole role = VehicleRole::background;
  bool networked = false;
  double cruise_speed = 5.56;  // controller target; 0 = parked/waiting
  Route route;
  double pid_integral = 0.0;  // per-vehicle speed controller state

  OrientedRect rect() const { return {pose.position(), pose.yaw, half_len, half_wid, height}; }
};

inline VehicleState make_car(Pose pose, VehicleRole role, bool networked, double cruise) {
  VehicleState v;
  v.pose = pose;
  v.role = role;
  v.networked = networked;
  v.cruise_speed = cruise;
  return v;
}

inline VehicleState make_truck(Pose pose, VehicleRole role, bool networked, double cruise) {
  VehicleState v;
  v.pose = pose;
  v.role = role;
  v.networked = networked;
  v.cruise_speed = cruise;
  v.kind = VehicleKind::truck;
  v.wheelbase = 4.5;
  v.half_len = 4.0;
  v.half_wid = 1.3;
  v.height = 3.2;
  return v;
}

struct StaticObstacle {
  OrientedRect rect;
};

// Fixed-cycle signal per approach (0=N, 1=E, 2=S, 3=W). The north/south
// approaches share a phase, as do east/west.
struct TrafficLights {
  enum class Phase : uint8_t { green = 0, yellow = 1, red = 2 };
  double t = 0.0;
  double green_s = 300.0, yellow_s = 3.0, red_s = 300.0;
  double ns_offset = 0.0;  // NS starts green
  double ew_offset = 0.0;  // EW offset into the cycle; default leaves EW red while NS is green

  double cycle() const { return green_s + yellow_s + red_s; }

  Phase phase(int approach) const {
    bool ns = (approach == 0 || approach == 2);
    double local = std::fmod(t + (ns ? ns_offset : ew_offset + green_s + yellow_s), cycle());
    if (local < green_s) return Phase::green;
    if (local < green_s + yellow_s) return Phase::yellow;
    return Phase::red;
  }

  void advance(double dt) { t += dt; }
};

// All vehicle kinematic states, lights, static obstacles, lane graph and the
// clock for one scenario instance.
struct WorldState {
  double time = 0.0;
  double dt = 0.1;
  VehicleDynamics dynamics;
  std::map<VehicleId, VehicleState> vehicles;  // ordered: deterministic iteration
  VehicleId ego_id = 0;
  std::vector<VehicleId> collider_ids;
  VehicleId occluder_id = 0;
  TrafficLights lights;
  LaneGraph lane_graph;
  std::vector<StaticObstacle> statics;
  Vec2 goal;
  double goal_radius = 3.0;

  VehicleState& ego() { return vehicles.at(ego_id); }
  const VehicleState& ego() const { return vehicles.at(ego_id); }
};

// Pseudo vehicle-id space for static obstacles in collision reports.
inline constexpr VehicleId kStaticIdBase = 1u << 16;

// Kinematic bicycle step for every vehicle, then the light timers. Missing
// actions mean coast (zero throttle/brake/steer).
inline void step(WorldState& world, const std::map<VehicleId, Action>& actions, double dt = 0.1) {
  for (auto& [id, v] : world.vehicles) {
    Action a{};
    if (auto it = actions.find(id); it != actions.end()) {
      it->second.validate();
      a = it->second;
    }
    const VehicleDynamics& dyn = world.dynamics;
    double accel = dyn.a_max * a.throttle - dyn.b_max * a.brake - dyn.drag * v.speed;
    double new_speed = std::max(0.0, v.speed + accel * dt);
    double yaw_rate = (new_speed / v.wheelbase) * std::tan(a.steer * dyn.delta_max);
    double new_yaw = normalize_angle(v.pose.yaw + yaw_rate * dt);
    v.pose.x += new_speed * std::cos(new_yaw) * dt;
    v.pose.y += new_speed * std::sin(new_yaw) * dt;
    v.pose.yaw = new_yaw;
    v.speed = new_speed;
  }
  world.lights.advance(dt);
  world.time += dt;
}

// All overlapping pairs: vehicle-vehicle, plus vehicle-static with the
// static's pseudo id. Overlap is closed (touching counts).
inline std::vector<std::pair<VehicleId, VehicleId>> check_collision(const WorldState& world) {
  std::vector<std::pair<VehicleId, VehicleId>> out;
  for (auto a = world.vehicles.begin(); a != world.vehicles.end(); ++a) {
    auto b = a;
    for (++b; b != world.vehicles.end(); ++b)
      if (rects_overlap(a->second.rect(), b->second.rect())) out.push_back({a->first, b->first});
    for (size_t s = 0; s < world.statics.size(); ++s)
      if (rects_overlap(a->second.rect(), world.statics[s].rect))
        out.push_back({a->first, kStaticIdBase + static_cast<VehicleId>(s)});
  }
  return out;
}

inline bool ego_collided(const WorldState& world) {
  for (auto& [a, b] : check_collision(world))
    if (a == world.ego_id || b == world.ego_id) return true;
  return false;
}

struct LidarHit {
  Vec3 point;        // sensor frame, z = blocking object's height
  uint32_t object;   // vehicle id or static pseudo id
};

// n_beams equiangular planar rays from the vehicle center. Each beam returns
// the first hit within max_range (hard occlusion); hits are tagged with the
// blocking object's height and expressed in the sensor frame.
inline std::vector<LidarHit> lidar_scan_hits(const WorldState& world, VehicleId vehicle_id,
                                             size_t n_beams, double max_range) {
  const VehicleState& self = world.vehicles.at(vehicle_id);
  Vec2 origin = self.pose.position();
  std::vector<LidarHit> hits;
  hits.reserve(n_beams);
  for (size_t b = 0; b < n_beams; ++b) {
    double ang = self.pose.yaw + 2.0 * kPi * static_cast<double>(b) / static_cast<double>(n_beams);
    Vec2 dir{std::cos(ang), std::sin(ang)};
    double best_t = max_range;
    uint32_t best_obj = 0;
    double best_h = 0.0;
    bool found = false;
    for (const auto& [id, v] : world.vehicles) {
      if (id == vehicle_id) continue;
      if (auto t = ray_rect_first_hit(origin, dir, v.rect()); t && *t <= best_t) {
        best_t = *t;
        best_obj = id;
        best_h = v.height;
        found = true;
      }
    }
    for (size_t s = 0; s < world.statics.size(); ++s) {
      if (auto t = ray_rect_first_hit(origin, dir, world.statics[s].rect); t && *t <= best_t) {
        best_t = *t;
        best_obj = kStaticIdBase + static_cast<VehicleId>(s);
        best_h = world.statics[s].rect.height;
        found = true;
      }
    }
    if (!found) continue;
    Vec2 wp = origin + dir * best_t;
    Vec3 local = self.pose.to_local({wp.x, wp.y, best_h});
    hits.push_back({local, best_obj});
  }
  return hits;
}

inline PointCloud lidar_scan(const WorldState& world, VehicleId vehicle_id, size_t n_beams,
                             double max_range) {
  PointCloud cloud;
  cloud.frame = vehicle_id;
  for (const LidarHit& h : lidar_scan_hits(world, vehicle_id, n_beams, max_range))
    cloud.points.push_back(h.point);
  return cloud;
}

}  // namespace coopsim
