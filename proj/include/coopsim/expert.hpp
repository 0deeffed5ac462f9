#pragma once

#include <cmath>
#include <stdexcept>

#include "coopsim/world.hpp"

namespace coopsim {

// Privileged oracle driver: A* route over the lane graph (stopped vehicles
// prune edges), constant-velocity forecasts for everyone else, full brake on
// any predicted conflict inside the horizon, otherwise pure-pursuit steering
// with a PI speed controller at the 20 km/h target.

struct ExpertConfig {
  double target_speed = 5.56;  // 20 km/h
  double horizon = 4.0;        // conflict look-ahead, seconds
  double forecast_dt = 0.2;
  double conflict_margin = 0.25;   // rect inflation in the overlap test
  double moving_threshold = 0.5;   // below: treated as a parked obstacle for planning
  double block_inflation = 0.3;    // extra lane-width margin when pruning edges
  double kp_speed = 0.6;
  double ki_speed = 0.15;
  double lookahead_min = 3.0;
  double lookahead_max = 8.0;
  double lookahead_gain = 0.8;
};

struct ExpertPlanningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Is the directed edge unusable because a stopped vehicle or a static sits on
// it (inflated by the follower's half width)?
inline bool edge_blocked(const WorldState& world, VehicleId self_id, size_t from, size_t to,
                         const ExpertConfig& cfg) {
  const VehicleState& self = world.vehicles.at(self_id);
  Vec2 a = world.lane_graph.node(from).pos;
  Vec2 b = world.lane_graph.node(to).pos;
  double inflate = self.half_wid + cfg.block_inflation;
  for (const auto& [id, v] : world.vehicles) {
    if (id == self_id || v.speed >= cfg.moving_threshold) continue;
    if (segment_hits_rect(a, b, v.rect().inflated(inflate))) return true;
  }
  for (const StaticObstacle& s : world.statics)
    if (segment_hits_rect(a, b, s.rect.inflated(inflate))) return true;
  return false;
}

inline double pure_pursuit_steer(const VehicleState& v, Route& route, const VehicleDynamics& dyn,
                                 const ExpertConfig& cfg) {
  auto [s, dist_to_path] = route.project(v.pose.position());
  double lookahead = std::clamp(cfg.lookahead_min + cfg.lookahead_gain * v.speed, cfg.lookahead_min,
                                cfg.lookahead_max);
  Vec2 target = route.at(s + lookahead);
  Vec2 local = {target.x - v.pose.x, target.y - v.pose.y};
  double c = std::cos(v.pose.yaw), si = std::sin(v.pose.yaw);
  double lx = c * local.x + si * local.y;
  double ly = -si * local.x + c * local.y;
  double alpha = std::atan2(ly, std::max(lx, 1e-6));
  double ld = std::max(1.0, std::sqrt(lx * lx + ly * ly));
  double steer_angle = std::atan2(2.0 * v.wheelbase * std::sin(alpha), ld);
  return std::clamp(steer_angle / dyn.delta_max, -1.0, 1.0);
}

// PI throttle with drag feed-forward so the steady state holds the target.
inline void speed_control(VehicleState& v, const VehicleDynamics& dyn, double target, double kp,
                          double ki, double dt, Action& out) {
  double err = target - v.speed;
  if (err < -0.5) {
    out.throttle = 0.0;
    out.brake = std::clamp(0.4 * (-err), 0.0, 1.0);
    v.pid_integral = 0.0;
    return;
  }
  v.pid_integral = std::clamp(v.pid_integral + err * dt, -2.0, 2.0);
  double feedforward = dyn.drag * target / dyn.a_max;
  out.throttle = std::clamp(kp * err + ki * v.pid_integral + feedforward, 0.0, 1.0);
  out.brake = 0.0;
}

// Time-parameterized positions along the remaining route assuming the
// vehicle accelerates toward `speed` with a_max (drag-corrected).
struct PlanSampler {
  Route* route;
  double s0;
  double v0;
  double target;
  double a_eff;

  Vec2 position_at(double t, double* heading_out) const {
    // integrate v' = a_eff until target, then hold
    double v = v0, s = s0, remaining = t;
    const double h = 0.1;
    while (remaining > 1e-9) {
      double stepd = std::min(h, remaining);
      v = std::min(target, v + a_eff * stepd);
      s += v * stepd;
      remaining -= stepd;
    }
    Vec2 p = route->at(s);
    Vec2 q = route->at(s + 1.0);
    if (heading_out) {
      Vec2 d = q - p;
      *heading_out = d.norm() > 1e-9 ? std::atan2(d.y, d.x) : 0.0;
    }
    return p;
  }
};

}  // namespace detail

// (Re)plans the vehicle's route via A* if it has none or the way ahead is
// blocked. Throws ExpertPlanningError when no path to the goal exists.
inline void ensure_route(WorldState& world, VehicleId id, Vec2 goal, const ExpertConfig& cfg) {
  VehicleState& v = world.vehicles.at(id);
  auto blocked = [&](size_t from, size_t to) { return detail::edge_blocked(world, id, from, to, cfg); };

  bool need_plan = v.route.empty();
  if (!need_plan) {
    // Route ahead blocked by something parked -> replan.
    Route probe = v.route;
    auto [s, d] = probe.project(v.pose.position());
    for (double ahead = 2.0; ahead <= 24.0; ahead += 2.0) {
      Vec2 a = probe.at(s + ahead - 2.0), b = probe.at(s + ahead);
      double inflate = v.half_wid + cfg.block_inflation;
      for (const auto& [oid, o] : world.vehicles) {
        if (oid == id || o.speed >= cfg.moving_threshold) continue;
        if (segment_hits_rect(a, b, o.rect().inflated(inflate))) need_plan = true;
      }
      if (need_plan) break;
    }
  }
  if (!need_plan) return;

  size_t start = world.lane_graph.nearest_node(v.pose);
  size_t goal_node = world.lane_graph.nearest_node_to_point(goal);
  auto path = world.lane_graph.astar(start, goal_node, blocked);
  if (path.empty()) {
    // Maybe we are standing on the blocked edge itself; retry unblocked from
    // the next nodes before giving up.
    path = world.lane_graph.astar(start, goal_node);
    if (path.empty()) throw ExpertPlanningError("expert: goal unreachable from current pose");
  }
  Route r;
  r.points = world.lane_graph.path_points(path);
  // Extend past the goal so pure pursuit has a target at the end.
  if (r.points.size() >= 2) {
    Vec2 d = r.points.back() - r.points[r.points.size() - 2];
    double n = d.norm();
    if (n > 1e-9) r.points.push_back(r.points.back() + d * (6.0 / n));
  }
  v.route = std::move(r);
}

// True if the vehicle's time-parameterized plan overlaps any other vehicle's
// constant-velocity forecast within the horizon.
inline bool plan_conflicts(const WorldState& world, VehicleId id, const ExpertConfig& cfg) {
  const VehicleState& self = world.vehicles.at(id);
  if (self.route.empty()) return false;
  Route probe = self.route;
  auto [s0, dist] = probe.project(self.pose.position());
  detail::PlanSampler plan{&probe, s0, self.speed, cfg.target_speed,
                           world.dynamics.a_max - world.dynamics.drag * cfg.target_speed};
  for (double t = cfg.forecast_dt; t <= cfg.horizon + 1e-9; t += cfg.forecast_dt) {
    double heading = self.pose.yaw;
    Vec2 p = plan.position_at(t, &heading);
    OrientedRect mine{p, heading, self.half_len + cfg.conflict_margin, self.half_wid + cfg.conflict_margin,
                      0.0};
    for (const auto& [oid, o] : world.vehicles) {
      if (oid == id || o.speed < cfg.moving_threshold) continue;
      Vec2 op = o.pose.position() + o.pose.heading() * (o.speed * t);
      OrientedRect theirs{op, o.pose.yaw, o.half_len + cfg.conflict_margin, o.half_wid + cfg.conflict_margin,
                          0.0};
      if (rects_overlap(mine, theirs)) return true;
    }
  }
  return false;
}

// The privileged expert action for one vehicle.
inline Action expert_action(WorldState& world, VehicleId id, Vec2 goal,
                            const ExpertConfig& cfg = ExpertConfig{}) {
  ensure_route(world, id, goal, cfg);
  VehicleState& v = world.vehicles.at(id);
  Action out{};
  out.steer = detail::pure_pursuit_steer(v, v.route, world.dynamics, cfg);
  if (plan_conflicts(world, id, cfg)) {
    out.throttle = 0.0;
    out.brake = 1.0;
    v.pid_integral = 0.0;
    return out;
  }
  detail::speed_control(v, world.dynamics, cfg.target_speed, cfg.kp_speed, cfg.ki_speed, world.dt, out);
  return out;
}

// Background traffic: the same route follower without the privileged
// conflict braking; a simple headway rule keeps same-lane followers apart.
// Colliders run this too (their routes are the violating ones).
inline Action background_action(WorldState& world, VehicleId id, const ExpertConfig& cfg = ExpertConfig{}) {
  VehicleState& v = world.vehicles.at(id);
  Action out{};
  if (v.route.empty() || v.cruise_speed <= 0.0) {
    out.brake = v.speed > 0.01 ? 1.0 : 0.0;
    return out;
  }
  Route& route = v.route;
  auto [s, d] = route.project(v.pose.position());
  if (route.length() - s < 3.0) {  // end of route: stop
    out.brake = 1.0;
    return out;
  }
  out.steer = detail::pure_pursuit_steer(v, route, world.dynamics, cfg);
  // Headway: brake for a vehicle ahead in our corridor.
  double gap_needed = v.speed * 1.6 + 6.0;
  for (const auto& [oid, o] : world.vehicles) {
    if (oid == id) continue;
    Vec2 rel = o.pose.position() - v.pose.position();
    double ahead = rel.dot(v.pose.heading());
    double lateral = std::abs(rel.cross(v.pose.heading()));
    if (ahead > 0.0 && ahead < gap_needed && lateral < 1.6 &&
        std::abs(normalize_angle(o.pose.yaw - v.pose.yaw)) < kPi / 3) {
      out.throttle = 0.0;
      out.brake = 1.0;
      v.pid_integral = 0.0;
      return out;
    }
  }
  detail::speed_control(v, world.dynamics, v.cruise_speed, cfg.kp_speed, cfg.ki_speed, world.dt, out);
  return out;
}

}  // namespace coopsim
