#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "coopsim/expert.hpp"
#include "coopsim/rng.hpp"
#include "coopsim/world.hpp"

namespace coopsim {

// The three benchmark scenes. Each puts an occluder between the ego vehicle
// and a conflicting "collider" convoy so that the hazard is outside the
// ego's own line of sight at spawn but visible to at least one networked
// neighbor (verified by raycast before the world is released).

enum class ScenarioKind : uint8_t { overtaking = 0, left_turn = 1, red_light_violation = 2 };

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::overtaking: return "overtaking";
    case ScenarioKind::left_turn: return "left_turn";
    default: return "red_light_violation";
  }
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "overtaking") return ScenarioKind::overtaking;
  if (s == "left_turn") return ScenarioKind::left_turn;
  if (s == "red_light_violation") return ScenarioKind::red_light_violation;
  throw std::invalid_argument("unknown scenario kind: " + s);
}

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::left_turn;
  size_t traffic_density = 3;   // background vehicle count (slot-capped)
  double spawn_jitter = 1.0;    // meters of ego spawn variation along its lane
  double collider_speed = 6.0;  // m/s
  uint64_t seed = 7;
  uint64_t background_seed = 7;  // repeats vary only this
  bool accident_enabled = true;
  size_t convoy_size = 2;

  void validate() const {
    if (collider_speed < 0.0 || spawn_jitter < 0.0)
      throw std::invalid_argument("ScenarioConfig: negative speed or jitter");
  }
};

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr size_t kSpawnBeams = 360;
inline constexpr double kSpawnRange = 40.0;

inline void add_wall(WorldState& w, Vec2 center, double half_len, double yaw) {
  w.statics.push_back({OrientedRect{center, yaw, half_len, 0.5, 2.5}});
}

inline void add_block(WorldState& w, Vec2 center, double half, double height) {
  w.statics.push_back({OrientedRect{center, 0.0, half, half, height}});
}

// Travel time from rest over `dist` meters accelerating toward the target
// speed with drag-corrected full-throttle authority.
inline double eta_for_distance(double dist, double target, const VehicleDynamics& dyn) {
  double v = 0.0, s = 0.0, t = 0.0;
  const double h = 0.05;
  while (s < dist && t < 120.0) {
    double a = std::min(dyn.a_max * 0.8 - dyn.drag * v, dyn.a_max);  // PI ramp is gentler than full throttle
    if (v >= target) a = 0.0;
    v = std::min(target, v + a * h);
    s += v * h;
    t += h;
  }
  return t;
}

// First arc length at which the route crosses within `tol` of the predicate.
inline std::optional<double> route_distance_to(const Route& route, const std::function<bool(Vec2)>& pred) {
  double s = 0.0;
  for (size_t i = 0; i + 1 < route.points.size(); ++i) {
    Vec2 a = route.points[i], b = route.points[i + 1];
    double seg = (b - a).norm();
    const int sub = std::max(1, static_cast<int>(seg / 0.5));
    for (int k = 0; k <= sub; ++k) {
      double t = static_cast<double>(k) / sub;
      if (pred(a + (b - a) * t)) return s + seg * t;
    }
    s += seg;
  }
  return std::nullopt;
}

inline size_t count_returns_on(const WorldState& world, VehicleId observer, VehicleId target) {
  size_t n = 0;
  for (const LidarHit& h : lidar_scan_hits(world, observer, kSpawnBeams, kSpawnRange))
    if (h.object == target) ++n;
  return n;
}

// Occlusion premise check: ego blind to every collider, some networked
// neighbor sees the lead collider clearly.
inline bool occlusion_premise_holds(const WorldState& world) {
  for (VehicleId c : world.collider_ids)
    if (count_returns_on(world, world.ego_id, c) != 0) return false;
  if (world.collider_ids.empty()) return true;
  VehicleId lead = world.collider_ids.front();
  for (const auto& [id, v] : world.vehicles) {
    if (id == world.ego_id || !v.networked) continue;
    if (count_returns_on(world, id, lead) >= 5) return true;
  }
  return false;
}

// Standalone polyline route for scripted traffic; kept out of the planner's
// lane graph so the ego/expert search space stays clean.
inline Route make_chain_route(Vec2 a, Vec2 b, double step) {
  Route r;
  Vec2 d = b - a;
  double len = d.norm();
  size_t n = std::max<size_t>(2, static_cast<size_t>(std::round(len / step)) + 1);
  for (size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(n - 1);
    r.points.push_back(a + d * t);
  }
  return r;
}

struct ConvoyPlan {
  Vec2 lane_start;       // conflict point on the collider lane
  Vec2 lane_dir;         // collider direction of travel (unit)
  Route route;           // full collider route
};

// Places the convoy so its lead reaches the conflict point when the ego's
// nominal cruise profile does, then verifies the occlusion premise, retrying
// with slightly slower colliders (same conflict timing, nearer spawn).
inline void place_convoy(WorldState& world, const ScenarioConfig& cfg, const ConvoyPlan& plan,
                         double ego_eta, Rng& rng_layout) {
  double arrival_jitter = rng_layout.uniform(-0.2, 1.1);
  double gap_seconds = 2.2;
  double v = cfg.collider_speed;
  const VehicleId first_id = 3;
  for (int attempt = 0; attempt < 40; ++attempt) {
    for (VehicleId c : world.collider_ids) world.vehicles.erase(c);
    world.collider_ids.clear();
    for (size_t i = 0; i < cfg.convoy_size; ++i) {
      double back = v * (ego_eta + arrival_jitter + gap_seconds * static_cast<double>(i));
      Vec2 pos = plan.lane_start - plan.lane_dir * back;
      double yaw = std::atan2(plan.lane_dir.y, plan.lane_dir.x);
      VehicleState car = make_car({pos.x, pos.y, 0.0, yaw}, VehicleRole::collider, false, v);
      car.speed = v;
      car.route = plan.route;
      VehicleId id = first_id + static_cast<VehicleId>(i);
      world.vehicles[id] = car;
      world.collider_ids.push_back(id);
    }
    if (occlusion_premise_holds(world)) return;
    v = std::max(3.5, v * 0.95);
  }
  throw ScenarioError("spawn_scenario: could not construct an occluded collider after bounded retries");
}

inline void left_turn_world(WorldState& w, const ScenarioConfig& cfg, Rng& rng_layout, Rng& rng_traffic) {
  // Intersection at the origin. Northbound lanes x=+1.75 (left-turn) and
  // x=+5.25 (straight); southbound x=-1.75 (left-turn pocket) and x=-5.25
  // (straight). Eastbound y=-1.75, westbound y=+1.75.
  add_block(w, {15, 15}, 5.0, 8.0);
  add_block(w, {-15, 15}, 5.0, 8.0);
  add_block(w, {15, -15}, 5.0, 8.0);
  add_block(w, {-15, -15}, 5.0, 8.0);
  add_wall(w, {80, 0}, 82.0, kPi / 2);
  add_wall(w, {-80, 0}, 82.0, kPi / 2);
  add_wall(w, {0, 80}, 82.0, 0.0);
  add_wall(w, {0, -80}, 82.0, 0.0);

  auto approach = w.lane_graph.add_chain({1.75, -36}, {1.75, -7}, 2.5);
  auto arc = w.lane_graph.add_arc({-7, -7}, 8.75, 0.0, kPi / 2, 2.0);
  auto exit = w.lane_graph.add_chain({-7, 1.75}, {-38, 1.75}, 2.5);
  w.lane_graph.connect(approach, arc);
  w.lane_graph.connect(arc, exit);

  w.goal = {-32, 1.75};

  double jit = rng_layout.uniform(-cfg.spawn_jitter, cfg.spawn_jitter);
  VehicleState ego = make_car({1.75, -26 + jit, 0, kPi / 2}, VehicleRole::ego, true, 5.56);
  w.vehicles[1] = ego;
  w.ego_id = 1;

  // Occluder: truck nosed into the intersection, waiting to turn left.
  VehicleState truck = make_truck({-1.75, 6.0, 0, -kPi / 2}, VehicleRole::occluder, true, 0.0);
  w.vehicles[2] = truck;
  w.occluder_id = 2;

  // Background slots, consumed in order up to the requested density.
  size_t budget = cfg.traffic_density;
  VehicleId next_id = 10;
  auto spawn_bg = [&](VehicleState v) {
    if (budget == 0) return;
    --budget;
    w.vehicles[next_id++] = std::move(v);
  };
  // Waiting left-turn queue behind the occluder truck.
  for (double y : {14.0, 20.0, 26.0})
    spawn_bg(make_car({-1.75, y, 0, -kPi / 2}, VehicleRole::background, true, 0.0));
  // Northbound straight movers (cross the junction away from the turn path).
  double mover_speed = rng_traffic.uniform(4.8, 6.2);
  for (double y0 : {-42.0, -54.0}) {
    VehicleState m = make_car({5.25, y0 + rng_traffic.uniform(-2, 2), 0, kPi / 2}, VehicleRole::background,
                              rng_traffic.bernoulli(0.7), mover_speed);
    m.speed = mover_speed;
    m.route = make_chain_route({5.25, y0 - 3}, {5.25, 70}, 3.0);
    spawn_bg(std::move(m));
  }
  // Parked cars on the far eastbound shoulder.
  for (double x : {-25.0, -18.0})
    spawn_bg(make_car({x, -1.75, 0, 0}, VehicleRole::background, false, 0.0));
}

inline void red_light_world(WorldState& w, const ScenarioConfig& cfg, Rng& rng_layout, Rng& rng_traffic) {
  add_block(w, {15, 15}, 5.0, 8.0);
  add_block(w, {-15, 15}, 5.0, 8.0);
  add_block(w, {15, -15}, 5.0, 8.0);
  add_block(w, {-15, -15}, 5.0, 8.0);
  add_wall(w, {80, 0}, 82.0, kPi / 2);
  add_wall(w, {-80, 0}, 82.0, kPi / 2);
  add_wall(w, {0, 80}, 82.0, 0.0);
  add_wall(w, {0, -80}, 82.0, 0.0);

  w.lane_graph.add_chain({5.25, -40}, {5.25, 46}, 3.0);  // ego's straight lane
  w.goal = {5.25, 32};

  double jit = rng_layout.uniform(-cfg.spawn_jitter, cfg.spawn_jitter);
  VehicleState ego = make_car({5.25, -30 + jit, 0, kPi / 2}, VehicleRole::ego, true, 5.56);
  w.vehicles[1] = ego;
  w.ego_id = 1;

  // The lined-up left-turn queue on the ego's left: truck at the stop bar,
  // two cars nose-to-tail behind. Always present; it is the occluder.
  VehicleState truck = make_truck({1.75, -11.05, 0, kPi / 2}, VehicleRole::occluder, true, 0.0);
  w.vehicles[2] = truck;
  w.occluder_id = 2;
  VehicleId next_id = 10;
  w.vehicles[next_id++] = make_car({1.75, -18.3, 0, kPi / 2}, VehicleRole::background, true, 0.0);
  w.vehicles[next_id++] = make_car({1.75, -23.8, 0, kPi / 2}, VehicleRole::background, true, 0.0);

  size_t budget = cfg.traffic_density;
  auto spawn_bg = [&](VehicleState v) {
    if (budget == 0) return;
    --budget;
    w.vehicles[next_id++] = std::move(v);
  };
  // Followers behind the ego.
  double follow_speed = rng_traffic.uniform(4.2, 5.2);
  for (double y0 : {-44.0, -52.0}) {
    VehicleState m = make_car({5.25, y0 + rng_traffic.uniform(-2, 2), 0, kPi / 2}, VehicleRole::background,
                              rng_traffic.bernoulli(0.7), follow_speed);
    m.speed = follow_speed;
    m.route = make_chain_route({5.25, y0 - 3}, {5.25, 46}, 3.0);
    spawn_bg(std::move(m));
  }
  // Opposing left-turn queue north of the junction.
  for (double y : {10.0, 16.0})
    spawn_bg(make_car({-1.75, y, 0, -kPi / 2}, VehicleRole::background, true, 0.0));
  // Parked car on the westbound lane, east side.
  spawn_bg(make_car({25, 1.75, 0, kPi}, VehicleRole::background, false, 0.0));
}

inline void overtaking_world(WorldState& w, const ScenarioConfig& cfg, Rng& rng_layout, Rng& rng_traffic) {
  add_wall(w, {78, 0}, 15.0, kPi / 2);
  add_wall(w, {-78, 0}, 15.0, kPi / 2);
  // Roadside blocks give the LiDAR fixed landmarks along the straight.
  add_block(w, {-40, 9}, 2.5, 5.0);
  add_block(w, {-15, -9}, 2.5, 5.0);
  add_block(w, {8, 9}, 2.5, 5.0);
  add_block(w, {30, -9}, 2.5, 5.0);
  add_block(w, {48, 9}, 2.5, 5.0);

  auto east = w.lane_graph.add_chain({-55, -1.75}, {55, -1.75}, 3.0);
  auto entry = w.lane_graph.add_chain({-16, -0.5}, {-12, 2.1}, 2.0);
  auto detour = w.lane_graph.add_chain({-10, 2.1}, {2, 2.1}, 2.5);
  auto exit = w.lane_graph.add_chain({4, 1.0}, {10, -1.5}, 2.0);
  w.lane_graph.add_edge(east[static_cast<size_t>((-19.0 + 55.0) / 3.0)], entry.front());
  w.lane_graph.connect(entry, detour);
  w.lane_graph.connect(detour, exit);
  w.lane_graph.add_edge(exit.back(), east[static_cast<size_t>((13.0 + 55.0) / 3.0)]);

  w.goal = {45, -1.75};

  double jit = rng_layout.uniform(-cfg.spawn_jitter, cfg.spawn_jitter);
  VehicleState ego = make_car({-30 + jit, -1.75, 0, 0}, VehicleRole::ego, true, 5.56);
  w.vehicles[1] = ego;
  w.ego_id = 1;

  // Broken-down truck in the ego lane, nosed over the divider: blocks both
  // the lane and the view of oncoming traffic.
  VehicleState truck = make_truck({-5, -1.1, 0, 0.08}, VehicleRole::occluder, true, 0.0);
  w.vehicles[2] = truck;
  w.occluder_id = 2;

  size_t budget = cfg.traffic_density;
  VehicleId next_id = 10;
  auto spawn_bg = [&](VehicleState v) {
    if (budget == 0) return;
    --budget;
    w.vehicles[next_id++] = std::move(v);
  };
  double follow_speed = rng_traffic.uniform(3.8, 4.8);
  for (double x0 : {-45.0, -56.0}) {
    VehicleState m = make_car({x0 + rng_traffic.uniform(-2, 2), -1.75, 0, 0}, VehicleRole::background,
                              rng_traffic.bernoulli(0.7), follow_speed);
    m.speed = follow_speed;
    m.route = make_chain_route({x0 - 3, -1.75}, {40, -1.75}, 3.0);
    spawn_bg(std::move(m));
  }
  // Parked cars on the south shoulder past the truck.
  for (double x : {20.0, 34.0})
    spawn_bg(make_car({x, -4.6, 0, 0}, VehicleRole::background, false, 0.0));
}

}  // namespace detail

// Deterministic world construction from the config. The accident insertion
// computes the ego's nominal arrival at the conflict point from its planned
// route and times the convoy against it, then verifies the occlusion premise
// by raycast (bounded retries, else ScenarioError).
inline WorldState spawn_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  WorldState w;
  Rng rng_layout(derive_seed(cfg.seed, "layout"));
  Rng rng_traffic(derive_seed(cfg.background_seed, "traffic"));

  switch (cfg.kind) {
    case ScenarioKind::left_turn: detail::left_turn_world(w, cfg, rng_layout, rng_traffic); break;
    case ScenarioKind::red_light_violation: detail::red_light_world(w, cfg, rng_layout, rng_traffic); break;
    case ScenarioKind::overtaking: detail::overtaking_world(w, cfg, rng_layout, rng_traffic); break;
  }

  // Ego route (also used by the expert on frame 0).
  ExpertConfig ecfg;
  ensure_route(w, w.ego_id, w.goal, ecfg);

  if (cfg.accident_enabled) {
    detail::ConvoyPlan plan;
    const Route& ego_route = w.ego().route;
    std::optional<double> s_conflict;
    switch (cfg.kind) {
      case ScenarioKind::left_turn:
        plan.lane_dir = {0, -1};
        s_conflict = detail::route_distance_to(ego_route, [](Vec2 p) { return std::abs(p.x + 5.25) < 0.3; });
        plan.lane_start = {-5.25, s_conflict ? ego_route.at(*s_conflict).y : 1.6};
        plan.route = detail::make_chain_route({-5.25, 76}, {-5.25, -50}, 3.0);
        break;
      case ScenarioKind::red_light_violation:
        plan.lane_dir = {1, 0};
        s_conflict = detail::route_distance_to(ego_route, [](Vec2 p) { return std::abs(p.y + 1.75) < 0.3; });
        plan.lane_start = {5.25, -1.75};
        plan.route = detail::make_chain_route({-76, -1.75}, {60, -1.75}, 3.0);
        break;
      case ScenarioKind::overtaking:
        plan.lane_dir = {-1, 0};
        s_conflict = detail::route_distance_to(ego_route, [](Vec2 p) { return p.y > 1.2; });
        plan.lane_start = {s_conflict ? ego_route.at(*s_conflict).x + 4.0 : -6.0, 1.75};
        plan.route = detail::make_chain_route({74, 1.75}, {-55, 1.75}, 3.0);
        break;
    }
    if (!s_conflict) throw ScenarioError("spawn_scenario: ego route never meets the collider lane");
    double eta = detail::eta_for_distance(*s_conflict, 5.56, w.dynamics);
    detail::place_convoy(w, cfg, plan, eta, rng_layout);
  }

  // No overlapping spawns.
  for (auto& [a, b] : check_collision(w))
    throw ScenarioError("spawn_scenario: overlapping spawn between " + std::to_string(a) + " and " +
                        std::to_string(b));
  return w;
}

}  // namespace coopsim
