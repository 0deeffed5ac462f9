#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

#include "coopsim/geometry.hpp"

namespace coopsim {

// Directed waypoint graph the planners run on. Nodes carry the direction of
// travel; edge cost is length plus a heading-change penalty so A* prefers
// smooth paths ("pose and distance" costs).
class LaneGraph {
 public:
  struct Node {
    Vec2 pos;
    double heading = 0.0;
  };
  struct Edge {
    size_t to;
    double cost;
  };

  size_t add_node(Vec2 pos, double heading) {
    nodes_.push_back({pos, heading});
    adj_.emplace_back();
    return nodes_.size() - 1;
  }

  void add_edge(size_t from, size_t to) {
    double len = (nodes_[to].pos - nodes_[from].pos).norm();
    double turn = std::abs(normalize_angle(nodes_[to].heading - nodes_[from].heading));
    adj_[from].push_back({to, len + kTurnPenalty * turn});
  }

  // Straight chain of nodes spaced `step` apart from a to b; returns ids.
  std::vector<size_t> add_chain(Vec2 a, Vec2 b, double step) {
    Vec2 d = b - a;
    double len = d.norm();
    size_t n = std::max<size_t>(2, static_cast<size_t>(std::round(len / step)) + 1);
    double heading = std::atan2(d.y, d.x);
    std::vector<size_t> ids;
    for (size_t i = 0; i < n; ++i) {
      double t = static_cast<double>(i) / static_cast<double>(n - 1);
      ids.push_back(add_node(a + d * t, heading));
    }
    for (size_t i = 0; i + 1 < n; ++i) add_edge(ids[i], ids[i + 1]);
    return ids;
  }

  // Clockwise/counterclockwise arc chain from angle a0 to a1 around center.
  std::vector<size_t> add_arc(Vec2 center, double radius, double a0, double a1, double step) {
    double span = a1 - a0;
    size_t n = std::max<size_t>(3, static_cast<size_t>(std::ceil(std::abs(span) * radius / step)) + 1);
    std::vector<size_t> ids;
    for (size_t i = 0; i < n; ++i) {
      double t = static_cast<double>(i) / static_cast<double>(n - 1);
      double a = a0 + span * t;
      Vec2 pos{center.x + radius * std::cos(a), center.y + radius * std::sin(a)};
      double heading = a + (span > 0 ? kPi / 2 : -kPi / 2);
      ids.push_back(add_node(pos, normalize_angle(heading)));
    }
    for (size_t i = 0; i + 1 < n; ++i) add_edge(ids[i], ids[i + 1]);
    return ids;
  }

  void connect(const std::vector<size_t>& a, const std::vector<size_t>& b) {
    if (!a.empty() && !b.empty()) add_edge(a.back(), b.front());
  }

  const Node& node(size_t i) const { return nodes_[i]; }
  size_t size() const { return nodes_.size(); }
  const std::vector<Edge>& edges_from(size_t i) const { return adj_[i]; }

  // Node nearest the pose, weighing heading alignment so a vehicle snaps to
  // its own lane rather than the opposite one.
  size_t nearest_node(const Pose& pose) const {
    size_t best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < nodes_.size(); ++i) {
      double d = (nodes_[i].pos - pose.position()).norm();
      double a = std::abs(normalize_angle(nodes_[i].heading - pose.yaw));
      double c = d + 4.0 * a;
      if (c < best_cost) {
        best_cost = c;
        best = i;
      }
    }
    return best;
  }

  size_t nearest_node_to_point(Vec2 p) const {
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < nodes_.size(); ++i) {
      double d = (nodes_[i].pos - p).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  // A* from start to goal with Euclidean distance as the heuristic
  // (admissible: edge cost >= length). blocked(from, to) prunes edges.
  std::vector<size_t> astar(size_t start, size_t goal,
                            const std::function<bool(size_t, size_t)>& blocked = nullptr) const {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(nodes_.size(), inf);
    std::vector<size_t> parent(nodes_.size(), SIZE_MAX);
    auto h = [&](size_t i) { return (nodes_[i].pos - nodes_[goal].pos).norm(); };
    using Item = std::pair<double, size_t>;  // (f, node)
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    g[start] = 0.0;
    open.push({h(start), start});
    while (!open.empty()) {
      auto [f, u] = open.top();
      open.pop();
      if (u == goal) break;
      if (f > g[u] + h(u) + 1e-9) continue;  // stale entry
      for (const Edge& e : adj_[u]) {
        if (blocked && blocked(u, e.to)) continue;
        double ng = g[u] + e.cost;
        if (ng < g[e.to] - 1e-12) {
          g[e.to] = ng;
          parent[e.to] = u;
          open.push({ng + h(e.to), e.to});
        }
      }
    }
    if (g[goal] == inf) return {};
    std::vector<size_t> path;
    for (size_t v = goal; v != SIZE_MAX; v = parent[v]) {
      path.push_back(v);
      if (v == start) break;
    }
    std::reverse(path.begin(), path.end());
    if (path.front() != start) return {};
    return path;
  }

  std::vector<Vec2> path_points(const std::vector<size_t>& path) const {
    std::vector<Vec2> pts;
    pts.reserve(path.size());
    for (size_t i : path) pts.push_back(nodes_[i].pos);
    return pts;
  }

  static constexpr double kTurnPenalty = 2.0;

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<Edge>> adj_;
};

// Arc-length parameterized route polyline with a monotone progress cursor.
struct Route {
  std::vector<Vec2> points;
  size_t cursor = 0;  // advances only; avoids snapping backward

  bool empty() const { return points.size() < 2; }

  double length() const {
    double s = 0;
    for (size_t i = 0; i + 1 < points.size(); ++i) s += (points[i + 1] - points[i]).norm();
    return s;
  }

  // Advances the cursor to the segment nearest p (never backward) and
  // returns (arc length of the projection, distance to the path).
  std::pair<double, double> project(Vec2 p) {
    double best_d = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    size_t best_i = cursor;
    double s_base = 0.0;
    for (size_t i = 0; i < cursor; ++i) s_base += (points[i + 1] - points[i]).norm();
    double s = s_base;
    for (size_t i = cursor; i + 1 < points.size(); ++i) {
      Vec2 a = points[i], b = points[i + 1];
      Vec2 ab = b - a;
      double len2 = ab.dot(ab);
      double t = len2 > 1e-12 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      Vec2 q = a + ab * t;
      double d = (p - q).norm();
      if (d < best_d) {
        best_d = d;
        best_s = s + t * std::sqrt(len2);
        best_i = i;
      }
      s += std::sqrt(len2);
    }
    cursor = best_i;
    return {best_s, best_d};
  }

  // Point at arc length s (clamped to the ends).
  Vec2 at(double target_s) const {
    if (points.empty()) return {};
    double s = 0.0;
    for (size_t i = 0; i + 1 < points.size(); ++i) {
      double seg = (points[i + 1] - points[i]).norm();
      if (s + seg >= target_s && seg > 1e-12) {
        double t = (target_s - s) / seg;
        return points[i] + (points[i + 1] - points[i]) * t;
      }
      s += seg;
    }
    return points.back();
  }

  Vec2 end() const { return points.empty() ? Vec2{} : points.back(); }
};

}  // namespace coopsim
