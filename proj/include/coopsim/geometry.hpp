#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>

namespace coopsim {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0, y = 0.0;
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

// Normalize angle to (-pi, pi].
inline double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

// Planar pose with a z offset; rotation is yaw-only.
struct Pose {
  double x = 0.0, y = 0.0, z = 0.0;
  double yaw = 0.0;  // radians in (-pi, pi]

  Vec2 position() const { return {x, y}; }
  Vec2 heading() const { return {std::cos(yaw), std::sin(yaw)}; }

  // Local -> world.
  Vec3 to_world(const Vec3& p) const {
    double c = std::cos(yaw), s = std::sin(yaw);
    return {x + c * p.x - s * p.y, y + s * p.x + c * p.y, z + p.z};
  }
  // World -> local.
  Vec3 to_local(const Vec3& p) const {
    double c = std::cos(yaw), s = std::sin(yaw);
    double dx = p.x - x, dy = p.y - y;
    return {c * dx + s * dy, -s * dx + c * dy, p.z - z};
  }
};

// Oriented rectangle in the plane (vehicle footprint, building, wall).
struct OrientedRect {
  Vec2 center;
  double yaw = 0.0;
  double half_len = 0.0;   // along heading
  double half_wid = 0.0;   // across heading
  double height = 0.0;     // tagged onto LiDAR hits

  std::array<Vec2, 4> corners() const {
    Vec2 u{std::cos(yaw), std::sin(yaw)};
    Vec2 v{-u.y, u.x};
    Vec2 a = u * half_len, b = v * half_wid;
    return {center + a + b, center + a - b, center - a - b, center - a + b};
  }

  OrientedRect inflated(double margin) const {
    OrientedRect r = *this;
    r.half_len += margin;
    r.half_wid += margin;
    return r;
  }
};

// Separating-axis overlap test for two oriented rectangles. Touching counts
// as overlap (closed intervals).
inline bool rects_overlap(const OrientedRect& a, const OrientedRect& b) {
  auto ca = a.corners(), cb = b.corners();
  auto axes = std::array<Vec2, 4>{
      Vec2{std::cos(a.yaw), std::sin(a.yaw)},
      Vec2{-std::sin(a.yaw), std::cos(a.yaw)},
      Vec2{std::cos(b.yaw), std::sin(b.yaw)},
      Vec2{-std::sin(b.yaw), std::cos(b.yaw)},
  };
  for (const Vec2& axis : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = amax;
    for (const Vec2& c : ca) {
      double p = c.dot(axis);
      amin = std::min(amin, p);
      amax = std::max(amax, p);
    }
    for (const Vec2& c : cb) {
      double p = c.dot(axis);
      bmin = std::min(bmin, p);
      bmax = std::max(bmax, p);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

inline bool point_in_rect(const Vec2& p, const OrientedRect& r) {
  double c = std::cos(r.yaw), s = std::sin(r.yaw);
  double dx = p.x - r.center.x, dy = p.y - r.center.y;
  double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= r.half_len && std::abs(ly) <= r.half_wid;
}

// First intersection of the ray origin + t*dir (t > eps) with the rectangle
// boundary. Returns t, or nullopt on miss. Slab test in rect-local frame.
inline std::optional<double> ray_rect_first_hit(const Vec2& origin, const Vec2& dir,
                                                const OrientedRect& r) {
  double c = std::cos(r.yaw), s = std::sin(r.yaw);
  double ox = origin.x - r.center.x, oy = origin.y - r.center.y;
  Vec2 lo{c * ox + s * oy, -s * ox + c * oy};
  Vec2 ld{c * dir.x + s * dir.y, -s * dir.x + c * dir.y};

  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  const double ext[2] = {r.half_len, r.half_wid};
  const double o[2] = {lo.x, lo.y};
  const double d[2] = {ld.x, ld.y};
  for (int i = 0; i < 2; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (std::abs(o[i]) > ext[i]) return std::nullopt;
    } else {
      double t1 = (-ext[i] - o[i]) / d[i];
      double t2 = (ext[i] - o[i]) / d[i];
      if (t1 > t2) std::swap(t1, t2);
      tmin = std::max(tmin, t1);
      tmax = std::min(tmax, t2);
      if (tmin > tmax) return std::nullopt;
    }
  }
  const double eps = 1e-9;
  if (tmax < eps) return std::nullopt;
  return tmin > eps ? tmin : tmax;
}

// Does the segment a-b pass through the rectangle?
inline bool segment_hits_rect(const Vec2& a, const Vec2& b, const OrientedRect& r) {
  if (point_in_rect(a, r) || point_in_rect(b, r)) return true;
  Vec2 d = b - a;
  double len = d.norm();
  if (len < 1e-12) return false;
  Vec2 dir = d * (1.0 / len);
  auto t = ray_rect_first_hit(a, dir, r);
  return t.has_value() && *t <= len;
}

}  // namespace coopsim
