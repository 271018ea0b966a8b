#pragma once

#include <cmath>
#include <numbers>

namespace cisru {

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  if (!std::isfinite(a)) return a;
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr bool operator==(const Vec2&) const = default;

  double norm() const { return std::hypot(x, y); }
  constexpr double dot(Vec2 o) const { return x * o.x + y * o.y; }
  constexpr double cross(Vec2 o) const { return x * o.y - y * o.x; }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  constexpr Vec2 position() const { return {x, y}; }
  bool operator==(const Pose2D&) const = default;

  /// Maps a point from this pose's local frame into the parent frame.
  Vec2 transform(Vec2 local) const { return position() + rotate(local, theta); }
  Vec2 inverse_transform(Vec2 world) const { return rotate(world - position(), -theta); }
};

inline Pose2D make_pose(double x, double y, double theta = 0.0) {
  return {x, y, normalize_angle(theta)};
}

/// Rotation followed by translation: p' = R(rotation) p + translation.
struct RigidTransform2D {
  double rotation = 0.0;
  Vec2 translation{};

  Vec2 apply(Vec2 p) const { return rotate(p, rotation) + translation; }

  RigidTransform2D inverse() const {
    return {-rotation, rotate(translation, -rotation) * -1.0};
  }

  RigidTransform2D compose(const RigidTransform2D& inner) const {
    return {normalize_angle(rotation + inner.rotation), apply(inner.translation)};
  }

  static RigidTransform2D identity() { return {}; }
};

}  // namespace cisru
