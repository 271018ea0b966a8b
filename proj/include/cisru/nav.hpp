#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cisru/geometry.hpp"
#include "cisru/grid_map.hpp"

namespace cisru::nav {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct ScalarField {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  ScalarField() = default;
  ScalarField(int w, int h, double fill) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  double at(CellIndex c) const { return values[static_cast<std::size_t>(c.row) * width + c.col]; }
  double& at(CellIndex c) { return values[static_cast<std::size_t>(c.row) * width + c.col]; }
  bool in_bounds(CellIndex c) const { return c.col >= 0 && c.row >= 0 && c.col < width && c.row < height; }
};

using SpeedMap = ScalarField;

struct NavConfig {
  double w_max = 2.0;
  double unknown_speed = 0.5;
  double goal_tolerance = 0.3;
  int step_budget = 0;  // 0: 10 * (width + height)
  double v_max = 0.5;
  double omega_max = 0.8;
  double lookahead = 0.75;
  double heading_gain = 1.5;
  double dt = 1.0;
};

struct Path {
  std::vector<Vec2> points;
  double total_length = 0.0;
};

enum class PlanFailure { Unreachable, GoalInObstacle };

inline std::string_view to_string(PlanFailure f) {
  return f == PlanFailure::Unreachable ? "Unreachable" : "GoalInObstacle";
}

class GoalInObstacle : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct HeapItem {
  double t;
  std::size_t idx;
  bool operator>(const HeapItem& o) const { return t > o.t || (t == o.t && idx > o.idx); }
};

using MinHeap = std::priority_queue<HeapItem, std::vector<HeapItem>, std::greater<>>;

// Two-sided upwind solve. a <= b assumed. Falls back to the one-sided value
// when the characteristic would come from outside the quadrant.
inline double solve2(double a, double b, double f) {
  if (!(b - a < f)) return a + f;
  return 0.5 * (a + b + std::sqrt(2.0 * f * f - (a - b) * (a - b)));
}

}  // namespace detail

/// First pass: distance to the nearest Obstacle cell, 4-neighbour upwind FM.
inline ScalarField obstacle_distance(const GridMap& grid) {
  const int w = grid.width();
  const int h = grid.height();
  const double res = grid.resolution();
  ScalarField T(w, h, kInf);
  std::vector<char> frozen(T.values.size(), 0);
  detail::MinHeap heap;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.at(i) == CellState::Obstacle) {
      T.values[i] = 0.0;
      heap.push({0.0, i});
    }
  }
  const int dc[4] = {1, -1, 0, 0};
  const int dr[4] = {0, 0, 1, -1};
  auto known = [&](int c, int r) {
    if (c < 0 || r < 0 || c >= w || r >= h) return kInf;
    const std::size_t i = static_cast<std::size_t>(r) * w + c;
    return frozen[i] ? T.values[i] : kInf;
  };
  while (!heap.empty()) {
    const auto [t, idx] = heap.top();
    heap.pop();
    if (frozen[idx] || t > T.values[idx]) continue;
    frozen[idx] = 1;
    const CellIndex cur = grid.cell_of(idx);
    for (int k = 0; k < 4; ++k) {
      const int c = cur.col + dc[k];
      const int r = cur.row + dr[k];
      if (c < 0 || r < 0 || c >= w || r >= h) continue;
      const std::size_t n = static_cast<std::size_t>(r) * w + c;
      if (frozen[n]) continue;
      double tx = std::min(known(c - 1, r), known(c + 1, r));
      double ty = std::min(known(c, r - 1), known(c, r + 1));
      if (tx > ty) std::swap(tx, ty);
      const double cand = std::isfinite(ty) ? detail::solve2(tx, ty, res) : tx + res;
      if (cand < T.values[n]) {
        T.values[n] = cand;
        heap.push({cand, n});
      }
    }
  }
  return T;
}

/// Saturated FM² speed map: V = min(W, w_max)/w_max on Free cells.
inline SpeedMap speed_map(const ScalarField& W, const GridMap& grid, const NavConfig& cfg) {
  if (!(cfg.w_max > 0.0)) throw std::invalid_argument("w_max must be positive");
  SpeedMap V(grid.width(), grid.height(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    switch (grid.at(i)) {
      case CellState::Obstacle: V.values[i] = 0.0; break;
      case CellState::Unknown: V.values[i] = std::clamp(cfg.unknown_speed, 0.0, 1.0); break;
      case CellState::Free: V.values[i] = std::min(W.values[i], cfg.w_max) / cfg.w_max; break;
    }
  }
  return V;
}

/// Second pass: arrival time from the goal over the speed map. 8-neighbour
/// stencil (axis pairs and diagonal pairs), trapezoidal slowness.
inline ScalarField arrival_time(const SpeedMap& V, CellIndex goal, double h) {
  if (!V.in_bounds(goal)) throw std::out_of_range("goal cell outside speed map");
  if (!(V.at(goal) > 0.0)) throw GoalInObstacle("goal cell has zero speed");
  const int w = V.width;
  const int hh = V.height;
  ScalarField T(w, hh, kInf);
  std::vector<char> frozen(T.values.size(), 0);
  auto idx = [w](int c, int r) { return static_cast<std::size_t>(r) * w + c; };
  auto inside = [&](int c, int r) { return c >= 0 && r >= 0 && c < w && r < hh; };
  auto passable = [&](int c, int r) { return inside(c, r) && V.values[idx(c, r)] > 0.0; };
  auto slow = [&](int c, int r) { return 1.0 / V.values[idx(c, r)]; };

  struct Upwind {
    double t = kInf;
    double s = 0.0;
  };
  auto known = [&](int c, int r) -> Upwind {
    if (!inside(c, r) || !frozen[idx(c, r)]) return {};
    return {T.values[idx(c, r)], slow(c, r)};
  };
  auto diag_known = [&](int c, int r, int dc, int dr) -> Upwind {
    if (!passable(c + dc, r) || !passable(c, r + dr)) return {};
    return known(c + dc, r + dr);
  };

  auto update = [&](int c, int r) {
    const double s = slow(c, r);
    double best = kInf;
    auto one_sided = [&](Upwind u, double len) {
      if (std::isfinite(u.t)) best = std::min(best, u.t + len * 0.5 * (s + u.s));
    };
    auto two_sided = [&](Upwind a, Upwind b, double len) {
      if (!std::isfinite(a.t) || !std::isfinite(b.t)) return;
      if (a.t > b.t) std::swap(a, b);
      const double s2 = 0.5 * (s + 0.5 * (a.s + b.s));
      const double f = s2 * len;
      if (b.t - a.t < f) best = std::min(best, detail::solve2(a.t, b.t, f));
    };
    const double d = h * std::sqrt(2.0);
    const Upwind axis[4] = {known(c - 1, r), known(c + 1, r), known(c, r - 1), known(c, r + 1)};
    const Upwind diag[4] = {diag_known(c, r, 1, 1), diag_known(c, r, -1, -1), diag_known(c, r, -1, 1),
                            diag_known(c, r, 1, -1)};
    for (int k = 0; k < 4; ++k) {
      one_sided(axis[k], h);
      one_sided(diag[k], d);
    }
    // Every quadrant separately (not only the per-axis minimum) keeps T monotone in the speeds.
    for (int i = 0; i < 2; ++i) {
      for (int j = 2; j < 4; ++j) {
        two_sided(axis[i], axis[j], h);
        two_sided(diag[i], diag[j], d);
      }
    }
    return best;
  };

  detail::MinHeap heap;
  T.at(goal) = 0.0;
  heap.push({0.0, idx(goal.col, goal.row)});
  while (!heap.empty()) {
    const auto [t, i] = heap.top();
    heap.pop();
    if (frozen[i] || t > T.values[i]) continue;
    frozen[i] = 1;
    const int c0 = static_cast<int>(i % w);
    const int r0 = static_cast<int>(i / w);
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int c = c0 + dc;
        const int r = r0 + dr;
        if ((dc == 0 && dr == 0) || !passable(c, r) || frozen[idx(c, r)]) continue;
        const double cand = update(c, r);
        if (cand < T.values[idx(c, r)]) {
          T.values[idx(c, r)] = cand;
          heap.push({cand, idx(c, r)});
        }
      }
    }
  }
  return T;
}

namespace detail {

// Bilinear interpolation of a cell-centred field; infinities replaced by `big`.
inline double sample(const ScalarField& T, const GridMap& g, Vec2 world, double big) {
  const Vec2 l = g.to_local(world);
  const double h = g.resolution();
  const double u = std::clamp(l.x / h - 0.5, 0.0, static_cast<double>(T.width - 1));
  const double v = std::clamp(l.y / h - 0.5, 0.0, static_cast<double>(T.height - 1));
  const int c0 = std::min(static_cast<int>(std::floor(u)), std::max(0, T.width - 2));
  const int r0 = std::min(static_cast<int>(std::floor(v)), std::max(0, T.height - 2));
  const int c1 = std::min(c0 + 1, T.width - 1);
  const int r1 = std::min(r0 + 1, T.height - 1);
  const double fu = u - c0;
  const double fv = v - r0;
  auto val = [&](int c, int r) {
    const double t = T.at(CellIndex{c, r});
    return std::isfinite(t) ? t : big;
  };
  return (1 - fu) * (1 - fv) * val(c0, r0) + fu * (1 - fv) * val(c1, r0) + (1 - fu) * fv * val(c0, r1) +
         fu * fv * val(c1, r1);
}

// Stand-in for infinite arrival times during interpolation.
inline double fill_value(const ScalarField& T) {
  double finite_max = 0.0;
  for (double t : T.values) {
    if (std::isfinite(t)) finite_max = std::max(finite_max, t);
  }
  return 10.0 * finite_max + 1e3;
}

}  // namespace detail

/// Bilinearly interpolated arrival time at a world point (cell-centred samples).
inline double interpolated_time(const ScalarField& T, const GridMap& grid, Vec2 p) {
  return detail::sample(T, grid, p, detail::fill_value(T));
}

/// Gradient descent on the interpolated arrival time from `start` towards the
/// zero of T. Returns nullopt (Unreachable) when T(start) is infinite or the
/// step budget runs out.
inline std::optional<Path> extract_path(const ScalarField& T, const SpeedMap& V, const GridMap& grid, Vec2 start,
                                        const NavConfig& cfg) {
  const auto sc = grid.try_world_to_cell(start);
  if (!sc || !std::isfinite(T.at(*sc))) return std::nullopt;
  const double h = grid.resolution();
  const double tol = std::max(cfg.goal_tolerance, h / 2.0);

  std::size_t goal_i = 0;
  for (std::size_t i = 0; i < T.values.size(); ++i) {
    if (T.values[i] == 0.0) goal_i = i;
  }
  const Vec2 goal = grid.cell_center(grid.cell_of(goal_i));
  const double big = detail::fill_value(T);
  auto Ti = [&](Vec2 p) { return detail::sample(T, grid, p, big); };
  auto ok = [&](Vec2 p) {
    const auto c = grid.try_world_to_cell(p);
    return c && V.at(*c) > 0.0 && std::isfinite(T.at(*c));
  };

  const int budget = cfg.step_budget > 0 ? cfg.step_budget : 10 * (grid.width() + grid.height());
  Path path;
  path.points.push_back(start);
  Vec2 p = start;
  double tp = Ti(p);
  for (int step = 0; step < budget; ++step) {
    if (distance(p, goal) <= tol) {
      if (distance(p, goal) > 0.0) {
        path.total_length += distance(p, goal);
        path.points.push_back(goal);
      }
      return path;
    }
    const double e = h * 0.05;
    Vec2 grad{(Ti(p + Vec2{e, 0}) - Ti(p - Vec2{e, 0})) / (2 * e), (Ti(p + Vec2{0, e}) - Ti(p - Vec2{0, e})) / (2 * e)};
    std::optional<Vec2> next;
    const double gn = grad.norm();
    if (gn > 0.0 && std::isfinite(gn)) {
      for (double len = h / 2.0; len >= h / 16.0 && !next; len /= 2.0) {
        const Vec2 q = p - grad * (len / gn);
        if (ok(q) && Ti(q) < tp) next = q;
      }
    }
    if (!next) {
      // Direction search: the steepest of 32 headings at shrinking step lengths.
      for (double len = h / 2.0; len >= h / 8.0 && !next; len /= 2.0) {
        double best_t = tp;
        for (int k = 0; k < 32; ++k) {
          const double a = 2.0 * kPi * k / 32.0;
          const Vec2 q = p + Vec2{std::cos(a), std::sin(a)} * len;
          if (!ok(q)) continue;
          const double tq = Ti(q);
          if (tq < best_t) {
            best_t = tq;
            next = q;
          }
        }
      }
    }
    if (!next) {
      // Last resort: jump to a lower neighbouring cell centre (T is exact there),
      // preferring ones within one cell of the current point.
      const CellIndex cur = grid.world_to_cell(p);
      double best_near = tp;
      double best_far = tp;
      std::optional<Vec2> far;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const CellIndex n{cur.col + dc, cur.row + dr};
          if (!grid.in_bounds(n) || !(V.at(n) > 0.0)) continue;
          if (dc != 0 && dr != 0 && (!(V.at({cur.col + dc, cur.row}) > 0.0) || !(V.at({cur.col, cur.row + dr}) > 0.0))) {
            continue;
          }
          const Vec2 cn = grid.cell_center(n);
          if (distance(p, cn) <= h && T.at(n) < best_near) {
            best_near = T.at(n);
            next = cn;
          } else if (T.at(n) < best_far) {
            best_far = T.at(n);
            far = cn;
          }
        }
      }
      if (!next) next = far;
      if (!next) return std::nullopt;
    }
    path.total_length += distance(p, *next);
    p = *next;
    tp = Ti(p);
    path.points.push_back(p);
  }
  return std::nullopt;
}

using PlanResult = std::variant<Path, PlanFailure>;

inline PlanResult plan(const GridMap& grid, Vec2 start, Vec2 goal, const NavConfig& cfg) {
  const auto gc = grid.try_world_to_cell(goal);
  const auto sc = grid.try_world_to_cell(start);
  if (!gc || !sc) return PlanFailure::Unreachable;
  if (distance(start, goal) <= std::max(cfg.goal_tolerance, grid.resolution() / 2.0)) {
    Path p;
    p.points = {start, goal};
    p.total_length = distance(start, goal);
    return p;
  }
  const ScalarField W = obstacle_distance(grid);
  const SpeedMap V = speed_map(W, grid, cfg);
  if (!(V.at(*gc) > 0.0)) return PlanFailure::GoalInObstacle;
  const ScalarField T = arrival_time(V, *gc, grid.resolution());
  auto path = extract_path(T, V, grid, start, cfg);
  if (!path) return PlanFailure::Unreachable;
  // The descent ends on the goal cell centre; finish on the requested point.
  if (path->points.back() != goal) {
    path->total_length += distance(path->points.back(), goal);
    path->points.push_back(goal);
  }
  return *path;
}

/// True when any path point lies on a cell that is an Obstacle in `grid`.
inline bool path_blocked(const Path& path, const GridMap& grid) {
  for (const auto& p : path.points) {
    const auto c = grid.try_world_to_cell(p);
    if (c && grid.at(*c) == CellState::Obstacle) return true;
  }
  return false;
}

struct Twist {
  double v = 0.0;
  double omega = 0.0;
};

/// Pure pursuit towards the first path point at least `lookahead` ahead of the
/// point closest to the rover.
inline Twist follow(const Path& path, const Pose2D& pose, const NavConfig& cfg) {
  if (path.points.empty()) return {};
  const Vec2 here = pose.position();
  const Vec2 last = path.points.back();
  const double to_end = distance(here, last);
  if (to_end <= cfg.goal_tolerance) return {};
  std::size_t nearest = 0;
  double nd = kInf;
  for (std::size_t i = 0; i < path.points.size(); ++i) {
    const double d = distance(here, path.points[i]);
    if (d < nd) {
      nd = d;
      nearest = i;
    }
  }
  Vec2 target = last;
  for (std::size_t i = nearest; i < path.points.size(); ++i) {
    if (distance(here, path.points[i]) >= cfg.lookahead) {
      target = path.points[i];
      break;
    }
  }
  const Vec2 d = target - here;
  const double err = normalize_angle(std::atan2(d.y, d.x) - pose.theta);
  Twist out;
  out.omega = std::clamp(cfg.heading_gain * err, -cfg.omega_max, cfg.omega_max);
  out.v = cfg.v_max * std::max(0.0, 1.0 - std::abs(err) / (kPi / 2.0));
  out.v = std::min(out.v, to_end / cfg.dt);
  return out;
}

/// Plain-text matrix, one row per line (row 0 first), `inf` for unreachable.
inline std::string dump_field(const ScalarField& f) {
  std::string out;
  char buf[32];
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      const double v = f.at(CellIndex{c, r});
      if (std::isinf(v)) {
        out += "inf";
      } else {
        std::snprintf(buf, sizeof buf, "%.6g", v);
        out += buf;
      }
      out += c + 1 < f.width ? ' ' : '\n';
    }
  }
  return out;
}

}  // namespace cisru::nav
