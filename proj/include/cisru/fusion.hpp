#pragma once

#include <algorithm>
#include <bitset>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cisru/geometry.hpp"
#include "cisru/grid_map.hpp"
#include "cisru/rng.hpp"

namespace cisru::fusion {

inline constexpr int kPatch = 16;
using Descriptor = std::bitset<kPatch * kPatch>;

struct FusionConfig {
  double harris_k = 0.04;
  double rel_threshold = 0.05;
  int nms_window = 5;
  int orientation_window = 7;
  double ratio = 0.8;
  int iterations = 200;
  double inlier_radius_cells = 2.0;
  double orientation_tolerance = 0.6;  // radians
  int min_inliers = 3;
  std::uint64_t seed = 0x5eed;
};

struct Keypoint {
  int col = 0;
  int row = 0;
  double orientation = 0.0;
  double response = 0.0;
};

struct Match {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  int distance = 0;
};

namespace detail {

struct Image {
  int w = 0;
  int h = 0;
  std::vector<double> v;
  double at(int c, int r) const {
    c = std::clamp(c, 0, w - 1);
    r = std::clamp(r, 0, h - 1);
    return v[static_cast<std::size_t>(r) * w + c];
  }
  double& ref(int c, int r) { return v[static_cast<std::size_t>(r) * w + c]; }
};

inline Image binarize(const GridMap& g) {
  Image im{g.width(), g.height(), std::vector<double>(g.size(), 0.0)};
  for (std::size_t i = 0; i < g.size(); ++i) im.v[i] = g.at(i) == CellState::Obstacle ? 1.0 : 0.0;
  return im;
}

// Separable [1 2 1]/4 blur, edge-clamped.
inline Image blur(const Image& in) {
  Image tmp = in, out = in;
  for (int r = 0; r < in.h; ++r) {
    for (int c = 0; c < in.w; ++c) tmp.ref(c, r) = 0.25 * (in.at(c - 1, r) + 2 * in.at(c, r) + in.at(c + 1, r));
  }
  for (int r = 0; r < in.h; ++r) {
    for (int c = 0; c < in.w; ++c) out.ref(c, r) = 0.25 * (tmp.at(c, r - 1) + 2 * tmp.at(c, r) + tmp.at(c, r + 1));
  }
  return out;
}

struct Gradients {
  Image gx, gy;
};

inline Gradients sobel(const Image& s) {
  Gradients g{s, s};
  for (int r = 0; r < s.h; ++r) {
    for (int c = 0; c < s.w; ++c) {
      g.gx.ref(c, r) = (s.at(c + 1, r - 1) + 2 * s.at(c + 1, r) + s.at(c + 1, r + 1)) -
                       (s.at(c - 1, r - 1) + 2 * s.at(c - 1, r) + s.at(c - 1, r + 1));
      g.gy.ref(c, r) = (s.at(c - 1, r + 1) + 2 * s.at(c, r + 1) + s.at(c + 1, r + 1)) -
                       (s.at(c - 1, r - 1) + 2 * s.at(c, r - 1) + s.at(c + 1, r - 1));
    }
  }
  return g;
}

// Zero-padded window sum.
inline double window_sum(const Image& im, int c, int r, int half) {
  double s = 0.0;
  for (int dr = -half; dr <= half; ++dr) {
    for (int dc = -half; dc <= half; ++dc) {
      const int cc = c + dc, rr = r + dr;
      if (cc < 0 || rr < 0 || cc >= im.w || rr >= im.h) continue;
      s += im.v[static_cast<std::size_t>(rr) * im.w + cc];
    }
  }
  return s;
}

}  // namespace detail

/// Harris response of the smoothed binary obstacle image.
inline std::vector<double> harris_response(const GridMap& g, double k = 0.04) {
  const auto s = detail::blur(detail::binarize(g));
  const auto gr = detail::sobel(s);
  detail::Image xx = gr.gx, yy = gr.gy, xy = gr.gx;
  for (std::size_t i = 0; i < xx.v.size(); ++i) {
    xx.v[i] = gr.gx.v[i] * gr.gx.v[i];
    yy.v[i] = gr.gy.v[i] * gr.gy.v[i];
    xy.v[i] = gr.gx.v[i] * gr.gy.v[i];
  }
  xx = detail::blur(xx);
  yy = detail::blur(yy);
  xy = detail::blur(xy);
  std::vector<double> R(xx.v.size());
  for (std::size_t i = 0; i < R.size(); ++i) {
    const double det = xx.v[i] * yy.v[i] - xy.v[i] * xy.v[i];
    const double tr = xx.v[i] + yy.v[i];
    R[i] = det - k * tr * tr;
  }
  return R;
}

/// Corners: Harris response above a fraction of the maximum, 5x5 non-maximum
/// suppression (ties go to the lower index), orientation from the summed
/// gradient of the smoothed image in a 7x7 window.
inline std::vector<Keypoint> detect_keypoints(const GridMap& g, const FusionConfig& cfg = {}) {
  const auto R = harris_response(g, cfg.harris_k);
  double rmax = 0.0;
  for (double r : R) rmax = std::max(rmax, r);
  std::vector<Keypoint> out;
  if (!(rmax > 1e-9)) return out;
  const double thr = cfg.rel_threshold * rmax;
  const int w = g.width(), h = g.height();
  const int half = cfg.nms_window / 2;
  const auto s = detail::blur(detail::binarize(g));
  const auto gr = detail::sobel(s);
  const int oh = cfg.orientation_window / 2;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (R[i] < thr) continue;
      bool is_max = true;
      for (int dr = -half; dr <= half && is_max; ++dr) {
        for (int dc = -half; dc <= half; ++dc) {
          const int cc = c + dc, rr = r + dr;
          if ((!dc && !dr) || cc < 0 || rr < 0 || cc >= w || rr >= h) continue;
          const std::size_t j = static_cast<std::size_t>(rr) * w + cc;
          if (R[j] > R[i] || (R[j] == R[i] && j < i)) {
            is_max = false;
            break;
          }
        }
      }
      if (!is_max) continue;
      const double sx = detail::window_sum(gr.gx, c, r, oh);
      const double sy = detail::window_sum(gr.gy, c, r, oh);
      out.push_back({c, r, std::atan2(sy, sx), R[i]});
    }
  }
  return out;
}

struct DescribeStats {
  std::size_t described = 0;
  std::size_t skipped_border = 0;
};

inline bool near_border(const GridMap& g, const Keypoint& kp) {
  const int m = kPatch / 2;
  return kp.col < m || kp.row < m || kp.col >= g.width() - m || kp.row >= g.height() - m;
}

/// 16x16 nearest-neighbour samples of the obstacle mask on a grid rotated to
/// the keypoint orientation, row-major.
inline Descriptor describe(const GridMap& g, const Keypoint& kp) {
  Descriptor d;
  const double cs = std::cos(kp.orientation), sn = std::sin(kp.orientation);
  for (int i = 0; i < kPatch; ++i) {
    for (int j = 0; j < kPatch; ++j) {
      const double u = j - (kPatch - 1) / 2.0;
      const double v = i - (kPatch - 1) / 2.0;
      const double x = kp.col + cs * u - sn * v;
      const double y = kp.row + sn * u + cs * v;
      const CellIndex c{static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y))};
      if (g.in_bounds(c) && g.at(c) == CellState::Obstacle) d.set(static_cast<std::size_t>(i * kPatch + j));
    }
  }
  return d;
}

struct Features {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
  DescribeStats stats;
};

/// Keypoints with descriptors; border keypoints are dropped and counted.
inline Features extract_features(const GridMap& g, const FusionConfig& cfg = {}) {
  Features f;
  for (const auto& kp : detect_keypoints(g, cfg)) {
    if (near_border(g, kp)) {
      ++f.stats.skipped_border;
      continue;
    }
    f.keypoints.push_back(kp);
    f.descriptors.push_back(describe(g, kp));
    ++f.stats.described;
  }
  return f;
}

/// Brute-force Hamming matcher: mutual nearest neighbours passing the ratio test.
inline std::vector<Match> match(const std::vector<Descriptor>& a, const std::vector<Descriptor>& b, double ratio = 0.8) {
  std::vector<Match> out;
  if (a.empty() || b.empty()) return out;
  std::vector<int> dist(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) dist[i * b.size() + j] = static_cast<int>((a[i] ^ b[j]).count());
  }
  std::vector<std::size_t> best_of_b(b.size(), 0);
  for (std::size_t j = 0; j < b.size(); ++j) {
    for (std::size_t i = 1; i < a.size(); ++i) {
      if (dist[i * b.size() + j] < dist[best_of_b[j] * b.size() + j]) best_of_b[j] = i;
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t best = 0;
    int d1 = std::numeric_limits<int>::max(), d2 = std::numeric_limits<int>::max();
    for (std::size_t j = 0; j < b.size(); ++j) {
      const int d = dist[i * b.size() + j];
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (best_of_b[best] != i) continue;
    if (d2 != std::numeric_limits<int>::max()) {
      if (d1 == d2 || static_cast<double>(d1) > ratio * d2) continue;
    }
    out.push_back({i, best, d1});
  }
  return out;
}

struct TransformEstimate {
  RigidTransform2D transform;
  std::size_t inliers = 0;
  std::size_t matches = 0;
};

namespace detail {

// Least-squares rigid fit b -> a (2D Procrustes).
inline RigidTransform2D procrustes(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  Vec2 ca{}, cb{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca = ca + a[i];
    cb = cb + b[i];
  }
  ca = ca / static_cast<double>(a.size());
  cb = cb / static_cast<double>(b.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec2 pa = a[i] - ca, pb = b[i] - cb;
    sxx += pb.dot(pa);
    sxy += pb.cross(pa);
  }
  const double th = std::atan2(sxy, sxx);
  return {th, ca - rotate(cb, th)};
}

}  // namespace detail

/// Consensus over 2-match hypotheses, refined by least squares over the
/// inliers. Positions are cell centres in each grid's own metric frame; the
/// result maps B's frame into A's. nullopt means InsufficientOverlap.
inline std::optional<TransformEstimate> estimate_transform(const std::vector<Match>& matches,
                                                           const std::vector<Keypoint>& kps_a,
                                                           const std::vector<Keypoint>& kps_b, double resolution,
                                                           const FusionConfig& cfg = {}) {
  const std::size_t n = matches.size();
  if (n < static_cast<std::size_t>(std::max(2, cfg.min_inliers))) return std::nullopt;
  std::vector<Vec2> pa(n), pb(n);
  std::vector<double> oa(n), ob(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ka = kps_a[matches[i].index_a];
    const auto& kb = kps_b[matches[i].index_b];
    pa[i] = {(ka.col + 0.5) * resolution, (ka.row + 0.5) * resolution};
    pb[i] = {(kb.col + 0.5) * resolution, (kb.row + 0.5) * resolution};
    oa[i] = ka.orientation;
    ob[i] = kb.orientation;
  }
  const double radius = cfg.inlier_radius_cells * resolution;
  auto inliers_of = [&](const RigidTransform2D& T, double* residual) {
    std::vector<std::size_t> in;
    double res_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = distance(T.apply(pb[i]), pa[i]);
      if (e > radius) continue;
      if (std::abs(normalize_angle(oa[i] - ob[i] - T.rotation)) > cfg.orientation_tolerance) continue;
      in.push_back(i);
      res_sum += e;
    }
    if (residual) *residual = res_sum;
    return in;
  };

  Rng rng(cfg.seed);
  std::vector<std::size_t> best_in;
  double best_res = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::size_t i = rng.index(n);
    std::size_t j = rng.index(n - 1);
    if (j >= i) ++j;
    const Vec2 da = pa[j] - pa[i], db = pb[j] - pb[i];
    if (db.norm() < 3.0 * resolution) continue;
    if (std::abs(da.norm() - db.norm()) > radius) continue;
    const double th = std::atan2(db.cross(da), db.dot(da));
    const RigidTransform2D T{th, pa[i] - rotate(pb[i], th)};
    double res = 0.0;
    auto in = inliers_of(T, &res);
    if (in.size() > best_in.size() || (in.size() == best_in.size() && res < best_res)) {
      best_in = std::move(in);
      best_res = res;
    }
  }
  if (best_in.size() < static_cast<std::size_t>(cfg.min_inliers)) return std::nullopt;
  RigidTransform2D T{};
  for (int round = 0; round < 3; ++round) {
    std::vector<Vec2> a, b;
    for (auto k : best_in) {
      a.push_back(pa[k]);
      b.push_back(pb[k]);
    }
    T = detail::procrustes(a, b);
    auto in = inliers_of(T, nullptr);
    if (in.size() < static_cast<std::size_t>(cfg.min_inliers)) break;
    if (in == best_in) break;
    best_in = std::move(in);
  }
  if (best_in.size() < static_cast<std::size_t>(cfg.min_inliers)) return std::nullopt;
  return TransformEstimate{T, best_in.size(), n};
}

/// Full pipeline on two maps.
inline std::optional<TransformEstimate> register_maps(const GridMap& a, const GridMap& b, const FusionConfig& cfg = {}) {
  const auto fa = extract_features(a, cfg);
  const auto fb = extract_features(b, cfg);
  const auto m = match(fa.descriptors, fb.descriptors, cfg.ratio);
  return estimate_transform(m, fa.keypoints, fb.keypoints, a.resolution(), cfg);
}

inline int state_rank(CellState s) {
  switch (s) {
    case CellState::Unknown: return 0;
    case CellState::Free: return 1;
    case CellState::Obstacle: return 2;
  }
  return 0;
}

/// Resamples B into A's lattice (extended to cover both maps) and merges per
/// cell with precedence Unknown < Free < Obstacle. `t` maps B's grid-local
/// metric frame into A's.
inline GridMap fuse(const GridMap& a, const GridMap& b, const RigidTransform2D& t) {
  const double res = a.resolution();
  if (std::abs(b.resolution() - res) > 1e-9 * res) throw std::invalid_argument("fuse: resolutions differ");

  // Extent of B in A's cell lattice.
  int c0 = 0, r0 = 0, c1 = a.width() - 1, r1 = a.height() - 1;
  for (double x : {0.0, b.width() * res}) {
    for (double y : {0.0, b.height() * res}) {
      const Vec2 p = t.apply({x, y});
      c0 = std::min(c0, static_cast<int>(std::floor(p.x / res + 1e-9)));
      r0 = std::min(r0, static_cast<int>(std::floor(p.y / res + 1e-9)));
      c1 = std::max(c1, static_cast<int>(std::ceil(p.x / res - 1e-9)) - 1);
      r1 = std::max(r1, static_cast<int>(std::ceil(p.y / res - 1e-9)) - 1);
    }
  }
  const Vec2 shift = a.origin().transform({c0 * res, r0 * res});
  GridMap out(c1 - c0 + 1, r1 - r0 + 1, res, {shift.x, shift.y, a.origin().theta});

  auto merge = [&](CellIndex oc, CellState s, std::optional<SemLabel> label) {
    if (s == CellState::Unknown) return;
    const CellState cur = out.at(oc);
    if (state_rank(s) > state_rank(cur)) {
      out.set(oc, s);
      out.set_label(oc, label);
    } else if (s == cur && !out.label(oc) && label) {
      out.set_label(oc, label);
    }
  };

  for (int r = 0; r < a.height(); ++r) {
    for (int c = 0; c < a.width(); ++c) {
      const CellIndex ac{c, r};
      merge({c - c0, r - r0}, a.at(ac), a.label(ac));
    }
  }
  const RigidTransform2D inv = t.inverse();
  // Backward nearest-neighbour sampling.
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      const Vec2 pa{(c + c0 + 0.5) * res, (r + r0 + 0.5) * res};
      const Vec2 pb = inv.apply(pa);
      const CellIndex bc{static_cast<int>(std::floor(pb.x / res)), static_cast<int>(std::floor(pb.y / res))};
      if (!b.in_bounds(bc)) continue;
      merge({c, r}, b.at(bc), b.label(bc));
    }
  }
  // Forward splat so no B cell is lost to rounding.
  for (int r = 0; r < b.height(); ++r) {
    for (int c = 0; c < b.width(); ++c) {
      const CellIndex bc{c, r};
      if (b.at(bc) == CellState::Unknown) continue;
      const Vec2 pa = t.apply({(c + 0.5) * res, (r + 0.5) * res});
      const CellIndex oc{static_cast<int>(std::floor(pa.x / res)) - c0, static_cast<int>(std::floor(pa.y / res)) - r0};
      if (!out.in_bounds(oc) || out.at(oc) != CellState::Unknown) continue;
      merge(oc, b.at(bc), b.label(bc));
    }
  }
  return out;
}

}  // namespace cisru::fusion
