#pragma once

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls into the library's algorithms.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <string>
#include <vector>

namespace oracle {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// 8-connected Dijkstra over a speed map (row-major, width w). Edge cost is
/// len * (1/Vi + 1/Vj) / 2; zero-speed cells are walls; a diagonal move needs
/// both side cells passable.
inline std::vector<double> dijkstra(const std::vector<double>& V, int w, int h, int goal_col, int goal_row,
                                    double res) {
  std::vector<double> D(V.size(), kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  auto id = [w](int c, int r) { return r * w + c; };
  auto open = [&](int c, int r) { return c >= 0 && r >= 0 && c < w && r < h && V[id(c, r)] > 0; };
  D[id(goal_col, goal_row)] = 0;
  pq.push({0, id(goal_col, goal_row)});
  while (!pq.empty()) {
    auto [d, i] = pq.top();
    pq.pop();
    if (d > D[i]) continue;
    const int c = i % w, r = i / w;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (!dc && !dr) continue;
        const int nc = c + dc, nr = r + dr;
        if (!open(nc, nr)) continue;
        if (dc && dr && (!open(c + dc, r) || !open(c, r + dr))) continue;
        const double len = (dc && dr) ? res * std::sqrt(2.0) : res;
        const double nd = d + len * 0.5 * (1.0 / V[i] + 1.0 / V[id(nc, nr)]);
        if (nd < D[id(nc, nr)]) {
          D[id(nc, nr)] = nd;
          pq.push({nd, id(nc, nr)});
        }
      }
    }
  }
  return D;
}

/// Exact Euclidean distance from every cell centre to the nearest obstacle
/// cell centre, brute force.
inline std::vector<double> brute_obstacle_distance(const std::vector<char>& obstacle, int w, int h, double res) {
  std::vector<double> out(obstacle.size(), kInf);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double best = kInf;
      for (int rr = 0; rr < h; ++rr) {
        for (int cc = 0; cc < w; ++cc) {
          if (obstacle[rr * w + cc]) best = std::min(best, res * std::hypot(c - cc, r - rr));
        }
      }
      out[r * w + c] = best;
    }
  }
  return out;
}

/// 4-connected BFS shortest path over free cells; returns the cell sequence
/// from start to goal (empty when unreachable). Ties broken by neighbour
/// order E, W, N, S.
inline std::vector<std::pair<int, int>> occupancy_shortest_path(const std::vector<char>& obstacle, int w, int h,
                                                                 int sc, int sr, int gc, int gr) {
  std::vector<int> prev(obstacle.size(), -2);
  std::queue<int> q;
  auto id = [w](int c, int r) { return r * w + c; };
  prev[id(sc, sr)] = -1;
  q.push(id(sc, sr));
  const int dc[4] = {1, -1, 0, 0}, dr[4] = {0, 0, 1, -1};
  while (!q.empty()) {
    const int i = q.front();
    q.pop();
    if (i == id(gc, gr)) break;
    for (int k = 0; k < 4; ++k) {
      const int c = i % w + dc[k], r = i / w + dr[k];
      if (c < 0 || r < 0 || c >= w || r >= h || obstacle[id(c, r)] || prev[id(c, r)] != -2) continue;
      prev[id(c, r)] = i;
      q.push(id(c, r));
    }
  }
  std::vector<std::pair<int, int>> path;
  if (prev[id(gc, gr)] == -2) return path;
  for (int i = id(gc, gr); i != -1; i = prev[i]) path.insert(path.begin(), {i % w, i / w});
  return path;
}

/// Seeded random obstacle mask (independent generator, std::mt19937).
inline std::vector<char> random_mask(int w, int h, double density, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<char> m(static_cast<std::size_t>(w) * h, 0);
  for (auto& x : m) x = u(gen) < density;
  return m;
}

/// Harris-free corner oracle: convex corners of a binary mask are cells whose
/// two orthogonal outward neighbours are both empty.
inline std::vector<std::pair<int, int>> convex_corners(const std::vector<char>& m, int w, int h) {
  std::vector<std::pair<int, int>> out;
  auto at = [&](int c, int r) { return c >= 0 && r >= 0 && c < w && r < h && m[r * w + c]; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!at(c, r)) continue;
      const bool e = at(c + 1, r), ww = at(c - 1, r), n = at(c, r + 1), s = at(c, r - 1);
      if ((!e && !n) || (!e && !s) || (!ww && !n) || (!ww && !s)) out.push_back({c, r});
    }
  }
  return out;
}

}  // namespace oracle
