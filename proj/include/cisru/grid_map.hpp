#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cisru/geometry.hpp"

namespace cisru {

enum class CellState : std::uint8_t { Unknown, Free, Obstacle };

enum class SemLabel : std::uint8_t { Astronaut, Rock, Rover, SolarPanel, Regolith };

inline std::string_view to_string(CellState s) {
  switch (s) {
    case CellState::Unknown: return "Unknown";
    case CellState::Free: return "Free";
    case CellState::Obstacle: return "Obstacle";
  }
  return "?";
}

inline std::string_view to_string(SemLabel l) {
  switch (l) {
    case SemLabel::Astronaut: return "Astronaut";
    case SemLabel::Rock: return "Rock";
    case SemLabel::Rover: return "Rover";
    case SemLabel::SolarPanel: return "SolarPanel";
    case SemLabel::Regolith: return "Regolith";
  }
  return "?";
}

struct CellIndex {
  int col = 0;
  int row = 0;
  bool operator==(const CellIndex&) const = default;
};

class OutOfBounds : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Occupancy + semantic grid. Cell (col,row) covers
/// [origin + col*res, origin + (col+1)*res) x [.. row ..] in the grid frame.
class GridMap {
 public:
  GridMap() = default;

  GridMap(int width, int height, double resolution, Pose2D origin = {},
          CellState fill = CellState::Unknown)
      : width_(width), height_(height), resolution_(resolution), origin_(origin) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("grid dimensions must be positive");
    if (!(resolution > 0.0)) throw std::invalid_argument("grid resolution must be positive");
    cells_.assign(static_cast<std::size_t>(width) * height, fill);
    semantic_.assign(cells_.size(), std::nullopt);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  const Pose2D& origin() const { return origin_; }
  std::size_t size() const { return cells_.size(); }

  bool in_bounds(CellIndex c) const {
    return c.col >= 0 && c.row >= 0 && c.col < width_ && c.row < height_;
  }
  std::size_t index(CellIndex c) const {
    return static_cast<std::size_t>(c.row) * width_ + c.col;
  }
  CellIndex cell_of(std::size_t idx) const {
    return {static_cast<int>(idx % width_), static_cast<int>(idx / width_)};
  }

  CellState at(CellIndex c) const { return cells_[index(c)]; }
  CellState at(std::size_t i) const { return cells_[i]; }

  void set(CellIndex c, CellState s) { set(index(c), s); }
  void set(std::size_t i, CellState s) {
    cells_[i] = s;
    if (s == CellState::Unknown) semantic_[i].reset();
  }

  std::optional<SemLabel> label(CellIndex c) const { return semantic_[index(c)]; }
  std::optional<SemLabel> label(std::size_t i) const { return semantic_[i]; }

  /// Labels are only kept on known cells.
  void set_label(std::size_t i, std::optional<SemLabel> l) {
    if (cells_[i] == CellState::Unknown) return;
    semantic_[i] = l;
  }
  void set_label(CellIndex c, std::optional<SemLabel> l) { set_label(index(c), l); }

  const std::vector<CellState>& cells() const { return cells_; }
  const std::vector<std::optional<SemLabel>>& semantic() const { return semantic_; }

  std::size_t count(CellState s) const {
    std::size_t n = 0;
    for (auto c : cells_) n += (c == s);
    return n;
  }
  std::size_t known_count() const { return cells_.size() - count(CellState::Unknown); }

  /// Position in the grid's own (unrotated) frame.
  Vec2 to_local(Vec2 world) const { return origin_.inverse_transform(world); }
  Vec2 to_world(Vec2 local) const { return origin_.transform(local); }

  /// Floor rule. Throws OutOfBounds.
  CellIndex world_to_cell(Vec2 p) const {
    auto c = try_world_to_cell(p);
    if (!c) {
      throw OutOfBounds("position (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                        ") outside grid");
    }
    return *c;
  }

  std::optional<CellIndex> try_world_to_cell(Vec2 p) const {
    const Vec2 l = to_local(p);
    const double fc = std::floor(l.x / resolution_);
    const double fr = std::floor(l.y / resolution_);
    if (!std::isfinite(fc) || !std::isfinite(fr)) return std::nullopt;
    if (fc < 0 || fr < 0 || fc >= width_ || fr >= height_) return std::nullopt;
    return CellIndex{static_cast<int>(fc), static_cast<int>(fr)};
  }

  /// Cell center.
  Pose2D cell_to_world(CellIndex c) const {
    if (!in_bounds(c)) throw OutOfBounds("cell outside grid");
    const Vec2 w = to_world({(c.col + 0.5) * resolution_, (c.row + 0.5) * resolution_});
    return {w.x, w.y, origin_.theta};
  }
  Vec2 cell_center(CellIndex c) const { return cell_to_world(c).position(); }

  bool same_geometry(const GridMap& o) const {
    return width_ == o.width_ && height_ == o.height_ && resolution_ == o.resolution_ &&
           origin_ == o.origin_;
  }

  bool operator==(const GridMap& o) const {
    return same_geometry(o) && cells_ == o.cells_ && semantic_ == o.semantic_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  double resolution_ = 1.0;
  Pose2D origin_{};
  std::vector<CellState> cells_;
  std::vector<std::optional<SemLabel>> semantic_;
};

/// Row strings over {'?', '.', '#'}; rows[0] is the top (highest row index).
inline std::vector<std::string> grid_rows(const GridMap& g) {
  std::vector<std::string> rows;
  rows.reserve(g.height());
  for (int r = g.height() - 1; r >= 0; --r) {
    std::string line(static_cast<std::size_t>(g.width()), '?');
    for (int c = 0; c < g.width(); ++c) {
      switch (g.at(CellIndex{c, r})) {
        case CellState::Unknown: line[c] = '?'; break;
        case CellState::Free: line[c] = '.'; break;
        case CellState::Obstacle: line[c] = '#'; break;
      }
    }
    rows.push_back(std::move(line));
  }
  return rows;
}

inline GridMap grid_from_rows(const std::vector<std::string>& rows, double resolution,
                              Pose2D origin = {}, bool allow_unknown = true) {
  if (rows.empty() || rows.front().empty()) throw std::invalid_argument("grid rows are empty");
  const int w = static_cast<int>(rows.front().size());
  const int h = static_cast<int>(rows.size());
  GridMap g(w, h, resolution, origin);
  for (int i = 0; i < h; ++i) {
    const auto& line = rows[static_cast<std::size_t>(i)];
    if (static_cast<int>(line.size()) != w) {
      throw std::invalid_argument("grid row " + std::to_string(i) + " has length " +
                                  std::to_string(line.size()) + ", expected " + std::to_string(w));
    }
    const int r = h - 1 - i;
    for (int c = 0; c < w; ++c) {
      CellState s{};
      switch (line[static_cast<std::size_t>(c)]) {
        case '.': s = CellState::Free; break;
        case '#': s = CellState::Obstacle; break;
        case '?':
          if (!allow_unknown) {
            throw std::invalid_argument("grid row " + std::to_string(i) +
                                        ": '?' is not allowed in ground truth");
          }
          s = CellState::Unknown;
          break;
        default:
          throw std::invalid_argument("grid row " + std::to_string(i) + ": invalid cell character '" +
                                      std::string(1, line[static_cast<std::size_t>(c)]) + "'");
      }
      g.set(CellIndex{c, r}, s);
    }
  }
  return g;
}

}  // namespace cisru
