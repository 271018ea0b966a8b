#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cisru/grid_map.hpp"

namespace cisru {

using Json = nlohmann::ordered_json;

inline char label_char(std::optional<SemLabel> l) {
  if (!l) return ' ';
  switch (*l) {
    case SemLabel::Astronaut: return 'A';
    case SemLabel::Rock: return 'K';
    case SemLabel::Rover: return 'R';
    case SemLabel::SolarPanel: return 'S';
    case SemLabel::Regolith: return 'G';
  }
  return ' ';
}

inline std::optional<SemLabel> label_from_char(char c) {
  switch (c) {
    case ' ': return std::nullopt;
    case 'A': return SemLabel::Astronaut;
    case 'K': return SemLabel::Rock;
    case 'R': return SemLabel::Rover;
    case 'S': return SemLabel::SolarPanel;
    case 'G': return SemLabel::Regolith;
    default: throw std::invalid_argument(std::string("invalid semantic label character '") + c + "'");
  }
}

/// GridMap dump: {"width","height","resolution","origin":[x,y,theta],"rows":[..],"semantic":[..]}.
/// Both row lists are top row first.
inline Json grid_to_json(const GridMap& g) {
  Json j;
  j["width"] = g.width();
  j["height"] = g.height();
  j["resolution"] = g.resolution();
  j["origin"] = Json::array({g.origin().x, g.origin().y, g.origin().theta});
  j["rows"] = grid_rows(g);
  std::vector<std::string> sem;
  sem.reserve(g.height());
  for (int r = g.height() - 1; r >= 0; --r) {
    std::string line(static_cast<std::size_t>(g.width()), ' ');
    for (int c = 0; c < g.width(); ++c) line[c] = label_char(g.label(CellIndex{c, r}));
    sem.push_back(std::move(line));
  }
  j["semantic"] = std::move(sem);
  return j;
}

inline GridMap grid_from_json(const Json& j) {
  const double res = j.at("resolution").get<double>();
  Pose2D origin{};
  if (j.contains("origin")) {
    const auto& o = j.at("origin");
    origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.size() > 2 ? o.at(2).get<double>() : 0.0};
  }
  GridMap g = grid_from_rows(j.at("rows").get<std::vector<std::string>>(), res, origin);
  if (j.contains("width") && j.at("width").get<int>() != g.width()) {
    throw std::invalid_argument("grid width does not match rows");
  }
  if (j.contains("height") && j.at("height").get<int>() != g.height()) {
    throw std::invalid_argument("grid height does not match rows");
  }
  if (j.contains("semantic")) {
    const auto sem = j.at("semantic").get<std::vector<std::string>>();
    if (static_cast<int>(sem.size()) != g.height()) throw std::invalid_argument("semantic row count mismatch");
    for (int i = 0; i < g.height(); ++i) {
      const auto& line = sem[static_cast<std::size_t>(i)];
      if (static_cast<int>(line.size()) != g.width()) throw std::invalid_argument("semantic row length mismatch");
      for (int c = 0; c < g.width(); ++c) {
        g.set_label(CellIndex{c, g.height() - 1 - i}, label_from_char(line[static_cast<std::size_t>(c)]));
      }
    }
  }
  return g;
}

}  // namespace cisru
