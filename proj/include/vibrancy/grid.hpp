#pragma once

// Square metric tiling of a study area, cell lookup and cell geometry.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibrancy/error.hpp"
#include "vibrancy/text.hpp"

namespace vibrancy {

struct GridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 100.0;  // meters
  std::int64_t n_cols = 1;
  std::int64_t n_rows = 1;
  std::string region_name;

  void validate() const {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
      throw Error(ErrorKind::InvalidSpec, "cell_size must be positive");
    if (n_cols < 1 || n_rows < 1)
      throw Error(ErrorKind::InvalidSpec, "grid needs at least one column and one row");
    if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
      throw Error(ErrorKind::InvalidSpec, "grid origin must be finite");
  }

  bool contains(std::int64_t col, std::int64_t row) const {
    return col >= 0 && col < n_cols && row >= 0 && row < n_rows;
  }

  double cell_area_km2() const { return cell_size * cell_size / 1e6; }
};

/// Ordered row-major: (row, col).
struct CellId {
  std::int32_t col = 0;
  std::int32_t row = 0;

  friend bool operator==(const CellId&, const CellId&) = default;
  friend std::strong_ordering operator<=>(const CellId& a, const CellId& b) {
    if (auto c = a.row <=> b.row; c != 0) return c;
    return a.col <=> b.col;
  }
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Half-open cells: a point on a shared edge belongs to the cell with the larger index.
inline CellId point_to_cell(double x, double y, const GridSpec& grid) {
  const double fx = std::floor((x - grid.origin_x) / grid.cell_size);
  const double fy = std::floor((y - grid.origin_y) / grid.cell_size);
  if (!std::isfinite(fx) || !std::isfinite(fy) || fx < 0 || fy < 0 ||
      fx >= static_cast<double>(grid.n_cols) || fy >= static_cast<double>(grid.n_rows)) {
    throw Error(ErrorKind::OutOfBounds, "point (" + text::format_double(x) + ", " +
                                            text::format_double(y) + ") outside grid '" +
                                            grid.region_name + "'");
  }
  return CellId{static_cast<std::int32_t>(fx), static_cast<std::int32_t>(fy)};
}

inline std::optional<CellId> try_point_to_cell(double x, double y, const GridSpec& grid) {
  const double fx = std::floor((x - grid.origin_x) / grid.cell_size);
  const double fy = std::floor((y - grid.origin_y) / grid.cell_size);
  if (!(fx >= 0 && fy >= 0 && fx < static_cast<double>(grid.n_cols) &&
        fy < static_cast<double>(grid.n_rows)))
    return std::nullopt;
  return CellId{static_cast<std::int32_t>(fx), static_cast<std::int32_t>(fy)};
}

/// Counter-clockwise closed ring starting at the lower-left corner.
inline std::array<Point2, 5> cell_polygon(CellId cell, const GridSpec& grid) {
  if (!grid.contains(cell.col, cell.row))
    throw Error(ErrorKind::OutOfBounds, "cell (" + std::to_string(cell.col) + ", " +
                                            std::to_string(cell.row) + ") outside grid");
  const double x0 = grid.origin_x + cell.col * grid.cell_size;
  const double y0 = grid.origin_y + cell.row * grid.cell_size;
  const double x1 = grid.origin_x + (cell.col + 1) * grid.cell_size;
  const double y1 = grid.origin_y + (cell.row + 1) * grid.cell_size;
  return {Point2{x0, y0}, Point2{x1, y0}, Point2{x1, y1}, Point2{x0, y1}, Point2{x0, y0}};
}

struct CityRegion {
  GridSpec grid;
  std::vector<CellId> active_cells;  // sorted, unique
  std::optional<double> declared_area_km2;

  const std::string& name() const { return grid.region_name; }

  bool is_active(CellId c) const {
    return std::binary_search(active_cells.begin(), active_cells.end(), c);
  }
};

/// Sorts and deduplicates the active set and checks it against the grid bounds.
inline void normalize_region(CityRegion& region) {
  region.grid.validate();
  std::sort(region.active_cells.begin(), region.active_cells.end());
  region.active_cells.erase(std::unique(region.active_cells.begin(), region.active_cells.end()),
                            region.active_cells.end());
  for (const CellId& c : region.active_cells) {
    if (!region.grid.contains(c.col, c.row))
      throw Error(ErrorKind::OutOfBounds, "active cell (" + std::to_string(c.col) + ", " +
                                              std::to_string(c.row) + ") outside grid '" +
                                              region.name() + "'");
  }
}

inline CityRegion full_region(const GridSpec& grid) {
  grid.validate();
  CityRegion region{grid, {}, std::nullopt};
  region.active_cells.reserve(static_cast<std::size_t>(grid.n_cols * grid.n_rows));
  for (std::int32_t r = 0; r < grid.n_rows; ++r)
    for (std::int32_t c = 0; c < grid.n_cols; ++c) region.active_cells.push_back({c, r});
  return region;
}

struct RegionCheck {
  bool pass = true;
  bool has_declared = false;
  double computed_area_km2 = 0.0;
  double declared_area_km2 = 0.0;
  double relative_error = 0.0;
};

inline RegionCheck check_area(std::size_t n_cells, double cell_size, std::optional<double> declared,
                              double tolerance = 0.01) {
  RegionCheck report;
  report.computed_area_km2 = static_cast<double>(n_cells) * cell_size * cell_size / 1e6;
  if (!declared) return report;
  report.has_declared = true;
  report.declared_area_km2 = *declared;
  report.relative_error = std::abs(report.computed_area_km2 - *declared) / std::abs(*declared);
  report.pass = report.relative_error <= tolerance;
  return report;
}

/// Compares |active cells| x cell area against the declared area; passes within 1%.
inline RegionCheck check_region_consistency(const CityRegion& region) {
  return check_area(region.active_cells.size(), region.grid.cell_size, region.declared_area_km2);
}

// Region file (JSON):
// {
//   "name": "paris",
//   "grid": {"origin_x": 0, "origin_y": 0, "cell_size": 100, "n_cols": 10, "n_rows": 10},
//   "active_cells": [[col, row], ...]            optional
//   "active_runs": [[row, col_begin, col_end], ...]  optional, col_end exclusive
//   "declared_area_km2": 1.0                      optional
// }
// With neither cell list present every grid cell is active.

inline CityRegion region_from_json(const nlohmann::json& j) {
  try {
    CityRegion region;
    const auto& g = j.at("grid");
    region.grid.origin_x = g.value("origin_x", 0.0);
    region.grid.origin_y = g.value("origin_y", 0.0);
    region.grid.cell_size = g.value("cell_size", 100.0);
    region.grid.n_cols = g.at("n_cols").get<std::int64_t>();
    region.grid.n_rows = g.at("n_rows").get<std::int64_t>();
    region.grid.region_name = j.value("name", std::string("region"));
    region.grid.validate();
    bool any_list = false;
    if (j.contains("active_cells")) {
      any_list = true;
      for (const auto& c : j.at("active_cells"))
        region.active_cells.push_back({c.at(0).get<std::int32_t>(), c.at(1).get<std::int32_t>()});
    }
    if (j.contains("active_runs")) {
      any_list = true;
      for (const auto& run : j.at("active_runs")) {
        const auto row = run.at(0).get<std::int32_t>();
        const auto begin = run.at(1).get<std::int32_t>();
        const auto end = run.at(2).get<std::int32_t>();
        if (end < begin) throw Error(ErrorKind::InvalidSpec, "active run with end < begin");
        for (std::int32_t c = begin; c < end; ++c) region.active_cells.push_back({c, row});
      }
    }
    if (j.contains("declared_area_km2") && !j.at("declared_area_km2").is_null())
      region.declared_area_km2 = j.at("declared_area_km2").get<double>();
    if (!any_list) region.active_cells = full_region(region.grid).active_cells;
    normalize_region(region);
    return region;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedLine, std::string("region file: ") + e.what());
  }
}

/// Serializes with run-length encoded rows.
inline nlohmann::json region_to_json(const CityRegion& region) {
  nlohmann::json j;
  j["name"] = region.name();
  j["grid"] = {{"origin_x", region.grid.origin_x},
               {"origin_y", region.grid.origin_y},
               {"cell_size", region.grid.cell_size},
               {"n_cols", region.grid.n_cols},
               {"n_rows", region.grid.n_rows}};
  nlohmann::json runs = nlohmann::json::array();
  const auto& cells = region.active_cells;
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t k = i + 1;
    while (k < cells.size() && cells[k].row == cells[i].row && cells[k].col == cells[k - 1].col + 1)
      ++k;
    runs.push_back({cells[i].row, cells[i].col, cells[k - 1].col + 1});
    i = k;
  }
  j["active_runs"] = std::move(runs);
  if (region.declared_area_km2) j["declared_area_km2"] = *region.declared_area_km2;
  return j;
}

inline CityRegion load_region(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open region file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedLine, "region file " + path + ": " + e.what());
  }
  return region_from_json(j);
}

/// FeatureCollection of cell squares carrying one integer property per cell.
inline std::string cells_geojson(const GridSpec& grid, std::span<const CellId> cells,
                                 std::span<const int> values, const std::string& property) {
  if (cells.size() != values.size())
    throw Error(ErrorKind::LengthMismatch, "cells and values differ in length");
  std::string out = "{\"type\":\"FeatureCollection\",\"features\":[";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += "{\"type\":\"Feature\",\"properties\":{\"col\":" + std::to_string(cells[i].col) +
           ",\"row\":" + std::to_string(cells[i].row) + ",\"" + property +
           "\":" + std::to_string(values[i]) + "},\"geometry\":{\"type\":\"Polygon\",\"coordinates\":[[";
    const auto ring = cell_polygon(cells[i], grid);
    for (std::size_t p = 0; p < ring.size(); ++p) {
      if (p) out += ',';
      out += '[' + text::format_double(ring[p].x) + ',' + text::format_double(ring[p].y) + ']';
    }
    out += "]]}}";
  }
  out += "]}\n";
  return out;
}

}  // namespace vibrancy
