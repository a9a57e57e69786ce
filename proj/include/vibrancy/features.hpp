#pragma once

// Third-place covariates per cell: total count and diversity plus count and diversity inside
// each of the five third-place categories.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vibrancy/error.hpp"
#include "vibrancy/grid.hpp"
#include "vibrancy/ingest.hpp"
#include "vibrancy/signatures.hpp"
#include "vibrancy/text.hpp"

namespace vibrancy {

enum class ThirdPlace { CommercialServices, CommercialVenues, EatingAndDrinking, Outdoor, OrganisedActivities };

inline constexpr std::size_t kThirdPlaceCategories = 5;
inline constexpr std::size_t kCovariates = 2 + 2 * kThirdPlaceCategories;

inline constexpr std::array<std::string_view, kThirdPlaceCategories> kThirdPlaceNames = {
    "commercial_services", "commercial_venues", "eating_and_drinking", "outdoor", "organised_activities"};

inline std::optional<ThirdPlace> parse_third_place(std::string_view s) {
  std::string v = text::lower(text::trim(s));
  for (char& c : v)
    if (c == ' ' || c == '-') c = '_';
  if (v == "eating_drinking" || v == "eating_&_drinking") v = "eating_and_drinking";
  if (v == "organized_activities") v = "organised_activities";
  for (std::size_t i = 0; i < kThirdPlaceCategories; ++i)
    if (v == kThirdPlaceNames[i]) return static_cast<ThirdPlace>(i);
  return std::nullopt;
}

/// Column order: total_count, total_diversity, count_<category> x5, diversity_<category> x5.
inline std::vector<std::string> covariate_names() {
  std::vector<std::string> names = {"total_count", "total_diversity"};
  for (auto n : kThirdPlaceNames) names.push_back("count_" + std::string(n));
  for (auto n : kThirdPlaceNames) names.push_back("diversity_" + std::string(n));
  return names;
}

/// POI label -> third-place category. Labels not listed are not third places.
class ThirdPlaceTaxonomy {
 public:
  void add(const std::string& label, ThirdPlace category) {
    if (!map_.emplace(label, category).second)
      throw Error(ErrorKind::DuplicateService, "label '" + label + "' listed twice");
  }

  std::optional<ThirdPlace> category_of(const std::string& label) const {
    const auto it = map_.find(label);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return map_.size(); }

 private:
  std::map<std::string, ThirdPlace> map_;
};

/// Reads a `label,category` CSV.
inline ThirdPlaceTaxonomy load_third_place_taxonomy(std::istream& in) {
  ThirdPlaceTaxonomy taxonomy;
  std::string line;
  std::size_t line_no = 0;
  if (!text::next_nonblank_line(in, line, line_no))
    throw Error(ErrorKind::EmptyCategoryList, "third-place taxonomy is empty");
  detail::expect_header(line, {"label", "category"}, "third-place taxonomy CSV");
  while (text::next_nonblank_line(in, line, line_no)) {
    const auto fields = text::split_csv(line);
    if (!fields || fields->size() != 2 || (*fields)[0].empty())
      throw Error(ErrorKind::MalformedLine, "third-place taxonomy line " + std::to_string(line_no));
    const auto cat = parse_third_place((*fields)[1]);
    if (!cat)
      throw Error(ErrorKind::UnknownCategory, "line " + std::to_string(line_no) + ": '" + (*fields)[1] +
                                                  "' is not a third-place category");
    taxonomy.add((*fields)[0], *cat);
  }
  return taxonomy;
}

inline ThirdPlaceTaxonomy load_third_place_taxonomy(const std::string& path) {
  auto in = open_input(path, "third-place taxonomy");
  return load_third_place_taxonomy(in);
}

/// Keeps only records whose label occurs at least `min_count` times in `pois`.
inline std::vector<PoiRecord> filter_rare_labels(std::span<const PoiRecord> pois, std::size_t min_count = 10) {
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& p : pois) ++freq[p.label];
  std::vector<PoiRecord> kept;
  for (const auto& p : pois)
    if (freq[p.label] >= min_count) kept.push_back(p);
  return kept;
}

/// Shannon-Wiener index in bits over the positive counts; 0 for empty or single-label input.
inline double shannon_diversity(std::span<const double> counts) {
  double total = 0.0;
  std::size_t present = 0;
  for (double c : counts) {
    if (c > 0.0) {
      total += c;
      ++present;
    }
  }
  if (present < 2) return 0.0;
  double h = 0.0;
  for (double c : counts) {
    if (c <= 0.0) continue;
    const double p = c / total;
    h -= p * std::log2(p);
  }
  return h;
}

inline double shannon_diversity(const std::map<std::string, std::size_t>& counts) {
  std::vector<double> v;
  v.reserve(counts.size());
  for (const auto& [label, c] : counts) v.push_back(static_cast<double>(c));
  return shannon_diversity(v);
}

struct FeatureTable {
  std::vector<std::string> regions;
  std::vector<LocatedCell> cells;
  std::vector<double> values;  // cells x kCovariates
  bool standardized = false;

  std::size_t rows() const { return cells.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * kCovariates, kCovariates);
  }
  double at(std::size_t i, std::size_t j) const { return values[i * kCovariates + j]; }
  MatrixView view() const { return MatrixView{values, rows(), kCovariates}; }
};

struct FeatureStats {
  std::size_t pois_in_cells = 0;
  std::size_t pois_outside = 0;  // outside the grid or in inactive cells
  std::size_t non_third_place = 0;
};

/// Per active cell: counts and label diversities of third-place POIs; empty cells are zeros.
inline FeatureTable build_features(std::span<const PoiRecord> pois, const ThirdPlaceTaxonomy& taxonomy,
                                   const CityRegion& region, FeatureStats* stats_out = nullptr) {
  const auto& active = region.active_cells;
  using LabelCounts = std::map<std::string, std::size_t>;
  std::vector<LabelCounts> total(active.size());
  std::vector<std::array<LabelCounts, kThirdPlaceCategories>> by_cat(active.size());

  FeatureStats stats;
  for (const auto& p : pois) {
    const auto cell = try_point_to_cell(p.x, p.y, region.grid);
    const auto it = cell ? std::lower_bound(active.begin(), active.end(), *cell) : active.end();
    if (!cell || it == active.end() || *it != *cell) {
      ++stats.pois_outside;
      continue;
    }
    const auto cat = taxonomy.category_of(p.label);
    if (!cat) {
      ++stats.non_third_place;
      continue;
    }
    ++stats.pois_in_cells;
    const auto i = static_cast<std::size_t>(it - active.begin());
    ++total[i][p.label];
    ++by_cat[i][static_cast<std::size_t>(*cat)][p.label];
  }

  FeatureTable table;
  table.regions = {region.name()};
  table.values.assign(active.size() * kCovariates, 0.0);
  for (std::size_t i = 0; i < active.size(); ++i) {
    table.cells.push_back(LocatedCell{0, active[i]});
    double* row = table.values.data() + i * kCovariates;
    std::size_t count = 0;
    for (const auto& [label, c] : total[i]) count += c;
    row[0] = static_cast<double>(count);
    row[1] = shannon_diversity(total[i]);
    for (std::size_t c = 0; c < kThirdPlaceCategories; ++c) {
      std::size_t n = 0;
      for (const auto& [label, k] : by_cat[i][c]) n += k;
      row[2 + c] = static_cast<double>(n);
      row[2 + kThirdPlaceCategories + c] = shannon_diversity(by_cat[i][c]);
    }
  }
  if (stats_out) *stats_out = stats;
  return table;
}

inline FeatureTable concat_features(std::span<const FeatureTable> parts) {
  FeatureTable out;
  for (const auto& p : parts) {
    const auto offset = static_cast<std::uint32_t>(out.regions.size());
    out.regions.insert(out.regions.end(), p.regions.begin(), p.regions.end());
    for (const auto& c : p.cells) out.cells.push_back(LocatedCell{c.region + offset, c.cell});
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    out.standardized = p.standardized;
  }
  return out;
}

/// Per-covariate z-score with population standard deviation; constant covariates become 0.
inline std::vector<double> zscore(std::span<const double> column) {
  const auto n = static_cast<double>(column.size());
  double mean = 0.0;
  for (double v : column) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : column) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
  std::vector<double> out(column.size(), 0.0);
  if (*lo == *hi || sd == 0.0) return out;
  for (std::size_t i = 0; i < column.size(); ++i) out[i] = (column[i] - mean) / sd;
  return out;
}

inline FeatureTable standardize(const FeatureTable& table) {
  if (table.rows() < 2) throw Error(ErrorKind::TooFewRows, "standardizing needs at least 2 cells");
  FeatureTable out = table;
  std::vector<double> column(table.rows());
  for (std::size_t j = 0; j < kCovariates; ++j) {
    for (std::size_t i = 0; i < table.rows(); ++i) column[i] = table.at(i, j);
    const auto z = zscore(column);
    for (std::size_t i = 0; i < table.rows(); ++i) out.values[i * kCovariates + j] = z[i];
  }
  out.standardized = true;
  return out;
}

/// `col,row,<12 covariates>` for the cells of one region.
inline void write_features_csv(std::ostream& out, const FeatureTable& table, std::uint32_t region = 0) {
  out << "col,row";
  for (const auto& n : covariate_names()) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (table.cells[i].region != region) continue;
    out << table.cells[i].cell.col << ',' << table.cells[i].cell.row;
    for (double v : table.row(i)) out << ',' << text::format_double(v);
    out << '\n';
  }
}

inline FeatureTable read_features_csv(std::istream& in, const std::string& region_name) {
  FeatureTable table;
  table.regions = {region_name};
  std::string line;
  std::size_t line_no = 0;
  if (!text::next_nonblank_line(in, line, line_no)) throw Error(ErrorKind::EmptyInput, "feature file is empty");
  const auto header = text::split_csv(line);
  const auto names = covariate_names();
  if (!header || header->size() != 2 + kCovariates || (*header)[0] != "col" || (*header)[1] != "row" ||
      !std::equal(names.begin(), names.end(), header->begin() + 2))
    throw Error(ErrorKind::MalformedHeader, "feature CSV header mismatch");
  while (text::next_nonblank_line(in, line, line_no)) {
    const auto f = text::split_csv(line);
    if (!f || f->size() != 2 + kCovariates)
      throw Error(ErrorKind::MalformedLine, "feature line " + std::to_string(line_no));
    const auto col = text::parse_int((*f)[0]), row = text::parse_int((*f)[1]);
    if (!col || !row) throw Error(ErrorKind::MalformedLine, "feature line " + std::to_string(line_no));
    table.cells.push_back(LocatedCell{0, CellId{static_cast<std::int32_t>(*col), static_cast<std::int32_t>(*row)}});
    for (std::size_t j = 0; j < kCovariates; ++j) {
      const auto v = text::parse_double((*f)[2 + j]);
      if (!v) throw Error(ErrorKind::MalformedLine, "feature line " + std::to_string(line_no));
      table.values.push_back(*v);
    }
  }
  return table;
}

}  // namespace vibrancy
