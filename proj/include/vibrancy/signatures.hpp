#pragma once

// Per-cell digital signatures: cells x 12 two-hour bins x D app categories.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vibrancy/error.hpp"
#include "vibrancy/grid.hpp"
#include "vibrancy/ingest.hpp"
#include "vibrancy/text.hpp"

namespace vibrancy {

inline constexpr std::size_t kBins = 12;

enum class DayType { Weekday, Weekend };

inline std::string_view to_string(DayType t) { return t == DayType::Weekday ? "weekday" : "weekend"; }

inline std::optional<DayType> parse_day_type(std::string_view s) {
  const std::string v = text::lower(text::trim(s));
  if (v == "weekday" || v == "week") return DayType::Weekday;
  if (v == "weekend") return DayType::Weekend;
  return std::nullopt;
}

/// Monday..Thursday are weekdays; Friday joins the weekend.
inline DayType day_type_of(const Timestamp& ts) {
  return ts.iso_weekday() <= 4 ? DayType::Weekday : DayType::Weekend;
}

inline std::size_t bin_of(const Timestamp& ts) { return static_cast<std::size_t>(ts.hour / 2); }

/// A cell tagged with the index of the region it belongs to.
struct LocatedCell {
  std::uint32_t region = 0;
  CellId cell;
  friend bool operator==(const LocatedCell&, const LocatedCell&) = default;
  friend auto operator<=>(const LocatedCell&, const LocatedCell&) = default;
};

/// Read-only row-major matrix view; each row is one location's flattened 12 x D signature.
struct MatrixView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<const double> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

struct SignatureTensor {
  DayType day_type = DayType::Weekday;
  std::vector<std::string> categories;
  std::vector<std::string> regions;
  std::vector<LocatedCell> cells;
  std::vector<double> values;  // [cell][bin][category]

  std::size_t n() const { return cells.size(); }
  std::size_t depth() const { return categories.size(); }
  std::size_t row_size() const { return kBins * categories.size(); }

  double& at(std::size_t cell, std::size_t bin, std::size_t cat) {
    return values[(cell * kBins + bin) * depth() + cat];
  }
  double at(std::size_t cell, std::size_t bin, std::size_t cat) const {
    return values[(cell * kBins + bin) * depth() + cat];
  }
  std::span<const double> row(std::size_t cell) const {
    return std::span<const double>(values).subspan(cell * row_size(), row_size());
  }
  MatrixView view() const { return MatrixView{values, n(), row_size()}; }

  friend bool operator==(const SignatureTensor&, const SignatureTensor&) = default;
};

struct SignatureOptions {
  bool mean_per_day = false;
  bool drop_silent_cells = false;
};

struct SignatureStats {
  std::size_t records_used = 0;
  std::size_t records_other_day_type = 0;
  std::size_t records_outside_region = 0;
  std::size_t days = 0;  // distinct dates of the requested day type
  std::size_t silent_cells = 0;
};

/// Sums downlink + uplink volume per (cell, bin, category) over all days of `day_type`.
/// Every region cell gets a row; cells without traffic stay all-zero unless dropped.
/// Entries are summed in sorted order so record order never changes the result.
inline SignatureTensor build_signatures(std::span<const TrafficRecord> records,
                                        const ServiceTaxonomy& taxonomy, const CityRegion& region,
                                        DayType day_type, const SignatureOptions& options = {},
                                        SignatureStats* stats_out = nullptr) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no traffic records");
  const std::size_t depth = taxonomy.size();
  const auto& active = region.active_cells;

  SignatureStats stats;
  std::vector<std::pair<std::size_t, double>> contributions;
  std::set<std::int64_t> days;
  for (const auto& r : records) {
    const auto cat = taxonomy.category_of(r.service);
    if (!cat) throw Error(ErrorKind::UnknownService, "service '" + r.service + "' not in taxonomy");
    if (day_type_of(r.timestamp) != day_type) {
      ++stats.records_other_day_type;
      continue;
    }
    const auto it = std::lower_bound(active.begin(), active.end(), r.cell);
    if (it == active.end() || *it != r.cell) {
      ++stats.records_outside_region;
      continue;
    }
    const auto cell = static_cast<std::size_t>(it - active.begin());
    contributions.emplace_back((cell * kBins + bin_of(r.timestamp)) * depth + *cat, r.volume);
    days.insert(r.timestamp.day_number());
  }
  stats.records_used = contributions.size();
  stats.days = days.size();
  if (contributions.empty())
    throw Error(ErrorKind::EmptyInput, "no traffic records for " + std::string(to_string(day_type)) +
                                           " inside region '" + region.name() + "'");
  std::sort(contributions.begin(), contributions.end());

  SignatureTensor tensor;
  tensor.day_type = day_type;
  tensor.categories = taxonomy.categories();
  tensor.regions = {region.name()};
  tensor.values.assign(active.size() * kBins * depth, 0.0);
  for (const auto& [index, volume] : contributions) tensor.values[index] += volume;
  if (options.mean_per_day) {
    const double n_days = static_cast<double>(stats.days);
    for (double& v : tensor.values) v /= n_days;
  }

  const std::size_t row = kBins * depth;
  std::vector<double> kept;
  kept.reserve(tensor.values.size());
  for (std::size_t c = 0; c < active.size(); ++c) {
    const auto first = tensor.values.begin() + static_cast<std::ptrdiff_t>(c * row);
    const bool silent = std::all_of(first, first + static_cast<std::ptrdiff_t>(row),
                                    [](double v) { return v == 0.0; });
    if (silent) ++stats.silent_cells;
    if (silent && options.drop_silent_cells) continue;
    tensor.cells.push_back(LocatedCell{0, active[c]});
    kept.insert(kept.end(), first, first + static_cast<std::ptrdiff_t>(row));
  }
  tensor.values = std::move(kept);
  if (stats_out) *stats_out = stats;
  return tensor;
}

/// Row-concatenation of several regions' tensors (the global level).
inline SignatureTensor concat_tensors(std::span<const SignatureTensor> parts) {
  if (parts.empty()) throw Error(ErrorKind::EmptyInput, "no tensors to concatenate");
  SignatureTensor out;
  out.day_type = parts.front().day_type;
  out.categories = parts.front().categories;
  for (const auto& p : parts) {
    if (p.day_type != out.day_type || p.categories != out.categories)
      throw Error(ErrorKind::ShapeMismatch, "tensors differ in day type or category order");
    const auto offset = static_cast<std::uint32_t>(out.regions.size());
    out.regions.insert(out.regions.end(), p.regions.begin(), p.regions.end());
    for (const auto& c : p.cells) out.cells.push_back(LocatedCell{c.region + offset, c.cell});
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
  }
  return out;
}

struct NormalizedTensor {
  SignatureTensor tensor;  // values are relative-risk ratios
  double cap = 1e6;
  std::size_t capped_entries = 0;
  std::vector<std::pair<std::size_t, std::size_t>> flagged_columns;  // (bin, category)

  MatrixView view() const { return tensor.view(); }
  std::size_t n() const { return tensor.n(); }
};

namespace detail {

// Neumaier compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace detail

/// Relative risk per (bin, category) column: each location's value divided by the mean of
/// all other locations. When the other locations sum to zero the ratio is 1 for a zero value
/// and `cap` (column flagged) for a positive one.
inline NormalizedTensor relative_risk(const SignatureTensor& input, double cap = 1e6) {
  const std::size_t n = input.n();
  if (n < 2) throw Error(ErrorKind::TooFewLocations, "relative risk needs at least 2 locations");
  for (double v : input.values)
    if (!std::isfinite(v) || v < 0.0)
      throw Error(ErrorKind::NonFinite, "signature values must be finite and nonnegative");

  NormalizedTensor out;
  out.tensor = input;
  out.cap = cap;
  const std::size_t width = input.row_size();
  const double others = static_cast<double>(n - 1);
  std::vector<double> prefix(n + 1), suffix(n + 1);
  for (std::size_t j = 0; j < width; ++j) {
    detail::CompensatedSum fwd, bwd;
    prefix[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      fwd.add(input.values[i * width + j]);
      prefix[i + 1] = fwd.value();
    }
    suffix[n] = 0.0;
    for (std::size_t i = n; i-- > 0;) {
      bwd.add(input.values[i * width + j]);
      suffix[i] = bwd.value();
    }
    bool flagged = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = input.values[i * width + j];
      const double rest = prefix[i] + suffix[i + 1];
      double& o = out.tensor.values[i * width + j];
      if (rest == 0.0) {
        if (x == 0.0) {
          o = 1.0;
        } else {
          o = cap;
          ++out.capped_entries;
          flagged = true;
        }
      } else {
        o = x / (rest / others);
      }
    }
    if (flagged) out.flagged_columns.emplace_back(j / input.depth(), j % input.depth());
  }
  return out;
}

/// (x - min) / (max - min); a constant series maps to zeros. Used for plot-ready output only.
inline std::vector<double> minmax_scale(std::span<const double> series) {
  if (series.empty()) return {};
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  const double min = *lo, range = *hi - *lo;
  std::vector<double> out(series.size(), 0.0);
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = (series[i] - min) / range;
  return out;
}

// Binary tensor file, little-endian:
//   "VIBRTNSR" u32 version u32 kind(0 raw, 1 relative risk) u32 day_type
//   u64 n u32 bins u32 D u32 n_regions
//   D x string, n_regions x string  (string = u32 length + bytes)
//   n x (u32 region, i32 col, i32 row)
//   n*bins*D x f64

inline constexpr char kTensorMagic[8] = {'V', 'I', 'B', 'R', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw Error(ErrorKind::MalformedLine, "truncated binary file");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const auto len = get<std::uint32_t>(in);
  if (len > (1u << 20)) throw Error(ErrorKind::MalformedLine, "implausible string length");
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw Error(ErrorKind::MalformedLine, "truncated binary file");
  return s;
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const SignatureTensor& t, bool normalized = false) {
  out.write(kTensorMagic, sizeof kTensorMagic);
  detail::put<std::uint32_t>(out, kTensorVersion);
  detail::put<std::uint32_t>(out, normalized ? 1u : 0u);
  detail::put<std::uint32_t>(out, t.day_type == DayType::Weekday ? 0u : 1u);
  detail::put<std::uint64_t>(out, t.n());
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(kBins));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.depth()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.regions.size()));
  for (const auto& c : t.categories) detail::put_string(out, c);
  for (const auto& r : t.regions) detail::put_string(out, r);
  for (const auto& c : t.cells) {
    detail::put<std::uint32_t>(out, c.region);
    detail::put<std::int32_t>(out, c.cell.col);
    detail::put<std::int32_t>(out, c.cell.row);
  }
  out.write(reinterpret_cast<const char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(double)));
}

struct LoadedTensor {
  SignatureTensor tensor;
  bool normalized = false;
};

inline LoadedTensor read_tensor(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kTensorMagic, sizeof magic) != 0)
    throw Error(ErrorKind::MalformedHeader, "not a signature tensor file");
  if (detail::get<std::uint32_t>(in) != kTensorVersion)
    throw Error(ErrorKind::MalformedHeader, "unsupported tensor file version");
  LoadedTensor loaded;
  loaded.normalized = detail::get<std::uint32_t>(in) == 1u;
  auto& t = loaded.tensor;
  t.day_type = detail::get<std::uint32_t>(in) == 0u ? DayType::Weekday : DayType::Weekend;
  const auto n = detail::get<std::uint64_t>(in);
  if (detail::get<std::uint32_t>(in) != kBins)
    throw Error(ErrorKind::ShapeMismatch, "tensor bin count must be 12");
  const auto depth = detail::get<std::uint32_t>(in);
  const auto n_regions = detail::get<std::uint32_t>(in);
  if (n > (1ull << 32)) throw Error(ErrorKind::MalformedHeader, "implausible cell count");
  for (std::uint32_t i = 0; i < depth; ++i) t.categories.push_back(detail::get_string(in));
  for (std::uint32_t i = 0; i < n_regions; ++i) t.regions.push_back(detail::get_string(in));
  t.cells.resize(n);
  for (auto& c : t.cells) {
    c.region = detail::get<std::uint32_t>(in);
    c.cell.col = detail::get<std::int32_t>(in);
    c.cell.row = detail::get<std::int32_t>(in);
    if (c.region >= n_regions) throw Error(ErrorKind::MalformedHeader, "cell region index out of range");
  }
  t.values.resize(n * kBins * depth);
  if (!in.read(reinterpret_cast<char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(double))))
    throw Error(ErrorKind::MalformedLine, "truncated tensor payload");
  return loaded;
}

/// One line per (cell, bin): region,col,row,bin,<category columns...>
inline void write_tensor_csv(std::ostream& out, const SignatureTensor& t) {
  out << "region,col,row,bin";
  for (const auto& c : t.categories) out << ',' << text::csv_escape(c);
  out << '\n';
  for (std::size_t i = 0; i < t.n(); ++i) {
    for (std::size_t b = 0; b < kBins; ++b) {
      out << text::csv_escape(t.regions[t.cells[i].region]) << ',' << t.cells[i].cell.col << ','
          << t.cells[i].cell.row << ',' << b;
      for (std::size_t d = 0; d < t.depth(); ++d) out << ',' << text::format_double(t.at(i, b, d));
      out << '\n';
    }
  }
}

}  // namespace vibrancy
