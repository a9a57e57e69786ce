#pragma once

// Readers for the traffic, POI and service-taxonomy CSV files.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vibrancy/error.hpp"
#include "vibrancy/grid.hpp"
#include "vibrancy/text.hpp"

namespace vibrancy {

/// Calendar date-time with minute precision, no time zone.
struct Timestamp {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;

  std::chrono::year_month_day date() const {
    return std::chrono::year{year} / std::chrono::month{static_cast<unsigned>(month)} /
           std::chrono::day{static_cast<unsigned>(day)};
  }

  /// ISO weekday, 1 = Monday .. 7 = Sunday.
  unsigned iso_weekday() const {
    return std::chrono::weekday{std::chrono::sys_days{date()}}.iso_encoding();
  }

  /// Days since 1970-01-01.
  std::int64_t day_number() const {
    return std::chrono::sys_days{date()}.time_since_epoch().count();
  }

  static Timestamp from_day_number(std::int64_t days, int hour = 0, int minute = 0) {
    const std::chrono::year_month_day ymd{
        std::chrono::sys_days{std::chrono::days{days}}};
    return Timestamp{static_cast<int>(ymd.year()), static_cast<int>(unsigned(ymd.month())),
                     static_cast<int>(unsigned(ymd.day())), hour, minute};
  }

  std::string to_string() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d", year, month, day, hour, minute);
    return buf;
  }
};

/// Parses "YYYY-MM-DDTHH:MM" (a space may replace the T). Rejects invalid calendar dates.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  s = text::trim(s);
  if (s.size() != 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
      s[13] != ':')
    return std::nullopt;
  const auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  const auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2);
  if (!y || !mo || !d || !h || !mi) return std::nullopt;
  Timestamp ts{*y, *mo, *d, *h, *mi};
  if (ts.hour > 23 || ts.minute > 59 || ts.month < 1 || ts.month > 12 || ts.day < 1) return std::nullopt;
  if (!ts.date().ok()) return std::nullopt;
  return ts;
}

enum class Direction { Downlink, Uplink };

inline std::optional<Direction> parse_direction(std::string_view s) {
  const std::string v = text::lower(text::trim(s));
  if (v == "downlink" || v == "dl") return Direction::Downlink;
  if (v == "uplink" || v == "ul") return Direction::Uplink;
  return std::nullopt;
}

inline std::string_view to_string(Direction d) {
  return d == Direction::Downlink ? "downlink" : "uplink";
}

struct TrafficRecord {
  CellId cell;
  Timestamp timestamp;
  std::string service;
  Direction direction = Direction::Downlink;
  double volume = 0.0;

  friend bool operator==(const TrafficRecord&, const TrafficRecord&) = default;
};

enum class PoiSource { Amenity, Leisure, Shop, Sport };

inline std::optional<PoiSource> parse_poi_source(std::string_view s) {
  const std::string v = text::lower(text::trim(s));
  if (v == "amenity") return PoiSource::Amenity;
  if (v == "leisure") return PoiSource::Leisure;
  if (v == "shop") return PoiSource::Shop;
  if (v == "sport") return PoiSource::Sport;
  return std::nullopt;
}

inline std::string_view to_string(PoiSource s) {
  switch (s) {
    case PoiSource::Amenity: return "amenity";
    case PoiSource::Leisure: return "leisure";
    case PoiSource::Shop: return "shop";
    case PoiSource::Sport: return "sport";
  }
  return "amenity";
}

struct PoiRecord {
  double x = 0.0;
  double y = 0.0;
  std::string label;
  PoiSource source = PoiSource::Amenity;

  friend bool operator==(const PoiRecord&, const PoiRecord&) = default;
};

struct Rejection {
  std::size_t line = 0;
  ErrorKind kind = ErrorKind::MalformedLine;
  std::string reason;
};

template <typename Record>
struct ParseResult {
  std::vector<Record> records;
  std::vector<Rejection> rejections;
  std::size_t data_lines = 0;

  std::size_t rejected() const { return rejections.size(); }
};

namespace detail {

inline void expect_header(std::string_view line, std::initializer_list<std::string_view> want,
                          std::string_view what) {
  const auto fields = text::split_csv(line);
  bool ok = fields && fields->size() == want.size();
  if (ok) {
    std::size_t i = 0;
    for (auto w : want) ok = ok && text::lower((*fields)[i++]) == w;
  }
  if (!ok) {
    std::string expected;
    for (auto w : want) expected += (expected.empty() ? "" : ",") + std::string(w);
    throw Error(ErrorKind::MalformedHeader,
                std::string(what) + " header must be '" + expected + "', got '" + std::string(line) + "'");
  }
}

}  // namespace detail

/// Streams `col,row,timestamp,service,direction,volume` rows. Bad rows are skipped and
/// recorded; a missing or wrong header throws. An empty stream yields no records.
inline ParseResult<TrafficRecord> parse_traffic(std::istream& in, const GridSpec& grid) {
  ParseResult<TrafficRecord> result;
  std::string line;
  std::size_t line_no = 0;
  if (!text::next_nonblank_line(in, line, line_no)) return result;
  detail::expect_header(line, {"col", "row", "timestamp", "service", "direction", "volume"},
                        "traffic CSV");
  while (text::next_nonblank_line(in, line, line_no)) {
    ++result.data_lines;
    const auto reject = [&](ErrorKind kind, std::string reason) {
      result.rejections.push_back({line_no, kind, std::move(reason)});
    };
    const auto fields = text::split_csv(line);
    if (!fields || fields->size() != 6) {
      reject(ErrorKind::MalformedLine, "expected 6 fields");
      continue;
    }
    const auto& f = *fields;
    const auto col = text::parse_int(f[0]);
    const auto row = text::parse_int(f[1]);
    if (!col || !row) {
      reject(ErrorKind::MalformedLine, "bad cell index");
      continue;
    }
    if (!grid.contains(*col, *row)) {
      reject(ErrorKind::OutOfBounds, "cell outside grid");
      continue;
    }
    const auto ts = parse_timestamp(f[2]);
    if (!ts) {
      reject(ErrorKind::MalformedLine, "bad timestamp");
      continue;
    }
    if (ts->minute % 15 != 0) {
      reject(ErrorKind::MalformedLine, "timestamp not on a 15-minute boundary");
      continue;
    }
    if (f[3].empty()) {
      reject(ErrorKind::MalformedLine, "empty service");
      continue;
    }
    const auto dir = parse_direction(f[4]);
    if (!dir) {
      reject(ErrorKind::UnknownDirection, "unknown direction '" + f[4] + "'");
      continue;
    }
    const auto vol = text::parse_double(f[5]);
    if (!vol || *vol < 0.0) {
      reject(ErrorKind::MalformedLine, "volume must be a nonnegative number");
      continue;
    }
    result.records.push_back(TrafficRecord{
        CellId{static_cast<std::int32_t>(*col), static_cast<std::int32_t>(*row)}, *ts, f[3], *dir,
        *vol});
  }
  return result;
}

/// Streams `x,y,label,source_category` rows.
inline ParseResult<PoiRecord> parse_pois(std::istream& in) {
  ParseResult<PoiRecord> result;
  std::string line;
  std::size_t line_no = 0;
  if (!text::next_nonblank_line(in, line, line_no)) return result;
  detail::expect_header(line, {"x", "y", "label", "source_category"}, "POI CSV");
  while (text::next_nonblank_line(in, line, line_no)) {
    ++result.data_lines;
    const auto fields = text::split_csv(line);
    if (!fields || fields->size() != 4) {
      result.rejections.push_back({line_no, ErrorKind::MalformedLine, "expected 4 fields"});
      continue;
    }
    const auto& f = *fields;
    const auto x = text::parse_double(f[0]);
    const auto y = text::parse_double(f[1]);
    if (!x || !y) {
      result.rejections.push_back({line_no, ErrorKind::MalformedLine, "bad coordinate"});
      continue;
    }
    if (f[2].empty()) {
      result.rejections.push_back({line_no, ErrorKind::MalformedLine, "empty label"});
      continue;
    }
    const auto src = parse_poi_source(f[3]);
    if (!src) {
      result.rejections.push_back(
          {line_no, ErrorKind::UnknownCategory, "source category '" + f[3] + "' not in amenity/leisure/shop/sport"});
      continue;
    }
    result.records.push_back(PoiRecord{*x, *y, f[2], *src});
  }
  return result;
}

/// Service -> app category mapping. Category order is the order of first appearance.
class ServiceTaxonomy {
 public:
  ServiceTaxonomy() = default;

  void add(const std::string& service, const std::string& category) {
    if (service_index_.contains(service))
      throw Error(ErrorKind::DuplicateService, "service '" + service + "' listed twice");
    auto it = category_index_.find(category);
    if (it == category_index_.end()) {
      it = category_index_.emplace(category, categories_.size()).first;
      categories_.push_back(category);
    }
    service_index_.emplace(service, it->second);
    services_.push_back(service);
  }

  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<std::string>& services() const { return services_; }
  std::size_t size() const { return categories_.size(); }

  std::optional<std::size_t> category_of(const std::string& service) const {
    const auto it = service_index_.find(service);
    if (it == service_index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> categories_;
  std::vector<std::string> services_;
  std::unordered_map<std::string, std::size_t> category_index_;
  std::unordered_map<std::string, std::size_t> service_index_;
};

/// Reads a `service,category` CSV.
inline ServiceTaxonomy load_taxonomy(std::istream& in) {
  ServiceTaxonomy taxonomy;
  std::string line;
  std::size_t line_no = 0;
  if (!text::next_nonblank_line(in, line, line_no))
    throw Error(ErrorKind::EmptyCategoryList, "taxonomy file is empty");
  detail::expect_header(line, {"service", "category"}, "taxonomy CSV");
  while (text::next_nonblank_line(in, line, line_no)) {
    const auto fields = text::split_csv(line);
    if (!fields || fields->size() != 2 || (*fields)[0].empty() || (*fields)[1].empty())
      throw Error(ErrorKind::MalformedLine,
                  "taxonomy line " + std::to_string(line_no) + ": expected service,category");
    taxonomy.add((*fields)[0], (*fields)[1]);
  }
  if (taxonomy.size() == 0) throw Error(ErrorKind::EmptyCategoryList, "taxonomy lists no services");
  return taxonomy;
}

inline std::ifstream open_input(const std::string& path, std::string_view what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + std::string(what) + " file " + path);
  return in;
}

inline ServiceTaxonomy load_taxonomy(const std::string& path) {
  auto in = open_input(path, "service taxonomy");
  return load_taxonomy(in);
}

inline void write_traffic_header(std::ostream& out) {
  out << "col,row,timestamp,service,direction,volume\n";
}

inline void write_traffic_row(std::ostream& out, const TrafficRecord& r) {
  out << r.cell.col << ',' << r.cell.row << ',' << r.timestamp.to_string() << ','
      << text::csv_escape(r.service) << ',' << to_string(r.direction) << ','
      << text::format_double(r.volume) << '\n';
}

inline void write_pois(std::ostream& out, const std::vector<PoiRecord>& pois) {
  out << "x,y,label,source_category\n";
  for (const auto& p : pois)
    out << text::format_double(p.x) << ',' << text::format_double(p.y) << ','
        << text::csv_escape(p.label) << ',' << to_string(p.source) << '\n';
}

}  // namespace vibrancy
