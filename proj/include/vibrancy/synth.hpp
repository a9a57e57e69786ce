#pragma once

// Deterministic synthetic city with planted signature archetypes and planted POI profiles.
// Used as the ground truth for end-to-end checks.
//
// Random streams (all derived from SynthSpec::seed with derive_seed):
//   "archetypes"  base curves when none are supplied
//   "assignment"  shuffle of the archetype-per-cell list
//   "noise"       Gaussian noise on the (bin, category) aggregates
//   "pois"        POI counts, labels and positions

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibrancy/error.hpp"
#include "vibrancy/features.hpp"
#include "vibrancy/grid.hpp"
#include "vibrancy/ingest.hpp"
#include "vibrancy/random.hpp"
#include "vibrancy/signatures.hpp"

namespace vibrancy {

/// Expected third-place POIs per cell and how many distinct labels they are drawn from,
/// per third-place category.
struct PoiProfile {
  std::array<double, kThirdPlaceCategories> intensity{2.0, 2.0, 2.0, 2.0, 2.0};
  std::array<std::size_t, kThirdPlaceCategories> richness{1, 1, 1, 1, 1};
};

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t n_cells = 300;
  std::size_t n_categories = 4;
  std::size_t k_true = 3;
  std::vector<double> archetypes;         // k_true x 12 x D; generated when empty
  std::vector<double> archetype_weights;  // share of cells per archetype; equal when empty
  std::vector<PoiProfile> poi_profiles;   // per archetype; defaults when empty
  double noise_sigma = 0.1;
  double base_level = 10.0;
  double amplitude = 0.5;  // relative swing of generated base curves
  std::size_t n_days = 1;
  DayType day_type = DayType::Weekday;
  std::size_t services_per_category = 2;
  double downlink_share = 0.75;
  double non_third_place_rate = 0.5;  // expected unrelated POIs per cell
  double cell_size = 100.0;
  std::string region_name = "synth";

  void validate() const {
    if (k_true < 2) throw Error(ErrorKind::InvalidSpec, "k_true must be >= 2");
    if (n_cells < k_true) throw Error(ErrorKind::InvalidSpec, "n_cells must be >= k_true");
    if (n_categories < 1) throw Error(ErrorKind::InvalidSpec, "need at least one app category");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorKind::InvalidSpec, "noise_sigma must be >= 0");
    if (n_days < 1) throw Error(ErrorKind::InvalidSpec, "n_days must be >= 1");
    if (services_per_category < 1) throw Error(ErrorKind::InvalidSpec, "services_per_category must be >= 1");
    if (!(downlink_share >= 0.0 && downlink_share <= 1.0)) throw Error(ErrorKind::InvalidSpec, "downlink_share in [0,1]");
    if (!archetypes.empty() && archetypes.size() != k_true * kBins * n_categories)
      throw Error(ErrorKind::InvalidSpec, "archetypes must hold k_true x 12 x D values");
    for (double v : archetypes)
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidSpec, "archetype values must be >= 0");
    if (!archetype_weights.empty()) {
      if (archetype_weights.size() != k_true) throw Error(ErrorKind::InvalidSpec, "one weight per archetype");
      for (double w : archetype_weights)
        if (!(w > 0.0)) throw Error(ErrorKind::InvalidSpec, "archetype weights must be positive");
    }
    if (!poi_profiles.empty() && poi_profiles.size() != k_true)
      throw Error(ErrorKind::InvalidSpec, "one POI profile per archetype");
  }
};

struct SynthTruth {
  CityRegion region;
  ServiceTaxonomy taxonomy;
  std::vector<std::pair<std::string, ThirdPlace>> third_place_labels;
  std::vector<double> archetypes;      // k x 12 x D actually used
  std::vector<int> archetype_of_cell;  // 1..k, aligned with region.active_cells
  std::vector<double> planted;         // n x 12 x D per-day aggregates after noise
  std::vector<TrafficRecord> traffic;
  std::vector<PoiRecord> pois;
  double separation_ratio = 0.0;  // min pairwise archetype distance / noise sigma
};

namespace synth_detail {

struct PoiLabel {
  const char* label;
  PoiSource source;
};

inline const std::array<std::array<PoiLabel, 8>, kThirdPlaceCategories>& label_pools() {
  static const std::array<std::array<PoiLabel, 8>, kThirdPlaceCategories> pools = {{
      {{{"hairdresser", PoiSource::Shop}, {"bank", PoiSource::Amenity}, {"pharmacy", PoiSource::Amenity},
        {"post_office", PoiSource::Amenity}, {"laundry", PoiSource::Shop}, {"beauty", PoiSource::Shop},
        {"optician", PoiSource::Shop}, {"car_wash", PoiSource::Amenity}}},
      {{{"clothes", PoiSource::Shop}, {"supermarket", PoiSource::Shop}, {"bakery", PoiSource::Shop},
        {"books", PoiSource::Shop}, {"convenience", PoiSource::Shop}, {"florist", PoiSource::Shop},
        {"gift", PoiSource::Shop}, {"hardware", PoiSource::Shop}}},
      {{{"restaurant", PoiSource::Amenity}, {"cafe", PoiSource::Amenity}, {"bar", PoiSource::Amenity},
        {"fast_food", PoiSource::Amenity}, {"pub", PoiSource::Amenity}, {"ice_cream", PoiSource::Amenity},
        {"biergarten", PoiSource::Amenity}, {"food_court", PoiSource::Amenity}}},
      {{{"park", PoiSource::Leisure}, {"playground", PoiSource::Leisure}, {"garden", PoiSource::Leisure},
        {"picnic_table", PoiSource::Leisure}, {"pitch", PoiSource::Leisure}, {"dog_park", PoiSource::Leisure},
        {"nature_reserve", PoiSource::Leisure}, {"fountain", PoiSource::Amenity}}},
      {{{"sports_centre", PoiSource::Leisure}, {"fitness_centre", PoiSource::Leisure},
        {"community_centre", PoiSource::Amenity}, {"theatre", PoiSource::Amenity}, {"cinema", PoiSource::Amenity},
        {"library", PoiSource::Amenity}, {"arts_centre", PoiSource::Amenity}, {"swimming", PoiSource::Sport}}},
  }};
  return pools;
}

inline std::vector<PoiProfile> default_profiles(std::size_t k) {
  std::vector<PoiProfile> out(k);
  for (std::size_t a = 0; a < k; ++a) {
    const std::size_t r = a == 0 ? 1 : std::min<std::size_t>(8, 3 * a);
    out[a].richness.fill(r);
  }
  return out;
}

inline std::vector<double> generate_archetypes(const SynthSpec& spec) {
  Rng rng(derive_seed(spec.seed, "archetypes"));
  const std::size_t D = spec.n_categories;
  std::vector<double> out(spec.k_true * kBins * D);
  constexpr double kTwoPi = 6.283185307179586;
  for (std::size_t a = 0; a < spec.k_true; ++a) {
    for (std::size_t d = 0; d < D; ++d) {
      const double phase = kTwoPi * rng.uniform();
      const double harmonic = 1.0 + static_cast<double>(rng.index(2));
      for (std::size_t b = 0; b < kBins; ++b) {
        const double t = kTwoPi * static_cast<double>(b) / static_cast<double>(kBins);
        out[(a * kBins + b) * D + d] = spec.base_level * (1.0 + spec.amplitude * std::sin(harmonic * t + phase));
      }
    }
  }
  return out;
}

inline std::vector<std::int64_t> matching_days(DayType type, std::size_t count) {
  std::vector<std::int64_t> days;
  // 2019-03-16 onwards
  for (std::int64_t d = Timestamp{2019, 3, 16, 0, 0}.day_number(); days.size() < count; ++d)
    if (day_type_of(Timestamp::from_day_number(d)) == type) days.push_back(d);
  return days;
}

}  // namespace synth_detail

inline double min_pairwise_distance(std::span<const double> rows, std::size_t k, std::size_t dim) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = rows[a * dim + j] - rows[b * dim + j];
        s += d * d;
      }
      best = std::min(best, std::sqrt(s));
    }
  return best;
}

inline SynthTruth generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_cells, D = spec.n_categories, k = spec.k_true, row = kBins * D;
  SynthTruth truth;

  GridSpec grid;
  grid.cell_size = spec.cell_size;
  grid.n_cols = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  grid.n_rows = static_cast<std::int64_t>((n + static_cast<std::size_t>(grid.n_cols) - 1) /
                                          static_cast<std::size_t>(grid.n_cols));
  grid.region_name = spec.region_name;
  truth.region.grid = grid;
  for (std::size_t i = 0; i < n; ++i)
    truth.region.active_cells.push_back(CellId{static_cast<std::int32_t>(i % static_cast<std::size_t>(grid.n_cols)),
                                               static_cast<std::int32_t>(i / static_cast<std::size_t>(grid.n_cols))});
  truth.region.declared_area_km2 = static_cast<double>(n) * grid.cell_area_km2();

  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t s = 0; s < spec.services_per_category; ++s)
      truth.taxonomy.add("service_" + std::to_string(d) + "_" + std::to_string(s), "category_" + std::to_string(d));

  const auto& pools = synth_detail::label_pools();
  for (std::size_t c = 0; c < kThirdPlaceCategories; ++c)
    for (const auto& l : pools[c]) truth.third_place_labels.emplace_back(l.label, static_cast<ThirdPlace>(c));

  truth.archetypes = spec.archetypes.empty() ? synth_detail::generate_archetypes(spec) : spec.archetypes;
  const double sep = min_pairwise_distance(truth.archetypes, k, row);
  truth.separation_ratio = spec.noise_sigma > 0.0 ? sep / spec.noise_sigma : std::numeric_limits<double>::infinity();

  // Archetype counts: floor of the weighted share, remainder handed out round-robin.
  std::vector<double> weights = spec.archetype_weights.empty() ? std::vector<double>(k, 1.0) : spec.archetype_weights;
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> count(k);
  std::size_t assigned = 0;
  for (std::size_t a = 0; a < k; ++a) {
    count[a] = static_cast<std::size_t>(std::floor(static_cast<double>(n) * weights[a] / wsum));
    assigned += count[a];
  }
  for (std::size_t a = 0; assigned < n; a = (a + 1) % k, ++assigned) ++count[a];
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t i = 0; i < count[a]; ++i) truth.archetype_of_cell.push_back(static_cast<int>(a + 1));
  Rng assign_rng(derive_seed(spec.seed, "assignment"));
  assign_rng.shuffle(truth.archetype_of_cell.begin(), truth.archetype_of_cell.end());

  Rng noise_rng(derive_seed(spec.seed, "noise"));
  truth.planted.resize(n * row);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = static_cast<std::size_t>(truth.archetype_of_cell[i] - 1);
    for (std::size_t j = 0; j < row; ++j) {
      const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise_rng.normal() : 0.0;
      truth.planted[i * row + j] = std::max(0.0, truth.archetypes[a * row + j] + noise);
    }
  }

  // Each day repeats the planted aggregates, split over the 8 quarter-hours of a bin with
  // fixed weights 1..8 / 36, evenly over the category's services and by direction.
  const auto days = synth_detail::matching_days(spec.day_type, spec.n_days);
  const double per_service = 1.0 / static_cast<double>(spec.services_per_category);
  truth.traffic.reserve(days.size() * n * row * 8 * spec.services_per_category * 2);
  for (const auto day : days) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t b = 0; b < kBins; ++b) {
        for (std::size_t q = 0; q < 8; ++q) {
          const Timestamp ts = Timestamp::from_day_number(day, static_cast<int>(2 * b + q / 4), static_cast<int>(15 * (q % 4)));
          const double share = static_cast<double>(q + 1) / 36.0;
          for (std::size_t d = 0; d < D; ++d) {
            const double v = truth.planted[i * row + b * D + d] * share * per_service;
            for (std::size_t s = 0; s < spec.services_per_category; ++s) {
              const std::string service = "service_" + std::to_string(d) + "_" + std::to_string(s);
              truth.traffic.push_back({truth.region.active_cells[i], ts, service, Direction::Downlink, v * spec.downlink_share});
              truth.traffic.push_back({truth.region.active_cells[i], ts, service, Direction::Uplink, v * (1.0 - spec.downlink_share)});
            }
          }
        }
      }
    }
  }

  const auto profiles = spec.poi_profiles.empty() ? synth_detail::default_profiles(k) : spec.poi_profiles;
  Rng poi_rng(derive_seed(spec.seed, "pois"));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& profile = profiles[static_cast<std::size_t>(truth.archetype_of_cell[i] - 1)];
    const auto cell = truth.region.active_cells[i];
    const auto place = [&](const std::string& label, PoiSource source) {
      const double x = grid.origin_x + (cell.col + 0.05 + 0.9 * poi_rng.uniform()) * grid.cell_size;
      const double y = grid.origin_y + (cell.row + 0.05 + 0.9 * poi_rng.uniform()) * grid.cell_size;
      truth.pois.push_back(PoiRecord{x, y, label, source});
    };
    for (std::size_t c = 0; c < kThirdPlaceCategories; ++c) {
      const std::size_t richness = std::clamp<std::size_t>(profile.richness[c], 1, pools[c].size());
      const auto m = poi_rng.poisson(profile.intensity[c]);
      for (std::uint64_t p = 0; p < m; ++p) {
        const auto& l = pools[c][poi_rng.index(richness)];
        place(l.label, l.source);
      }
    }
    const auto extra = poi_rng.poisson(spec.non_third_place_rate);
    for (std::uint64_t p = 0; p < extra; ++p) place("parking", PoiSource::Amenity);
  }
  return truth;
}

/// Adjusted Rand index from the pair-counting contingency table. When both partitions are
/// trivial in the same way (expected index equals its maximum) the result is 1.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::LengthMismatch, "labelings differ in length");
  const auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, v] : joint) index += comb2(v);
  for (const auto& [key, v] : ra) sa += comb2(v);
  for (const auto& [key, v] : rb) sb += comb2(v);
  const double total = comb2(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

inline nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : s.poi_profiles) profiles.push_back({{"intensity", p.intensity}, {"richness", p.richness}});
  return {{"seed", s.seed},
          {"n_cells", s.n_cells},
          {"n_categories", s.n_categories},
          {"k_true", s.k_true},
          {"archetypes", s.archetypes},
          {"archetype_weights", s.archetype_weights},
          {"poi_profiles", profiles},
          {"noise_sigma", s.noise_sigma},
          {"base_level", s.base_level},
          {"amplitude", s.amplitude},
          {"n_days", s.n_days},
          {"day_type", std::string(to_string(s.day_type))},
          {"services_per_category", s.services_per_category},
          {"downlink_share", s.downlink_share},
          {"non_third_place_rate", s.non_third_place_rate},
          {"cell_size", s.cell_size},
          {"region_name", s.region_name}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.n_cells = j.value("n_cells", s.n_cells);
    s.n_categories = j.value("n_categories", s.n_categories);
    s.k_true = j.value("k_true", s.k_true);
    s.archetypes = j.value("archetypes", s.archetypes);
    s.archetype_weights = j.value("archetype_weights", s.archetype_weights);
    if (j.contains("poi_profiles"))
      for (const auto& p : j.at("poi_profiles")) {
        PoiProfile profile;
        profile.intensity = p.at("intensity").get<std::array<double, kThirdPlaceCategories>>();
        profile.richness = p.at("richness").get<std::array<std::size_t, kThirdPlaceCategories>>();
        s.poi_profiles.push_back(profile);
      }
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.base_level = j.value("base_level", s.base_level);
    s.amplitude = j.value("amplitude", s.amplitude);
    s.n_days = j.value("n_days", s.n_days);
    if (j.contains("day_type")) {
      const auto t = parse_day_type(j.at("day_type").get<std::string>());
      if (!t) throw Error(ErrorKind::InvalidSpec, "day_type must be weekday or weekend");
      s.day_type = *t;
    }
    s.services_per_category = j.value("services_per_category", s.services_per_category);
    s.downlink_share = j.value("downlink_share", s.downlink_share);
    s.non_third_place_rate = j.value("non_third_place_rate", s.non_third_place_rate);
    s.cell_size = j.value("cell_size", s.cell_size);
    s.region_name = j.value("region_name", s.region_name);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// Writes region.json, traffic.csv, pois.csv, services.csv, third_places.csv and truth.csv.
inline void write_synth_files(const SynthTruth& truth, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("region.json");
    out << region_to_json(truth.region).dump(2) << '\n';
  }
  {
    auto out = open("traffic.csv");
    write_traffic_header(out);
    for (const auto& r : truth.traffic) write_traffic_row(out, r);
  }
  {
    auto out = open("pois.csv");
    write_pois(out, truth.pois);
  }
  {
    auto out = open("services.csv");
    out << "service,category\n";
    for (const auto& s : truth.taxonomy.services())
      out << s << ',' << truth.taxonomy.categories()[*truth.taxonomy.category_of(s)] << '\n';
  }
  {
    auto out = open("third_places.csv");
    out << "label,category\n";
    for (const auto& [label, cat] : truth.third_place_labels)
      out << label << ',' << kThirdPlaceNames[static_cast<std::size_t>(cat)] << '\n';
  }
  {
    auto out = open("truth.csv");
    out << "col,row,archetype\n";
    for (std::size_t i = 0; i < truth.archetype_of_cell.size(); ++i)
      out << truth.region.active_cells[i].col << ',' << truth.region.active_cells[i].row << ','
          << truth.archetype_of_cell[i] << '\n';
  }
}

}  // namespace vibrancy
