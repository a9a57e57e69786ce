#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "vibrancy/features.hpp"

using namespace vibrancy;

namespace {

PoiRecord poi(double x, double y, const std::string& label, PoiSource s = PoiSource::Amenity) {
  return PoiRecord{x, y, label, s};
}

ThirdPlaceTaxonomy small_taxonomy() {
  std::istringstream in(
      "label,category\n"
      "restaurant,eating_and_drinking\n"
      "cafe,eating_and_drinking\n"
      "bar,eating_and_drinking\n"
      "park,outdoor\n"
      "bank,commercial_services\n"
      "cinema,organised_activities\n"
      "clothes,commercial_venues\n");
  return load_third_place_taxonomy(in);
}

CityRegion two_by_two() {
  CityRegion r;
  r.grid.cell_size = 100;
  r.grid.n_cols = 2;
  r.grid.n_rows = 2;
  r.grid.region_name = "tiny";
  r.active_cells = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  return r;
}

std::size_t idx_count(ThirdPlace c) { return 2 + static_cast<std::size_t>(c); }
std::size_t idx_div(ThirdPlace c) { return 2 + kThirdPlaceCategories + static_cast<std::size_t>(c); }

}  // namespace

TEST(RareLabels, ThresholdIsInclusive) {
  std::vector<PoiRecord> pois;
  for (int i = 0; i < 9; ++i) pois.push_back(poi(i, 0, "kiosk"));
  for (int i = 0; i < 10; ++i) pois.push_back(poi(i, 1, "cafe"));
  const auto kept = filter_rare_labels(pois, 10);
  ASSERT_EQ(kept.size(), 10u);
  for (const auto& p : kept) EXPECT_EQ(p.label, "cafe");
  EXPECT_TRUE(filter_rare_labels(std::vector<PoiRecord>{}, 10).empty());
  EXPECT_EQ(filter_rare_labels(kept, 10), kept);
}

TEST(RareLabelsProperties, SurvivorsAreFrequentAndOrderPreserved) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PoiRecord> pois;
    for (int i = 0; i < 300; ++i) pois.push_back(poi(i, trial, "l" + std::to_string(gen() % 40)));
    const auto kept = filter_rare_labels(pois, 10);
    std::map<std::string, int> freq;
    for (const auto& p : pois) ++freq[p.label];
    std::size_t j = 0;
    for (const auto& p : pois) {
      if (freq[p.label] < 10) continue;
      ASSERT_LT(j, kept.size());
      EXPECT_EQ(kept[j++], p);
    }
    EXPECT_EQ(j, kept.size());
    EXPECT_EQ(filter_rare_labels(kept, 10), kept);
  }
}

TEST(Shannon, Examples) {
  EXPECT_EQ(shannon_diversity(std::map<std::string, std::size_t>{{"restaurant", 5}}), 0.0);
  EXPECT_DOUBLE_EQ(shannon_diversity(std::map<std::string, std::size_t>{{"a", 1}, {"b", 1}}), 1.0);
  EXPECT_DOUBLE_EQ(shannon_diversity(std::map<std::string, std::size_t>{{"a", 2}, {"b", 1}, {"c", 1}}), 1.5);
  EXPECT_EQ(shannon_diversity(std::vector<double>{}), 0.0);
  EXPECT_EQ(shannon_diversity(std::vector<double>{0, 0, 0}), 0.0);
}

TEST(ShannonProperties, BoundsMaximumAndInvariances) {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + gen() % 12;
    std::vector<double> counts(m);
    for (auto& c : counts) c = static_cast<double>(gen() % 20);
    const double h = shannon_diversity(counts);
    std::size_t present = 0;
    for (double c : counts) present += c > 0;
    EXPECT_GE(h, 0.0);
    if (present > 0) {
      EXPECT_LE(h, std::log2(static_cast<double>(present)) + 1e-12);
    }
    EXPECT_NEAR(h, oracle::shannon_bits(counts), 1e-12);

    auto shuffled = counts;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    EXPECT_NEAR(shannon_diversity(shuffled), h, 1e-12);
    auto scaled = counts;
    for (auto& c : scaled) c *= 7;
    EXPECT_NEAR(shannon_diversity(scaled), h, 1e-12);

    const std::vector<double> uniform(m, 3.0);
    EXPECT_NEAR(shannon_diversity(uniform), std::log2(static_cast<double>(m)), 1e-12);
  }
}

TEST(Features, CellExample) {
  const auto region = two_by_two();
  const std::vector<PoiRecord> pois = {poi(10, 10, "restaurant"), poi(20, 20, "restaurant"), poi(30, 30, "cafe"),
                                       poi(40, 40, "park", PoiSource::Leisure), poi(50, 50, "parking"),
                                       poi(150, 50, "parking"), poi(999, 999, "cafe")};
  FeatureStats stats;
  const auto t = build_features(pois, small_taxonomy(), region, &stats);
  ASSERT_EQ(t.rows(), 4u);
  EXPECT_EQ(t.at(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(t.at(0, 1), 1.5);
  EXPECT_EQ(t.at(0, idx_count(ThirdPlace::EatingAndDrinking)), 3.0);
  EXPECT_NEAR(t.at(0, idx_div(ThirdPlace::EatingAndDrinking)), 0.9183, 1e-4);
  EXPECT_NEAR(t.at(0, idx_div(ThirdPlace::EatingAndDrinking)), oracle::shannon_bits({2, 1}), 1e-12);
  EXPECT_EQ(t.at(0, idx_count(ThirdPlace::Outdoor)), 1.0);
  EXPECT_EQ(t.at(0, idx_div(ThirdPlace::Outdoor)), 0.0);
  // Cell (1,0) holds only a non-third-place POI; the others are empty.
  for (std::size_t i = 1; i < 4; ++i)
    for (double v : t.row(i)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(stats.pois_in_cells, 4u);
  EXPECT_EQ(stats.non_third_place, 2u);
  EXPECT_EQ(stats.pois_outside, 1u);
  EXPECT_EQ(covariate_names().size(), kCovariates);
  EXPECT_EQ(kCovariates, 12u);
}

TEST(FeaturesProperties, TotalsAndDiversityBounds) {
  const auto truth = generate(support::spec(4, 200, 3, 0.1));
  ThirdPlaceTaxonomy places;
  for (const auto& [label, cat] : truth.third_place_labels) places.add(label, cat);
  const auto t = build_features(truth.pois, places, truth.region);
  ASSERT_EQ(t.rows(), 200u);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double sum = 0;
    for (std::size_t c = 0; c < kThirdPlaceCategories; ++c) sum += t.at(i, 2 + c);
    EXPECT_EQ(t.at(i, 0), sum);
    for (std::size_t c = 0; c < kThirdPlaceCategories; ++c) {
      const double n = t.at(i, 2 + c), h = t.at(i, 2 + kThirdPlaceCategories + c);
      EXPECT_GE(h, 0.0);
      if (n <= 1) {
        EXPECT_EQ(h, 0.0);
      } else {
        EXPECT_LE(h, std::log2(std::min(n, 8.0)) + 1e-12);
      }
    }
  }
}

TEST(Features, PlacementIsIndependentOfInputOrder) {
  const auto truth = generate(support::spec(6, 100, 3, 0.1));
  ThirdPlaceTaxonomy places;
  for (const auto& [label, cat] : truth.third_place_labels) places.add(label, cat);
  auto shuffled = truth.pois;
  std::mt19937_64 gen(1);
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  EXPECT_EQ(build_features(truth.pois, places, truth.region).values,
            build_features(shuffled, places, truth.region).values);
}

TEST(ZScore, Examples) {
  EXPECT_EQ(zscore(std::vector<double>{0, 2}), (std::vector<double>{-1, 1}));
  EXPECT_EQ(zscore(std::vector<double>{3, 3, 3}), (std::vector<double>{0, 0, 0}));
  const auto z = zscore(std::vector<double>{1, 2, 3, 4});
  EXPECT_NEAR(z[0], -1.3416, 1e-4);
  EXPECT_NEAR(z[1], -0.4472, 1e-4);
  EXPECT_NEAR(z[2], 0.4472, 1e-4);
  EXPECT_NEAR(z[3], 1.3416, 1e-4);
}

TEST(ZScoreProperties, ZeroMeanUnitVariance) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> dist(5, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> col(2 + gen() % 100);
    for (auto& v : col) v = dist(gen);
    const auto z = zscore(col);
    double mean = 0, var = 0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(z.size());
    for (double v : z) var += (v - mean) * (v - mean);
    var /= static_cast<double>(z.size());
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
}

TEST(Standardize, TooFewRows) {
  FeatureTable t;
  t.regions = {"x"};
  t.cells = {LocatedCell{0, {0, 0}}};
  t.values.assign(kCovariates, 1.0);
  try {
    standardize(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooFewRows);
  }
  t.cells.push_back(LocatedCell{0, {1, 0}});
  t.values.assign(2 * kCovariates, 3.0);
  t.values[0] = 0;
  const auto s = standardize(t);
  EXPECT_TRUE(s.standardized);
  EXPECT_EQ(s.at(0, 0), -1.0);
  EXPECT_EQ(s.at(1, 0), 1.0);
  EXPECT_EQ(s.at(0, 1), 0.0);
}

TEST(FeaturesCsv, RoundTrip) {
  const auto truth = generate(support::spec(8, 50, 3, 0.1));
  ThirdPlaceTaxonomy places;
  for (const auto& [label, cat] : truth.third_place_labels) places.add(label, cat);
  const auto t = standardize(build_features(truth.pois, places, truth.region));
  std::stringstream buf;
  write_features_csv(buf, t);
  const auto back = read_features_csv(buf, "synth");
  ASSERT_EQ(back.rows(), t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) EXPECT_EQ(back.cells[i].cell, t.cells[i].cell);
  EXPECT_EQ(back.values, t.values);

  std::istringstream bad("col,row,x\n");
  EXPECT_THROW(read_features_csv(bad, "r"), Error);
}

TEST(ThirdPlaces, TaxonomyLoading) {
  const auto t = small_taxonomy();
  EXPECT_EQ(t.size(), 7u);
  EXPECT_EQ(t.category_of("park"), ThirdPlace::Outdoor);
  EXPECT_FALSE(t.category_of("parking").has_value());
  EXPECT_EQ(parse_third_place("Eating & Drinking"), ThirdPlace::EatingAndDrinking);
  EXPECT_EQ(parse_third_place("nightlife"), std::nullopt);
  EXPECT_EQ(parse_third_place("eating-and-drinking"), ThirdPlace::EatingAndDrinking);
  EXPECT_EQ(parse_third_place("Organized Activities"), ThirdPlace::OrganisedActivities);

  std::istringstream dup("label,category\ncafe,outdoor\ncafe,outdoor\n");
  EXPECT_THROW(load_third_place_taxonomy(dup), Error);
  std::istringstream unknown("label,category\ncafe,nightlife\n");
  try {
    load_third_place_taxonomy(unknown);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownCategory);
  }

  const auto shipped = load_third_place_taxonomy(std::string(VIBRANCY_SOURCE_DIR) + "/configs/third_places_example.csv");
  std::set<ThirdPlace> seen;
  for (const auto& name : {"restaurant", "park", "bank", "cinema", "clothes"})
    if (auto cat = shipped.category_of(name)) seen.insert(*cat);
  EXPECT_EQ(seen.size(), kThirdPlaceCategories);
}
