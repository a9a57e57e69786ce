#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "vibrancy/features.hpp"
#include "vibrancy/hash.hpp"
#include "vibrancy/synth.hpp"

using namespace vibrancy;

TEST(Synth, NoiselessPlantIsReproducedBySignatures) {
  for (std::size_t days : {1u, 3u}) {
    auto spec = support::spec(2, 10, 2, 0.0);
    spec.n_days = days;
    const auto truth = generate(spec);
    SignatureOptions opt;
    opt.mean_per_day = true;
    const auto t = build_signatures(truth.traffic, truth.taxonomy, truth.region, spec.day_type, opt);
    ASSERT_EQ(t.cells.size(), 10u);
    const std::size_t row = kBins * spec.n_categories;
    for (std::size_t i = 0; i < 10; ++i) {
      const auto a = static_cast<std::size_t>(truth.archetype_of_cell[i] - 1);
      const auto r = t.row(i);
      for (std::size_t j = 0; j < row; ++j)
        ASSERT_NEAR(r[j], truth.archetypes[a * row + j], 1e-9) << "cell " << i << " entry " << j;
    }
  }
}

TEST(Synth, NoisyPlantMatchesStoredAggregates) {
  auto spec = support::spec(3, 40, 3, 0.5);
  spec.day_type = DayType::Weekend;
  const auto truth = generate(spec);
  const auto t = build_signatures(truth.traffic, truth.taxonomy, truth.region, DayType::Weekend);
  for (std::size_t i = 0; i < t.values.size(); ++i) ASSERT_NEAR(t.values[i], truth.planted[i], 1e-9);
  for (double v : truth.planted) ASSERT_GE(v, 0.0);
}

TEST(Synth, ArchetypeSharesFollowWeights) {
  auto spec = support::spec(4, 100, 3, 0.1);
  spec.archetype_weights = {0.5, 0.3, 0.2};
  const auto truth = generate(spec);
  std::map<int, int> count;
  for (int a : truth.archetype_of_cell) ++count[a];
  EXPECT_EQ(count[1], 50);
  EXPECT_EQ(count[2], 30);
  EXPECT_EQ(count[3], 20);
  EXPECT_GT(truth.separation_ratio, 10.0);
}

TEST(Synth, SameSpecGivesIdenticalFiles) {
  const auto spec = support::spec(11, 30, 3, 0.2);
  const auto a = support::temp_dir("synth_a"), b = support::temp_dir("synth_b");
  write_synth_files(generate(spec), a);
  write_synth_files(generate(spec), b);
  for (const auto* name : {"region.json", "traffic.csv", "pois.csv", "services.csv", "third_places.csv", "truth.csv"})
    EXPECT_EQ(sha256_file(a / name), sha256_file(b / name)) << name;
  auto other = spec;
  other.seed = 12;
  write_synth_files(generate(other), b);
  EXPECT_NE(sha256_file(a / "traffic.csv"), sha256_file(b / "traffic.csv"));
}

TEST(Synth, FilesParseBackThroughIngest) {
  const auto spec = support::spec(13, 20, 2, 0.2);
  const auto truth = generate(spec);
  const auto dir = support::temp_dir("synth_ingest");
  write_synth_files(truth, dir);
  const auto region = load_region((dir / "region.json").string());
  std::ifstream traffic(dir / "traffic.csv");
  const auto parsed = parse_traffic(traffic, region.grid);
  EXPECT_EQ(parsed.rejected(), 0u);
  EXPECT_EQ(parsed.records.size(), truth.traffic.size());
  std::ifstream pois(dir / "pois.csv");
  EXPECT_EQ(parse_pois(pois).records, truth.pois);
}

TEST(Synth, PoiCountsMatchIntensity) {
  auto spec = support::spec(21, 3000, 2, 0.1);
  spec.poi_profiles.resize(2);
  spec.poi_profiles[0].intensity = {0.5, 1.0, 2.0, 4.0, 0.0};
  spec.poi_profiles[1].intensity = {3.0, 3.0, 0.2, 1.5, 6.0};
  const auto truth = generate(spec);
  ThirdPlaceTaxonomy places;
  for (const auto& [label, cat] : truth.third_place_labels) places.add(label, cat);
  const auto t = build_features(truth.pois, places, truth.region);
  for (int a = 1; a <= 2; ++a) {
    const auto& profile = spec.poi_profiles[static_cast<std::size_t>(a - 1)];
    for (std::size_t c = 0; c < kThirdPlaceCategories; ++c) {
      double sum = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < t.rows(); ++i)
        if (truth.archetype_of_cell[i] == a) {
          sum += t.at(i, 2 + c);
          ++n;
        }
      const double lambda = profile.intensity[c];
      EXPECT_NEAR(sum / static_cast<double>(n), lambda, 3 * std::sqrt(lambda / static_cast<double>(n)) + 1e-12)
          << "archetype " << a << " category " << c;
    }
  }
}

TEST(Synth, InvalidSpecs) {
  const auto expect_invalid = [](SynthSpec s) {
    try {
      generate(s);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidSpec);
    }
  };
  auto s = support::spec(1, 10, 1, 0.1);
  expect_invalid(s);
  s = support::spec(1, 2, 3, 0.1);
  expect_invalid(s);
  s = support::spec(1, 10, 2, -1.0);
  expect_invalid(s);
  s = support::spec(1, 10, 2, 0.1);
  s.archetype_weights = {1.0};
  expect_invalid(s);
  s.archetype_weights = {1.0, 0.0};
  expect_invalid(s);
  s = support::spec(1, 10, 2, 0.1);
  s.archetypes = {1.0, 2.0};
  expect_invalid(s);
}

TEST(Synth, SpecJsonRoundTrip) {
  auto s = support::spec(5, 77, 4, 0.3);
  s.archetype_weights = {1, 2, 3, 4};
  s.poi_profiles.resize(4);
  s.poi_profiles[2].richness = {2, 2, 2, 2, 2};
  s.day_type = DayType::Weekend;
  const auto back = synth_spec_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_THROW(synth_spec_from_json(nlohmann::json{{"k_true", "three"}}), Error);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json{{"day_type", "holiday"}}), Error);
}

TEST(Ari, Examples) {
  EXPECT_EQ(adjusted_rand_index(std::vector<int>{1, 2, 3, 1}, std::vector<int>{1, 2, 3, 1}), 1.0);
  EXPECT_NEAR(adjusted_rand_index(std::vector<int>{1, 1, 1, 1}, std::vector<int>{1, 1, 2, 2}), 0.0, 1e-15);
  EXPECT_EQ(adjusted_rand_index(std::vector<int>{1, 1, 2, 2}, std::vector<int>{2, 2, 1, 1}), 1.0);
  try {
    adjusted_rand_index(std::vector<int>{1}, std::vector<int>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LengthMismatch);
  }
}

TEST(AriProperties, SymmetricPermutationInvariantAndMatchesOracle) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + gen() % 60;
    const int ka = 1 + static_cast<int>(gen() % 5), kb = 1 + static_cast<int>(gen() % 5);
    std::vector<int> a(n), b(n);
    for (auto& v : a) v = 1 + static_cast<int>(gen() % static_cast<unsigned>(ka));
    for (auto& v : b) v = 1 + static_cast<int>(gen() % static_cast<unsigned>(kb));
    const double ab = adjusted_rand_index(a, b);
    EXPECT_NEAR(ab, adjusted_rand_index(b, a), 1e-12);
    EXPECT_NEAR(ab, oracle::ari(a, b), 1e-9);
    EXPECT_LE(ab, 1.0 + 1e-12);
    auto renamed = a;
    for (auto& v : renamed) v = 100 - v * 7;
    EXPECT_NEAR(adjusted_rand_index(renamed, b), ab, 1e-12);
  }
}
