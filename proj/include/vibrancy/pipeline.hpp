#pragma once

// Pipeline stages shared by the CLI subcommands and `run`: each stage reads its inputs from
// files or memory and writes its artifacts into a directory, so chaining the subcommands and
// calling `run` produce the same bytes.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "vibrancy/clustering.hpp"
#include "vibrancy/error.hpp"
#include "vibrancy/features.hpp"
#include "vibrancy/grid.hpp"
#include "vibrancy/hash.hpp"
#include "vibrancy/ingest.hpp"
#include "vibrancy/model.hpp"
#include "vibrancy/signatures.hpp"
#include "vibrancy/synth.hpp"
#include "vibrancy/text.hpp"

namespace vibrancy::pipeline {

namespace fs = std::filesystem;

inline constexpr std::string_view kVersion = "1.0.0";

enum class Level { Local, Global };

inline std::string_view to_string(Level l) { return l == Level::Local ? "local" : "global"; }

inline std::optional<Level> parse_level(std::string_view s) {
  const auto v = text::lower(text::trim(s));
  if (v == "local") return Level::Local;
  if (v == "global") return Level::Global;
  return std::nullopt;
}

// ---------------------------------------------------------------------------------------
// file helpers

inline void write_text(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedLine, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// File-name-safe version of a region name.
inline std::string slug(std::string_view name) {
  std::string out;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? "region" : out;
}

// ---------------------------------------------------------------------------------------
// labels CSV: col,row,cluster

struct CellLabels {
  std::vector<CellId> cells;
  std::vector<int> labels;
};

inline std::string labels_csv(const CellLabels& l, std::string_view value_name = "cluster") {
  std::string out = "col,row," + std::string(value_name) + "\n";
  for (std::size_t i = 0; i < l.cells.size(); ++i)
    out += std::to_string(l.cells[i].col) + ',' + std::to_string(l.cells[i].row) + ',' + std::to_string(l.labels[i]) + '\n';
  return out;
}

inline CellLabels read_labels_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  CellLabels l;
  std::string line;
  std::size_t line_no = 0;
  if (!text::next_nonblank_line(in, line, line_no)) throw Error(ErrorKind::EmptyInput, path.string() + " is empty");
  const auto header = text::split_csv(line);
  if (!header || header->size() != 3 || (*header)[0] != "col" || (*header)[1] != "row")
    throw Error(ErrorKind::MalformedHeader, path.string() + ": expected col,row,<label>");
  while (text::next_nonblank_line(in, line, line_no)) {
    const auto f = text::split_csv(line);
    std::optional<std::int64_t> c, r, v;
    if (f && f->size() == 3) {
      c = text::parse_int((*f)[0]);
      r = text::parse_int((*f)[1]);
      v = text::parse_int((*f)[2]);
    }
    if (!c || !r || !v) throw Error(ErrorKind::MalformedLine, path.string() + " line " + std::to_string(line_no));
    l.cells.push_back(CellId{static_cast<std::int32_t>(*c), static_cast<std::int32_t>(*r)});
    l.labels.push_back(static_cast<int>(*v));
  }
  return l;
}

// ---------------------------------------------------------------------------------------
// stage: signatures

inline std::string signatures_file(const std::string& region) { return "signatures_" + slug(region) + ".bin"; }

/// Parses one region's traffic file and writes its raw tensor plus a JSON sidecar of counts.
inline SignatureTensor stage_signatures(const CityRegion& region, const fs::path& traffic_path,
                                        const ServiceTaxonomy& taxonomy, DayType day_type,
                                        const SignatureOptions& options, const fs::path& out_dir) {
  auto in = open_input(traffic_path.string(), "traffic");
  const auto parsed = parse_traffic(in, region.grid);
  SignatureStats stats;
  auto tensor = build_signatures(parsed.records, taxonomy, region, day_type, options, &stats);

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / signatures_file(region.name()), std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write tensor to " + out_dir.string());
    write_tensor(out, tensor);
  }
  std::map<std::string, std::size_t> reject_kinds;
  for (const auto& r : parsed.rejections) ++reject_kinds[std::string(vibrancy::to_string(r.kind))];
  const auto check = check_region_consistency(region);
  write_json(out_dir / ("signatures_" + slug(region.name()) + ".json"),
             {{"region", region.name()},
              {"day_type", std::string(vibrancy::to_string(day_type))},
              {"data_lines", parsed.data_lines},
              {"rejected_lines", parsed.rejected()},
              {"rejections_by_kind", reject_kinds},
              {"records_used", stats.records_used},
              {"records_other_day_type", stats.records_other_day_type},
              {"records_outside_region", stats.records_outside_region},
              {"days", stats.days},
              {"silent_cells", stats.silent_cells},
              {"cells", tensor.n()},
              {"categories", tensor.categories},
              {"mean_per_day", options.mean_per_day},
              {"drop_silent_cells", options.drop_silent_cells},
              {"region_check",
               {{"computed_area_km2", check.computed_area_km2},
                {"declared_area_km2", check.has_declared ? nlohmann::json(check.declared_area_km2) : nlohmann::json()},
                {"relative_error", check.relative_error},
                {"pass", check.pass}}}});
  return tensor;
}

inline SignatureTensor load_tensor_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open tensor " + path.string());
  return read_tensor(in).tensor;
}

// ---------------------------------------------------------------------------------------
// stage: cluster

struct ClusterStageOptions {
  SelectKOptions select;
  double rr_cap = 1e6;
};

struct ClusterStageResult {
  NormalizedTensor normalized;
  ClusterModel model;
  KSelectionReport report;
  std::map<std::string, double> ari;  // region -> ARI against planted truth
};

/// Relative risk over the (concatenated) tensors, k selection, size ordering, and per-region
/// label maps. `regions` supplies grids for GeoJSON output; `truth` maps region -> truth CSV.
inline ClusterStageResult stage_cluster(std::span<const SignatureTensor> tensors, std::span<const CityRegion> regions,
                                        const std::map<std::string, fs::path>& truth,
                                        const ClusterStageOptions& options, const fs::path& out_dir) {
  const SignatureTensor combined = tensors.size() == 1 ? tensors.front() : concat_tensors(tensors);
  ClusterStageResult result;
  result.normalized = relative_risk(combined, options.rr_cap);
  auto [model, report] = select_k(result.normalized.view(), options.select);
  result.model = std::move(model);
  result.report = std::move(report);

  fs::create_directories(out_dir);
  const auto& t = result.normalized.tensor;
  {
    std::ofstream out(out_dir / "normalized.bin", std::ios::binary);
    write_tensor(out, t, true);
  }
  nlohmann::json flagged = nlohmann::json::array();
  for (const auto& [b, d] : result.normalized.flagged_columns) flagged.push_back({{"bin", b}, {"category", t.categories[d]}});
  write_json(out_dir / "normalization.json", {{"method", "relative_risk"},
                                              {"cap", result.normalized.cap},
                                              {"capped_entries", result.normalized.capped_entries},
                                              {"flagged_columns", flagged},
                                              {"locations", t.n()},
                                              {"regions", t.regions}});
  {
    std::ofstream out(out_dir / "cluster_model.bin", std::ios::binary);
    write_cluster_model(out, result.model, t.day_type, t.categories);
  }
  write_json(out_dir / "k_selection.json", to_json(result.report));

  // Plot-ready centroid curves: raw relative-risk value and min-max scaled per category.
  std::string centroids = "cluster,bin,category,value,scaled\n";
  const std::size_t D = t.depth();
  for (std::size_t c = 1; c <= result.model.k; ++c) {
    const auto centroid = result.model.centroid(static_cast<int>(c));
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<double> series(kBins);
      for (std::size_t b = 0; b < kBins; ++b) series[b] = centroid[b * D + d];
      const auto scaled = minmax_scale(series);
      for (std::size_t b = 0; b < kBins; ++b)
        centroids += std::to_string(c) + ',' + std::to_string(b) + ',' + text::csv_escape(t.categories[d]) + ',' +
                     text::format_double(series[b]) + ',' + text::format_double(scaled[b]) + '\n';
    }
  }
  write_text(out_dir / "centroids.csv", centroids);

  nlohmann::json ari = nlohmann::json::object();
  for (std::uint32_t r = 0; r < t.regions.size(); ++r) {
    CellLabels slice;
    for (std::size_t i = 0; i < t.n(); ++i) {
      if (t.cells[i].region != r) continue;
      slice.cells.push_back(t.cells[i].cell);
      slice.labels.push_back(result.model.labels[i]);
    }
    const std::string name = slug(t.regions[r]);
    write_text(out_dir / ("labels_" + name + ".csv"), labels_csv(slice));
    const auto grid = std::find_if(regions.begin(), regions.end(),
                                   [&](const CityRegion& reg) { return reg.name() == t.regions[r]; });
    if (grid != regions.end())
      write_text(out_dir / ("labels_" + name + ".geojson"), cells_geojson(grid->grid, slice.cells, slice.labels, "cluster"));
    if (const auto tp = truth.find(t.regions[r]); tp != truth.end()) {
      const auto planted = read_labels_csv(tp->second);
      std::map<CellId, int> lookup;
      for (std::size_t i = 0; i < planted.cells.size(); ++i) lookup[planted.cells[i]] = planted.labels[i];
      std::vector<int> a, b;
      for (std::size_t i = 0; i < slice.cells.size(); ++i) {
        if (const auto it = lookup.find(slice.cells[i]); it != lookup.end()) {
          a.push_back(slice.labels[i]);
          b.push_back(it->second);
        }
      }
      result.ari[t.regions[r]] = adjusted_rand_index(a, b);
      ari[t.regions[r]] = result.ari[t.regions[r]];
    }
  }
  if (!result.ari.empty()) write_json(out_dir / "truth_ari.json", ari);
  return result;
}

// ---------------------------------------------------------------------------------------
// stage: features

inline std::string features_file(const std::string& region) { return "features_" + slug(region) + ".csv"; }

/// Rare-label filtering pooled over every given region, then per-region covariates.
inline std::vector<FeatureTable> stage_features(std::span<const CityRegion> regions, std::span<const fs::path> poi_paths,
                                                const ThirdPlaceTaxonomy& taxonomy, std::size_t min_label_count,
                                                const fs::path& out_dir) {
  if (regions.size() != poi_paths.size()) throw Error(ErrorKind::InvalidArgument, "one POI file per region required");
  std::vector<std::vector<PoiRecord>> per_region;
  std::vector<PoiRecord> pooled;
  nlohmann::json stats = nlohmann::json::object();
  for (std::size_t r = 0; r < regions.size(); ++r) {
    auto in = open_input(poi_paths[r].string(), "POI");
    auto parsed = parse_pois(in);
    stats[regions[r].name()] = {{"data_lines", parsed.data_lines}, {"rejected_lines", parsed.rejected()}};
    pooled.insert(pooled.end(), parsed.records.begin(), parsed.records.end());
    per_region.push_back(std::move(parsed.records));
  }
  const auto kept = filter_rare_labels(pooled, min_label_count);
  std::map<std::string, std::size_t> freq;
  for (const auto& p : kept) ++freq[p.label];

  fs::create_directories(out_dir);
  std::vector<FeatureTable> tables;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    std::vector<PoiRecord> filtered;
    for (const auto& p : per_region[r])
      if (freq.contains(p.label)) filtered.push_back(p);
    FeatureStats fstats;
    auto table = build_features(filtered, taxonomy, regions[r], &fstats);
    std::ostringstream out;
    write_features_csv(out, table);
    write_text(out_dir / features_file(regions[r].name()), out.str());
    auto& s = stats[regions[r].name()];
    s["kept_after_rare_filter"] = filtered.size();
    s["third_place_in_cells"] = fstats.pois_in_cells;
    s["outside_region"] = fstats.pois_outside;
    s["non_third_place"] = fstats.non_third_place;
    tables.push_back(std::move(table));
  }
  write_json(out_dir / "features_stats.json", {{"min_label_count", min_label_count},
                                               {"rare_filter_scope", regions.size() > 1 ? "pooled" : "region"},
                                               {"labels_kept", freq.size()},
                                               {"regions", stats}});
  return tables;
}

// ---------------------------------------------------------------------------------------
// stage: fit

struct FitInput {
  std::string region;
  fs::path features;
  fs::path labels;
};

struct FitStageOptions {
  double lambda = 1.0;
  bool standardize = true;
  double holdout = 0.0;
  std::uint64_t seed = 0;
  double tol = 1e-8;
  std::size_t max_iter = 5000;
};

struct FitStageResult {
  MultinomialLogit model;
  MetricsReport metrics;
  std::size_t n_rows = 0;
  std::size_t n_eval = 0;
};

/// Joins covariates and cluster labels on (col, row), fits the regularized multinomial
/// logit and evaluates it (on training rows, or on a seeded holdout when requested).
inline FitStageResult stage_fit(std::span<const FitInput> inputs, const FitStageOptions& options, const fs::path& out_dir) {
  FeatureTable joined;
  std::vector<int> y;
  for (const auto& in : inputs) {
    std::ifstream fin(in.features, std::ios::binary);
    if (!fin) throw Error(ErrorKind::Io, "cannot open features " + in.features.string());
    const auto table = read_features_csv(fin, in.region);
    const auto labels = read_labels_csv(in.labels);
    std::map<CellId, int> lookup;
    for (std::size_t i = 0; i < labels.cells.size(); ++i) lookup[labels.cells[i]] = labels.labels[i];
    const auto region_index = static_cast<std::uint32_t>(joined.regions.size());
    joined.regions.push_back(in.region);
    for (std::size_t i = 0; i < table.rows(); ++i) {
      const auto it = lookup.find(table.cells[i].cell);
      if (it == lookup.end()) continue;
      joined.cells.push_back(LocatedCell{region_index, table.cells[i].cell});
      const auto row = table.row(i);
      joined.values.insert(joined.values.end(), row.begin(), row.end());
      y.push_back(it->second);
    }
  }
  if (joined.rows() == 0) throw Error(ErrorKind::EmptyInput, "no cells shared by features and labels");
  const FeatureTable X = options.standardize ? standardize(joined) : joined;

  FitStageResult result;
  result.n_rows = X.rows();
  FitOptions fopt;
  fopt.lambda = options.lambda;
  fopt.tol = options.tol;
  fopt.max_iter = options.max_iter;

  std::vector<std::size_t> train(X.rows()), eval;
  std::iota(train.begin(), train.end(), 0);
  if (options.holdout > 0.0) std::tie(train, eval) = holdout_split(X.rows(), options.holdout, options.seed);
  else eval = train;

  const auto gather = [&](const std::vector<std::size_t>& idx, std::vector<double>& vals, std::vector<int>& labels) {
    for (auto i : idx) {
      const auto row = X.row(i);
      vals.insert(vals.end(), row.begin(), row.end());
      labels.push_back(y[i]);
    }
  };
  std::vector<double> train_x, eval_x;
  std::vector<int> train_y, eval_y;
  gather(train, train_x, train_y);
  gather(eval, eval_x, eval_y);
  result.model = fit(MatrixView{train_x, train.size(), kCovariates}, train_y, covariate_names(), fopt);
  result.model.standardized = options.standardize;
  const auto predicted = predict_all(result.model, MatrixView{eval_x, eval.size(), kCovariates});
  const std::set<int> all_classes(y.begin(), y.end());
  const std::vector<int> class_set(all_classes.begin(), all_classes.end());
  result.metrics = evaluate(eval_y, predicted, class_set);
  result.n_eval = eval.size();

  fs::create_directories(out_dir);
  auto model_json = to_json(result.model);
  model_json["regions"] = joined.regions;
  model_json["rows"] = result.n_rows;
  write_json(out_dir / "logit.json", model_json);
  write_text(out_dir / "coefficients.csv", coefficient_table(result.model));
  auto metrics_json = to_json(result.metrics);
  metrics_json["evaluated_on"] = options.holdout > 0.0 ? "holdout" : "training";
  metrics_json["holdout_fraction"] = options.holdout;
  write_json(out_dir / "metrics.json", metrics_json);
  write_text(out_dir / "metrics_per_class.csv", metrics_csv(result.metrics));
  return result;
}

// ---------------------------------------------------------------------------------------
// stage: report

/// Re-emits the saved tables of a unit directory as Markdown (written to report.md).
inline std::string stage_report(const fs::path& dir) {
  std::ostringstream md;
  md << "# Run report: " << dir.filename().string() << "\n\n";
  if (fs::exists(dir / "k_selection.json")) {
    const auto ks = k_selection_from_json(read_json(dir / "k_selection.json"));
    md << "## Cluster count selection\n\n| k | silhouette | inertia |\n|---|---|---|\n";
    for (const auto& s : ks.scores)
      md << "| " << s.k << " | " << text::format_double(s.silhouette) << " | " << text::format_double(s.inertia) << " |\n";
    md << "\nChosen k: " << ks.chosen_k << " (" << ks.tie_break << ")\n\n";
  }
  if (fs::exists(dir / "truth_ari.json")) {
    md << "## Agreement with planted truth\n\n";
    const auto ari = read_json(dir / "truth_ari.json");
    for (const auto& [region, v] : ari.items())
      md << "- " << region << ": ARI " << text::format_double(v.get<double>()) << "\n";
    md << "\n";
  }
  if (fs::exists(dir / "metrics.json")) {
    const auto j = read_json(dir / "metrics.json");
    const auto m = metrics_from_json(j);
    md << "## Model performance (" << j.value("evaluated_on", std::string("training")) << ")\n\n"
       << "- accuracy: " << text::format_double(m.accuracy) << "\n"
       << "- macro F1: " << text::format_double(m.macro_f1) << "\n"
       << "- weighted F1: " << text::format_double(m.weighted_f1) << "\n\n"
       << "| class | precision | recall | F1 | support |\n|---|---|---|---|---|\n";
    for (const auto& c : m.per_class)
      md << "| " << c.label << " | " << text::format_double(c.precision) << " | " << text::format_double(c.recall)
         << " | " << text::format_double(c.f1) << " | " << c.support << " |\n";
    md << "\n";
  }
  if (fs::exists(dir / "logit.json")) {
    const auto model = logit_from_json(read_json(dir / "logit.json"));
    md << "## Coefficients (lambda " << text::format_double(model.lambda)
       << (model.standardized ? ", standardized covariates" : ", raw covariates") << ")\n\n| covariate |";
    for (int c : model.classes) md << " cluster " << c << " |";
    md << "\n|---|";
    for (std::size_t c = 0; c < model.n_classes(); ++c) md << "---|";
    md << "\n";
    for (std::size_t j = 0; j < model.n_features(); ++j) {
      md << "| " << model.covariates[j] << " |";
      for (std::size_t c = 0; c < model.n_classes(); ++c) md << ' ' << text::format_double(model.weight(c, j)) << " |";
      md << "\n";
    }
    if (!model.convergence.converged) md << "\nWARNING: the fit did not converge.\n";
  }
  const std::string report = md.str();
  write_text(dir / "report.md", report);
  return report;
}

// ---------------------------------------------------------------------------------------
// config

struct CityInput {
  std::string name;
  fs::path region;
  fs::path traffic;
  fs::path pois;
  fs::path truth;  // optional planted labels (synthetic data)
};

struct PipelineConfig {
  std::vector<CityInput> cities;
  fs::path service_taxonomy;
  fs::path third_place_taxonomy;
  std::vector<DayType> day_types{DayType::Weekday, DayType::Weekend};
  std::vector<Level> levels{Level::Local};
  std::size_t k_min = 3;
  std::size_t k_max = 10;
  std::uint64_t seed = 42;
  std::size_t restarts = 10;
  std::size_t silhouette_sample = 0;
  std::size_t kmeans_max_iter = 300;
  double lambda = 1.0;
  bool standardize = true;
  double holdout = 0.0;
  double fit_tol = 1e-8;
  std::size_t fit_max_iter = 5000;
  double rr_cap = 1e6;
  bool drop_silent_cells = false;
  bool mean_per_day = false;
  std::size_t min_label_count = 10;

  void validate() const {
    if (cities.empty()) throw Error(ErrorKind::InvalidArgument, "config lists no cities");
    if (day_types.empty() || levels.empty()) throw Error(ErrorKind::InvalidArgument, "need a day type and a level");
    if (k_min < 2 || k_min > k_max) throw Error(ErrorKind::InvalidArgument, "k range must satisfy 2 <= k_min <= k_max");
    if (holdout < 0.0 || holdout >= 1.0) throw Error(ErrorKind::InvalidArgument, "holdout must be in [0, 1)");
    const auto need = [](const fs::path& p, const std::string& what) {
      if (p.empty()) throw Error(ErrorKind::InvalidArgument, what + " not set");
      if (!fs::exists(p)) throw Error(ErrorKind::Io, what + " file not found: " + p.string());
    };
    need(service_taxonomy, "service_taxonomy");
    need(third_place_taxonomy, "third_place_taxonomy");
    for (const auto& c : cities) {
      need(c.region, "city." + c.name + ".region");
      need(c.traffic, "city." + c.name + ".traffic");
      need(c.pois, "city." + c.name + ".pois");
      if (!c.truth.empty()) need(c.truth, "city." + c.name + ".truth");
    }
  }
};

namespace config_detail {

inline std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      out.emplace_back(text::trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!text::trim(cur).empty()) out.emplace_back(text::trim(cur));
  return out;
}

inline bool parse_bool(const std::string& key, std::string_view v) {
  const auto s = text::lower(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error(ErrorKind::InvalidArgument, key + ": expected true/false");
}

inline double parse_real(const std::string& key, std::string_view v) {
  const auto d = text::parse_double(v);
  if (!d) throw Error(ErrorKind::InvalidArgument, key + ": expected a number");
  return *d;
}

inline std::uint64_t parse_count(const std::string& key, std::string_view v) {
  const auto d = text::parse_int(v);
  if (!d || *d < 0) throw Error(ErrorKind::InvalidArgument, key + ": expected a nonnegative integer");
  return static_cast<std::uint64_t>(*d);
}

}  // namespace config_detail

/// Applies one `key = value` setting. City keys are `city.<name>.<field>`.
inline void apply_setting(PipelineConfig& cfg, const std::string& key, std::string value, const fs::path& base) {
  using namespace config_detail;
  const auto path = [&](const std::string& v) {
    const fs::path p(v);
    return p.is_absolute() || base.empty() ? p : fs::weakly_canonical(base / p);
  };
  if (key.rfind("city.", 0) == 0) {
    const auto dot = key.rfind('.');
    if (dot <= 5) throw Error(ErrorKind::InvalidArgument, "bad city key '" + key + "'");
    const std::string name = key.substr(5, dot - 5), field = key.substr(dot + 1);
    auto it = std::find_if(cfg.cities.begin(), cfg.cities.end(), [&](const CityInput& c) { return c.name == name; });
    if (it == cfg.cities.end()) {
      cfg.cities.push_back(CityInput{name, {}, {}, {}, {}});
      it = cfg.cities.end() - 1;
    }
    if (field == "region") it->region = path(value);
    else if (field == "traffic") it->traffic = path(value);
    else if (field == "pois") it->pois = path(value);
    else if (field == "truth") it->truth = path(value);
    else throw Error(ErrorKind::InvalidArgument, "unknown city field '" + field + "'");
    return;
  }
  if (key == "service_taxonomy") cfg.service_taxonomy = path(value);
  else if (key == "third_place_taxonomy") cfg.third_place_taxonomy = path(value);
  else if (key == "day_types") {
    cfg.day_types.clear();
    for (const auto& v : split_list(value)) {
      const auto t = parse_day_type(v);
      if (!t) throw Error(ErrorKind::InvalidArgument, "unknown day type '" + v + "'");
      cfg.day_types.push_back(*t);
    }
  } else if (key == "levels") {
    cfg.levels.clear();
    for (const auto& v : split_list(value)) {
      const auto l = parse_level(v);
      if (!l) throw Error(ErrorKind::InvalidArgument, "unknown level '" + v + "'");
      cfg.levels.push_back(*l);
    }
  } else if (key == "k_min") cfg.k_min = parse_count(key, value);
  else if (key == "k_max") cfg.k_max = parse_count(key, value);
  else if (key == "seed") cfg.seed = parse_count(key, value);
  else if (key == "restarts") cfg.restarts = parse_count(key, value);
  else if (key == "silhouette_sample") cfg.silhouette_sample = parse_count(key, value);
  else if (key == "kmeans_max_iter") cfg.kmeans_max_iter = parse_count(key, value);
  else if (key == "lambda") cfg.lambda = parse_real(key, value);
  else if (key == "standardize") cfg.standardize = parse_bool(key, value);
  else if (key == "holdout") cfg.holdout = parse_real(key, value);
  else if (key == "fit_tol") cfg.fit_tol = parse_real(key, value);
  else if (key == "fit_max_iter") cfg.fit_max_iter = parse_count(key, value);
  else if (key == "rr_cap") cfg.rr_cap = parse_real(key, value);
  else if (key == "drop_silent_cells") cfg.drop_silent_cells = parse_bool(key, value);
  else if (key == "mean_per_day") cfg.mean_per_day = parse_bool(key, value);
  else if (key == "min_label_count") cfg.min_label_count = parse_count(key, value);
  else throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
}

/// TOML-like: `key = value` lines, `#` comments, `[city.<name>]` sections whose keys are
/// region/traffic/pois/truth. Relative paths resolve against `base`.
inline PipelineConfig parse_config(std::istream& in, const fs::path& base) {
  PipelineConfig cfg;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = text::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw Error(ErrorKind::InvalidArgument, "config line " + std::to_string(line_no));
      section = std::string(text::trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorKind::InvalidArgument, "config line " + std::to_string(line_no) + ": expected key = value");
    std::string key(text::trim(t.substr(0, eq)));
    std::string value(text::trim(t.substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    apply_setting(cfg, key, value, base);
  }
  return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  return parse_config(in, fs::absolute(path).parent_path());
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json cities = nlohmann::json::array();
  for (const auto& city : c.cities)
    cities.push_back({{"name", city.name},
                      {"region", city.region.string()},
                      {"traffic", city.traffic.string()},
                      {"pois", city.pois.string()},
                      {"truth", city.truth.string()}});
  std::vector<std::string> days, levels;
  for (auto d : c.day_types) days.emplace_back(vibrancy::to_string(d));
  for (auto l : c.levels) levels.emplace_back(to_string(l));
  return {{"cities", cities},
          {"service_taxonomy", c.service_taxonomy.string()},
          {"third_place_taxonomy", c.third_place_taxonomy.string()},
          {"day_types", days},
          {"levels", levels},
          {"k_min", c.k_min},
          {"k_max", c.k_max},
          {"seed", c.seed},
          {"restarts", c.restarts},
          {"silhouette_sample", c.silhouette_sample},
          {"kmeans_max_iter", c.kmeans_max_iter},
          {"lambda", c.lambda},
          {"standardize", c.standardize},
          {"holdout", c.holdout},
          {"fit_tol", c.fit_tol},
          {"fit_max_iter", c.fit_max_iter},
          {"rr_cap", c.rr_cap},
          {"drop_silent_cells", c.drop_silent_cells},
          {"mean_per_day", c.mean_per_day},
          {"min_label_count", c.min_label_count}};
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  try {
    PipelineConfig c;
    for (const auto& city : j.at("cities"))
      c.cities.push_back(CityInput{city.at("name").get<std::string>(), city.at("region").get<std::string>(),
                                   city.at("traffic").get<std::string>(), city.at("pois").get<std::string>(),
                                   city.value("truth", std::string{})});
    c.service_taxonomy = j.at("service_taxonomy").get<std::string>();
    c.third_place_taxonomy = j.at("third_place_taxonomy").get<std::string>();
    c.day_types.clear();
    for (const auto& d : j.at("day_types")) c.day_types.push_back(*parse_day_type(d.get<std::string>()));
    c.levels.clear();
    for (const auto& l : j.at("levels")) c.levels.push_back(*parse_level(l.get<std::string>()));
    c.k_min = j.at("k_min");
    c.k_max = j.at("k_max");
    c.seed = j.at("seed");
    c.restarts = j.at("restarts");
    c.silhouette_sample = j.at("silhouette_sample");
    c.kmeans_max_iter = j.at("kmeans_max_iter");
    c.lambda = j.at("lambda");
    c.standardize = j.at("standardize");
    c.holdout = j.at("holdout");
    c.fit_tol = j.at("fit_tol");
    c.fit_max_iter = j.at("fit_max_iter");
    c.rr_cap = j.at("rr_cap");
    c.drop_silent_cells = j.at("drop_silent_cells");
    c.mean_per_day = j.at("mean_per_day");
    c.min_label_count = j.at("min_label_count");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("manifest config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------------------
// run

inline ClusterStageOptions cluster_options(const PipelineConfig& c) {
  ClusterStageOptions o;
  o.select.k_min = c.k_min;
  o.select.k_max = c.k_max;
  o.select.restarts = c.restarts;
  o.select.seed = c.seed;
  o.select.silhouette_sample = c.silhouette_sample;
  o.select.kmeans.max_iter = c.kmeans_max_iter;
  o.rr_cap = c.rr_cap;
  return o;
}

inline FitStageOptions fit_options(const PipelineConfig& c) {
  FitStageOptions o;
  o.lambda = c.lambda;
  o.standardize = c.standardize;
  o.holdout = c.holdout;
  o.seed = c.seed;
  o.tol = c.fit_tol;
  o.max_iter = c.fit_max_iter;
  return o;
}

/// Relative path -> SHA-256 of every file under `dir` except the manifest, sorted.
inline nlohmann::json hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = sha256_file(f);
  return out;
}

struct StageFailure : Error {
  StageFailure(const Error& e, const std::string& stage)
      : Error(e.kind(), "stage '" + stage + "': " + e.what()), stage_name(stage) {}
  std::string stage_name;
};

template <typename F>
auto run_stage(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const StageFailure&) {
    throw;
  } catch (const Error& e) {
    throw StageFailure(e, stage);
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageFailure(Error(ErrorKind::Io, e.what()), stage);
  } catch (const nlohmann::json::exception& e) {
    throw StageFailure(Error(ErrorKind::MalformedLine, e.what()), stage);
  }
}

struct UnitPlan {
  Level level;
  DayType day;
  std::vector<std::size_t> cities;
  fs::path dir;
};

/// One (level, day type, city group) unit: every stage in order inside `plan.dir`.
inline nlohmann::json run_unit(const PipelineConfig& cfg, const UnitPlan& plan, std::span<const CityRegion> regions,
                               const ServiceTaxonomy& taxonomy, const ThirdPlaceTaxonomy& third, const fs::path& out_dir) {
  const SignatureOptions sig_opt{cfg.mean_per_day, cfg.drop_silent_cells};
  std::vector<SignatureTensor> tensors;
  std::vector<CityRegion> unit_regions;
  std::vector<fs::path> pois;
  std::map<std::string, fs::path> truth;
  for (auto i : plan.cities) {
    tensors.push_back(run_stage("signatures", [&] {
      return stage_signatures(regions[i], cfg.cities[i].traffic, taxonomy, plan.day, sig_opt, plan.dir);
    }));
    unit_regions.push_back(regions[i]);
    pois.push_back(cfg.cities[i].pois);
    if (!cfg.cities[i].truth.empty()) truth[regions[i].name()] = cfg.cities[i].truth;
  }
  const auto clustered =
      run_stage("cluster", [&] { return stage_cluster(tensors, unit_regions, truth, cluster_options(cfg), plan.dir); });
  run_stage("features", [&] { return stage_features(unit_regions, pois, third, cfg.min_label_count, plan.dir); });
  std::vector<FitInput> fit_inputs;
  for (const auto& r : unit_regions)
    fit_inputs.push_back({r.name(), plan.dir / features_file(r.name()), plan.dir / ("labels_" + slug(r.name()) + ".csv")});
  const auto fitted = run_stage("fit", [&] { return stage_fit(fit_inputs, fit_options(cfg), plan.dir); });
  run_stage("report", [&] { return stage_report(plan.dir); });
  nlohmann::json u = {{"level", std::string(to_string(plan.level))},
                      {"day_type", std::string(vibrancy::to_string(plan.day))},
                      {"directory", fs::relative(plan.dir, out_dir).generic_string()},
                      {"chosen_k", clustered.report.chosen_k},
                      {"accuracy", fitted.metrics.accuracy},
                      {"macro_f1", fitted.metrics.macro_f1},
                      {"weighted_f1", fitted.metrics.weighted_f1},
                      {"fit_converged", fitted.model.convergence.converged},
                      {"fit_iterations", fitted.model.convergence.iterations}};
  if (!clustered.ari.empty()) u["ari_vs_truth"] = clustered.ari;
  return u;
}

/// Executes every (level x day type) unit and writes `manifest.json` into `out_dir`.
/// Unit directories are <out>/local/<day_type>/<city> and <out>/global/<day_type>/all.
/// Units run concurrently; a failing stage leaves a manifest with status "failed" and a
/// FAILED marker, then rethrows.
inline nlohmann::json run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir, unsigned max_threads = 0) {
  nlohmann::json manifest;
  manifest["tool"] = "vibrancy";
  manifest["version"] = std::string(kVersion);
  manifest["config"] = to_json(cfg);
  manifest["status"] = "running";
  fs::create_directories(out_dir);
  nlohmann::json units = nlohmann::json::array();
  bool all_converged = true;
  try {
    run_stage("ingest", [&] {
      cfg.validate();
      return 0;
    });
    nlohmann::json inputs = nlohmann::json::object();
    const auto note_input = [&](const fs::path& p) {
      if (!p.empty()) inputs[p.string()] = sha256_file(p);
    };
    note_input(cfg.service_taxonomy);
    note_input(cfg.third_place_taxonomy);
    for (const auto& c : cfg.cities) {
      note_input(c.region);
      note_input(c.traffic);
      note_input(c.pois);
      note_input(c.truth);
    }
    manifest["inputs"] = inputs;

    const auto taxonomy = run_stage("ingest", [&] { return load_taxonomy(cfg.service_taxonomy.string()); });
    const auto third = run_stage("ingest", [&] { return load_third_place_taxonomy(cfg.third_place_taxonomy.string()); });
    std::vector<CityRegion> regions;
    nlohmann::json region_checks = nlohmann::json::object();
    for (const auto& c : cfg.cities) {
      regions.push_back(run_stage("ingest", [&] { return load_region(c.region.string()); }));
      const auto check = check_region_consistency(regions.back());
      region_checks[regions.back().name()] = {{"computed_area_km2", check.computed_area_km2},
                                              {"relative_error", check.relative_error},
                                              {"has_declared", check.has_declared},
                                              {"pass", check.pass}};
    }
    manifest["region_checks"] = region_checks;

    std::vector<UnitPlan> plans;
    for (const auto level : cfg.levels) {
      for (const auto day : cfg.day_types) {
        const fs::path base = out_dir / std::string(to_string(level)) / std::string(vibrancy::to_string(day));
        if (level == Level::Local) {
          for (std::size_t i = 0; i < cfg.cities.size(); ++i) plans.push_back({level, day, {i}, base / slug(regions[i].name())});
        } else {
          std::vector<std::size_t> all(cfg.cities.size());
          std::iota(all.begin(), all.end(), 0);
          plans.push_back({level, day, all, base / "all"});
        }
      }
    }

    const unsigned hw = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
    std::vector<nlohmann::json> results(plans.size());
    std::optional<StageFailure> failure;
    for (std::size_t start = 0; start < plans.size(); start += hw) {
      const std::size_t stop = std::min(plans.size(), start + hw);
      std::vector<std::future<nlohmann::json>> running;
      for (std::size_t u = start; u < stop; ++u)
        running.push_back(std::async(std::launch::async, [&, u] { return run_unit(cfg, plans[u], regions, taxonomy, third, out_dir); }));
      for (std::size_t u = start; u < stop; ++u) {
        try {
          results[u] = running[u - start].get();
        } catch (const StageFailure& e) {
          if (!failure) failure = e;
        }
      }
      if (failure) break;
    }
    for (const auto& r : results) {
      if (r.is_null()) continue;
      units.push_back(r);
      all_converged = all_converged && r.at("fit_converged").get<bool>();
    }
    if (failure) throw *failure;
  } catch (const StageFailure& e) {
    manifest["status"] = "failed";
    manifest["failure"] = {{"stage", e.stage_name}, {"cause", e.what()}};
    manifest["units"] = units;
    write_text(out_dir / "FAILED", std::string(e.what()) + "\n");
    manifest["artifacts"] = hash_tree(out_dir);
    write_json(out_dir / "manifest.json", manifest);
    throw;
  }
  manifest["units"] = units;
  manifest["status"] = all_converged ? "ok" : "ok_with_unconverged_fits";
  manifest["artifacts"] = hash_tree(out_dir);
  write_json(out_dir / "manifest.json", manifest);
  return manifest;
}

/// Reads a manifest's config and checks that every recorded input still has the same hash.
inline PipelineConfig config_from_manifest(const fs::path& manifest_path) {
  const auto m = read_json(manifest_path);
  if (!m.contains("config")) throw Error(ErrorKind::MalformedHeader, "manifest has no config");
  auto cfg = config_from_json(m.at("config"));
  if (m.contains("inputs"))
    for (const auto& [path, hash] : m.at("inputs").items()) {
      if (!fs::exists(path)) throw Error(ErrorKind::Io, "manifest input missing: " + path);
      if (sha256_file(path) != hash.get<std::string>())
        throw Error(ErrorKind::InvalidArgument, "manifest input changed since the run: " + path);
    }
  return cfg;
}

}  // namespace vibrancy::pipeline
