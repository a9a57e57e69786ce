// vibrancy: command-line front end for the signature -> cluster -> covariate -> model pipeline.
//
// Exit codes: 0 success, 1 usage, 2 data, 3 numeric (including unconverged fits).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vibrancy/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vibrancy;
namespace vp = vibrancy::pipeline;

namespace {

int exit_code(ErrorCategory c) { return static_cast<int>(c); }

DayType day_type_arg(const std::string& s) {
  const auto t = parse_day_type(s);
  if (!t) throw Error(ErrorKind::InvalidArgument, "--day-type must be weekday or weekend");
  return *t;
}

// --truth accepts REGION=PATH pairs.
std::map<std::string, fs::path> truth_arg(const std::vector<std::string>& pairs) {
  std::map<std::string, fs::path> out;
  for (const auto& p : pairs) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::InvalidArgument, "--truth expects REGION=PATH");
    out[p.substr(0, eq)] = p.substr(eq + 1);
  }
  return out;
}

struct SynthArgs {
  std::string spec_file;
  std::string out = "synth_out";
  SynthSpec spec;
};

struct SignaturesArgs {
  std::string region, traffic, services, day_type = "weekday", out = ".";
  bool drop_silent = false, mean_per_day = false;
};

struct ClusterArgs {
  std::vector<std::string> tensors, regions, truth;
  std::string out = ".";
  std::size_t k_min = 3, k_max = 10, restarts = 10, silhouette_sample = 0, max_iter = 300;
  std::uint64_t seed = 42;
  double rr_cap = 1e6;
};

struct FeaturesArgs {
  std::vector<std::string> regions, pois;
  std::string third_places, out = ".";
  std::size_t min_label_count = 10;
};

struct FitArgs {
  std::string dir = ".", features_dir, labels_dir, out;
  double lambda = 1.0, holdout = 0.0, tol = 1e-8;
  std::size_t max_iter = 5000;
  std::uint64_t seed = 42;
  bool raw = false;
};

struct RunArgs {
  std::string config, manifest, out = "run_out", level, day_type;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, holdout;
  std::optional<std::size_t> k_min, k_max, restarts;
  bool drop_silent = false, mean_per_day = false;
  unsigned threads = 0;
};

int do_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec;
  if (!a.spec_file.empty()) spec = synth_spec_from_json(vp::read_json(a.spec_file));
  spec.validate();
  const auto truth = generate(spec);
  write_synth_files(truth, a.out);
  vp::write_json(fs::path(a.out) / "spec.json", to_json(spec));
  const std::string name = truth.region.name();
  vp::write_text(fs::path(a.out) / "pipeline.conf",
                 "# generated by `vibrancy synth`\n"
                 "service_taxonomy = services.csv\n"
                 "third_place_taxonomy = third_places.csv\n"
                 "day_types = " + std::string(to_string(spec.day_type)) + "\n"
                 "levels = local\n"
                 "seed = " + std::to_string(spec.seed) + "\n"
                 "min_label_count = 1\n\n"
                 "[city." + name + "]\n"
                 "region = region.json\ntraffic = traffic.csv\npois = pois.csv\ntruth = truth.csv\n");
  std::printf("wrote %zu cells, %zu traffic records, %zu POIs to %s (separation/sigma %s)\n",
              truth.region.active_cells.size(), truth.traffic.size(), truth.pois.size(), a.out.c_str(),
              text::format_double(truth.separation_ratio).c_str());
  return 0;
}

int do_signatures(const SignaturesArgs& a) {
  const auto region = load_region(a.region);
  const auto taxonomy = load_taxonomy(a.services);
  const auto check = check_region_consistency(region);
  if (!check.pass)
    std::fprintf(stderr, "warning: region '%s' area differs from the declared value by %.3f%%\n", region.name().c_str(),
                 100.0 * check.relative_error);
  const auto t = vp::stage_signatures(region, a.traffic, taxonomy, day_type_arg(a.day_type),
                                      SignatureOptions{a.mean_per_day, a.drop_silent}, a.out);
  std::printf("%s: %zu cells x %zu bins x %zu categories\n", region.name().c_str(), t.n(), kBins, t.depth());
  return 0;
}

int do_cluster(const ClusterArgs& a) {
  std::vector<SignatureTensor> tensors;
  for (const auto& p : a.tensors) tensors.push_back(vp::load_tensor_file(p));
  std::vector<CityRegion> regions;
  for (const auto& p : a.regions) regions.push_back(load_region(p));
  vp::ClusterStageOptions opt;
  opt.select.k_min = a.k_min;
  opt.select.k_max = a.k_max;
  opt.select.restarts = a.restarts;
  opt.select.seed = a.seed;
  opt.select.silhouette_sample = a.silhouette_sample;
  opt.select.kmeans.max_iter = a.max_iter;
  opt.rr_cap = a.rr_cap;
  const auto r = vp::stage_cluster(tensors, regions, truth_arg(a.truth), opt, a.out);
  std::printf("chosen k = %zu (%s)\n", r.report.chosen_k, r.report.tie_break.c_str());
  for (const auto& [region, ari] : r.ari) std::printf("ARI vs truth [%s] = %s\n", region.c_str(), text::format_double(ari).c_str());
  return 0;
}

int do_features(const FeaturesArgs& a) {
  std::vector<CityRegion> regions;
  for (const auto& p : a.regions) regions.push_back(load_region(p));
  std::vector<fs::path> pois(a.pois.begin(), a.pois.end());
  const auto taxonomy = load_third_place_taxonomy(a.third_places);
  const auto tables = vp::stage_features(regions, pois, taxonomy, a.min_label_count, a.out);
  for (std::size_t i = 0; i < tables.size(); ++i) std::printf("%s: %zu cells\n", regions[i].name().c_str(), tables[i].rows());
  return 0;
}

int do_fit(const FitArgs& a) {
  const fs::path features_dir = a.features_dir.empty() ? fs::path(a.dir) : fs::path(a.features_dir);
  const fs::path labels_dir = a.labels_dir.empty() ? fs::path(a.dir) : fs::path(a.labels_dir);
  const fs::path out = a.out.empty() ? fs::path(a.dir) : fs::path(a.out);
  const auto norm = vp::read_json(labels_dir / "normalization.json");
  std::vector<vp::FitInput> inputs;
  for (const auto& r : norm.at("regions"))
    inputs.push_back({r.get<std::string>(), features_dir / vp::features_file(r.get<std::string>()),
                      labels_dir / ("labels_" + vp::slug(r.get<std::string>()) + ".csv")});
  vp::FitStageOptions opt;
  opt.lambda = a.lambda;
  opt.holdout = a.holdout;
  opt.seed = a.seed;
  opt.tol = a.tol;
  opt.max_iter = a.max_iter;
  opt.standardize = !a.raw;
  const auto r = vp::stage_fit(inputs, opt, out);
  std::printf("accuracy %s, macro F1 %s, weighted F1 %s (%zu rows, %zu evaluated)\n",
              text::format_double(r.metrics.accuracy).c_str(), text::format_double(r.metrics.macro_f1).c_str(),
              text::format_double(r.metrics.weighted_f1).c_str(), r.n_rows, r.n_eval);
  if (!r.model.convergence.converged) {
    std::fprintf(stderr, "NotConverged: fit stopped after %zu iterations (gradient norm %g)\n",
                 r.model.convergence.iterations, r.model.convergence.gradient_inf_norm);
    return exit_code(ErrorCategory::Numeric);
  }
  return 0;
}

int do_run(const RunArgs& a) {
  vp::PipelineConfig cfg;
  if (!a.manifest.empty()) cfg = vp::config_from_manifest(a.manifest);
  else if (!a.config.empty()) cfg = vp::load_config(a.config);
  else throw Error(ErrorKind::InvalidArgument, "run needs --config or --manifest");
  if (!a.level.empty()) {
    const auto l = vp::parse_level(a.level);
    if (!l) throw Error(ErrorKind::InvalidArgument, "--level must be local or global");
    cfg.levels = {*l};
  }
  if (!a.day_type.empty()) cfg.day_types = {day_type_arg(a.day_type)};
  if (a.seed) cfg.seed = *a.seed;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.holdout) cfg.holdout = *a.holdout;
  if (a.k_min) cfg.k_min = *a.k_min;
  if (a.k_max) cfg.k_max = *a.k_max;
  if (a.restarts) cfg.restarts = *a.restarts;
  if (a.drop_silent) cfg.drop_silent_cells = true;
  if (a.mean_per_day) cfg.mean_per_day = true;
  const auto manifest = vp::run_pipeline(cfg, a.out, a.threads);
  for (const auto& u : manifest.at("units")) {
    std::printf("%s: k = %d, macro F1 %s", u.at("directory").get<std::string>().c_str(), u.at("chosen_k").get<int>(),
                text::format_double(u.at("macro_f1").get<double>()).c_str());
    if (u.contains("ari_vs_truth"))
      for (const auto& [region, ari] : u.at("ari_vs_truth").items())
        std::printf(", ARI[%s] %s", region.c_str(), text::format_double(ari.get<double>()).c_str());
    std::printf("\n");
  }
  std::printf("manifest: %s\n", (fs::path(a.out) / "manifest.json").string().c_str());
  return manifest.at("status") == "ok" ? 0 : exit_code(ErrorCategory::Numeric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Urban vibrancy from mobile app usage and third places"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(vp::kVersion));

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic city with planted clusters");
  synth->add_option("--spec", synth_args.spec_file, "JSON synth spec (overrides the flags below)");
  synth->add_option("--out", synth_args.out, "Output directory");
  synth->add_option("--seed", synth_args.spec.seed);
  synth->add_option("--n-cells", synth_args.spec.n_cells);
  synth->add_option("--categories", synth_args.spec.n_categories, "App categories D");
  synth->add_option("--k-true", synth_args.spec.k_true);
  synth->add_option("--noise", synth_args.spec.noise_sigma, "Gaussian noise sigma on per-bin totals");
  synth->add_option("--days", synth_args.spec.n_days);
  synth->add_option("--weights", synth_args.spec.archetype_weights, "Share of cells per archetype");
  synth->add_option("--region-name", synth_args.spec.region_name);

  SignaturesArgs sig_args;
  auto* sig = app.add_subcommand("signatures", "Aggregate traffic into a per-cell signature tensor");
  sig->add_option("--region", sig_args.region, "Region JSON")->required();
  sig->add_option("--traffic", sig_args.traffic, "Traffic CSV")->required();
  sig->add_option("--services", sig_args.services, "service,category taxonomy CSV")->required();
  sig->add_option("--day-type", sig_args.day_type, "weekday or weekend");
  sig->add_flag("--drop-silent-cells", sig_args.drop_silent);
  sig->add_flag("--mean-per-day", sig_args.mean_per_day);
  sig->add_option("--out", sig_args.out, "Output directory");

  ClusterArgs cl_args;
  auto* cl = app.add_subcommand("cluster", "Normalize, select k and cluster signature tensors");
  cl->add_option("--tensor", cl_args.tensors, "Signature tensor(s); several tensors form a global run")->required();
  cl->add_option("--region", cl_args.regions, "Region JSON(s) for GeoJSON output");
  cl->add_option("--truth", cl_args.truth, "REGION=PATH planted labels to score with ARI");
  cl->add_option("--k-min", cl_args.k_min);
  cl->add_option("--k-max", cl_args.k_max);
  cl->add_option("--restarts", cl_args.restarts);
  cl->add_option("--seed", cl_args.seed);
  cl->add_option("--silhouette-sample", cl_args.silhouette_sample, "0 = exact silhouette");
  cl->add_option("--max-iter", cl_args.max_iter);
  cl->add_option("--rr-cap", cl_args.rr_cap, "Value used when every other location is zero");
  cl->add_option("--out", cl_args.out);

  FeaturesArgs ft_args;
  auto* ft = app.add_subcommand("features", "Third-place count and diversity covariates");
  ft->add_option("--region", ft_args.regions, "Region JSON(s)")->required();
  ft->add_option("--pois", ft_args.pois, "POI CSV(s), one per region")->required();
  ft->add_option("--third-places", ft_args.third_places, "label,category taxonomy CSV")->required();
  ft->add_option("--min-label-count", ft_args.min_label_count);
  ft->add_option("--out", ft_args.out);

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit and evaluate the multinomial logit");
  fit->add_option("--dir", fit_args.dir, "Directory holding features, labels and normalization.json");
  fit->add_option("--features-dir", fit_args.features_dir);
  fit->add_option("--labels-dir", fit_args.labels_dir);
  fit->add_option("--out", fit_args.out, "Defaults to --dir");
  fit->add_option("--lambda", fit_args.lambda);
  fit->add_option("--holdout", fit_args.holdout, "Evaluate on a seeded holdout fraction");
  fit->add_option("--seed", fit_args.seed);
  fit->add_option("--tol", fit_args.tol);
  fit->add_option("--max-iter", fit_args.max_iter);
  fit->add_flag("--raw", fit_args.raw, "Skip z-scoring of covariates");

  std::string report_dir = ".";
  auto* report = app.add_subcommand("report", "Render report.md from saved artifacts");
  report->add_option("--dir", report_dir);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run the full pipeline from a config or a manifest");
  auto* cfg_opt = run->add_option("--config", run_args.config);
  run->add_option("--manifest", run_args.manifest)->excludes(cfg_opt);
  run->add_option("--out", run_args.out);
  run->add_option("--level", run_args.level, "local or global");
  run->add_option("--day-type", run_args.day_type, "weekday or weekend");
  run->add_option("--seed", run_args.seed);
  run->add_option("--lambda", run_args.lambda);
  run->add_option("--holdout", run_args.holdout);
  run->add_option("--k-min", run_args.k_min);
  run->add_option("--k-max", run_args.k_max);
  run->add_option("--restarts", run_args.restarts);
  run->add_flag("--drop-silent-cells", run_args.drop_silent);
  run->add_flag("--mean-per-day", run_args.mean_per_day);
  run->add_option("--threads", run_args.threads, "Concurrent units (0 = hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorCategory::Usage);
  }

  try {
    if (*synth) return do_synth(synth_args);
    if (*sig) return do_signatures(sig_args);
    if (*cl) return do_cluster(cl_args);
    if (*ft) return do_features(ft_args);
    if (*fit) return do_fit(fit_args);
    if (*report) {
      std::cout << vp::stage_report(report_dir);
      return 0;
    }
    if (*run) return do_run(run_args);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(ErrorCategory::Data);
  }
  return 0;
}
