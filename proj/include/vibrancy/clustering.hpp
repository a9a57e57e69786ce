#pragma once

// Multidimensional time-series k-means over flattened 12 x D signatures, silhouette-based
// choice of k, and the size-ordered labelling convention (largest cluster is cluster 1).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibrancy/error.hpp"
#include "vibrancy/random.hpp"
#include "vibrancy/signatures.hpp"

namespace vibrancy {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::ShapeMismatch, "signature shapes differ (" + std::to_string(a.size()) +
                                              " vs " + std::to_string(b.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Euclidean distance over all 12 * D entries.
inline double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

struct ClusterModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k x dim; centroid of cluster c (1-based) at row c - 1
  std::vector<int> labels;        // 1..k per location
  double inertia = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_iter = 0;
  bool converged = false;
  std::vector<double> inertia_history;  // after every assignment step

  std::span<const double> centroid(int label) const {
    return std::span<const double>(centroids).subspan(static_cast<std::size_t>(label - 1) * dim, dim);
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (int l : labels) ++s[static_cast<std::size_t>(l - 1)];
    return s;
  }
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  double tol = 1e-6;
};

/// Nearest centroid; ties go to the smallest label.
inline int assign(const ClusterModel& model, std::span<const double> x) {
  if (x.size() != model.dim)
    throw Error(ErrorKind::ShapeMismatch, "matrix has " + std::to_string(x.size()) +
                                              " entries, model expects " + std::to_string(model.dim));
  int best = 1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < model.k; ++c) {
    const double d = squared_distance(x, model.centroid(static_cast<int>(c + 1)));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c + 1);
    }
  }
  return best;
}

/// Old label -> new label such that sizes are non-increasing; ties keep old label order.
inline std::vector<int> size_order_mapping(std::span<const int> labels, std::size_t k) {
  std::vector<std::size_t> size(k, 0);
  for (int l : labels) ++size[static_cast<std::size_t>(l - 1)];
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return size[a] > size[b]; });
  std::vector<int> mapping(k + 1, 0);
  for (std::size_t rank = 0; rank < k; ++rank) mapping[order[rank] + 1] = static_cast<int>(rank + 1);
  return mapping;  // index 0 unused
}

inline ClusterModel relabel_by_size(ClusterModel model) {
  const auto mapping = size_order_mapping(model.labels, model.k);
  std::vector<double> centroids(model.centroids.size());
  for (std::size_t old = 1; old <= model.k; ++old) {
    const auto src = model.centroid(static_cast<int>(old));
    std::copy(src.begin(), src.end(),
              centroids.begin() + static_cast<std::ptrdiff_t>((mapping[old] - 1) * model.dim));
  }
  for (int& l : model.labels) l = mapping[static_cast<std::size_t>(l)];
  model.centroids = std::move(centroids);
  return model;
}

namespace detail {

inline void check_finite(const MatrixView& data) {
  for (double v : data.data)
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "clustering input contains non-finite values");
}

// k-means++ seeding: first centre uniform, the rest drawn proportionally to D^2.
inline std::vector<double> kmeanspp(const MatrixView& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.rows, dim = data.cols;
  std::vector<double> centres(k * dim);
  std::vector<char> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : d2) total += v;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double cum = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (d2[i] <= 0.0) continue;
          cum += d2[i];
          pick = i;
          if (cum > target) break;
        }
      } else {
        // every point coincides with a centre; take a random unused point
        std::size_t free = 0;
        for (char ch : chosen) free += ch ? 0 : 1;
        std::size_t r = rng.index(free);
        for (std::size_t i = 0; i < n; ++i) {
          if (chosen[i]) continue;
          if (r-- == 0) {
            pick = i;
            break;
          }
        }
      }
    }
    chosen[pick] = 1;
    const auto src = data.row(pick);
    std::copy(src.begin(), src.end(), centres.begin() + static_cast<std::ptrdiff_t>(c * dim));
    const std::span<const double> centre(centres.data() + c * dim, dim);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(data.row(i), centre));
  }
  return centres;
}

// Assigns every row to its nearest centre (ties -> lowest index). Returns whether any label
// changed; fills `d2` with the squared distance to the assigned centre.
inline bool assign_all(const MatrixView& data, std::span<const double> centres, std::size_t k,
                       std::vector<int>& labels, std::vector<double>& d2) {
  bool changed = false;
  for (std::size_t i = 0; i < data.rows; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance(data.row(i), centres.subspan(c * data.cols, data.cols));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    if (labels[i] != best) changed = true;
    labels[i] = best;
    d2[i] = best_d;
  }
  return changed;
}

// Moves the point farthest from its centre into each empty cluster.
inline bool repair_empty(std::size_t k, std::vector<int>& labels, std::vector<double>& d2) {
  bool repaired = false;
  std::vector<std::size_t> size(k, 0);
  for (int l : labels) ++size[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < k; ++c) {
    if (size[c] != 0) continue;
    std::size_t far = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (size[static_cast<std::size_t>(labels[i])] < 2) continue;
      if (far == labels.size() || d2[i] > d2[far]) far = i;
    }
    if (far == labels.size()) break;  // cannot happen while k <= n
    --size[static_cast<std::size_t>(labels[far])];
    labels[far] = static_cast<int>(c);
    d2[far] = 0.0;
    size[c] = 1;
    repaired = true;
  }
  return repaired;
}

inline void update_means(const MatrixView& data, std::size_t k, const std::vector<int>& labels,
                         std::vector<double>& centres) {
  std::fill(centres.begin(), centres.end(), 0.0);
  std::vector<std::size_t> size(k, 0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++size[c];
    const auto row = data.row(i);
    for (std::size_t j = 0; j < data.cols; ++j) centres[c * data.cols + j] += row[j];
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < data.cols; ++j) centres[c * data.cols + j] /= static_cast<double>(size[c]);
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeds. Stops when an assignment step changes no label
/// (the labels are then a fixed point and every centroid is the mean of its members) or at
/// max_iter. Labels come back size-ordered, 1..k.
inline ClusterModel kmeans(const MatrixView& data, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& options = {}) {
  const std::size_t n = data.rows;
  if (k < 1 || k > n)
    throw Error(ErrorKind::KTooLarge, "k = " + std::to_string(k) + " with " + std::to_string(n) + " locations");
  detail::check_finite(data);

  Rng rng(seed);
  ClusterModel model;
  model.k = k;
  model.dim = data.cols;
  model.seed = seed;
  model.centroids = detail::kmeanspp(data, k, rng);

  std::vector<int> labels(n, -1);
  std::vector<double> d2(n, 0.0);
  detail::assign_all(data, model.centroids, k, labels, d2);
  detail::repair_empty(k, labels, d2);
  model.inertia_history.push_back(std::accumulate(d2.begin(), d2.end(), 0.0));

  for (std::size_t iter = 1; iter <= options.max_iter; ++iter) {
    detail::update_means(data, k, labels, model.centroids);
    const bool changed = detail::assign_all(data, model.centroids, k, labels, d2);
    const bool repaired = detail::repair_empty(k, labels, d2);
    model.inertia_history.push_back(std::accumulate(d2.begin(), d2.end(), 0.0));
    model.n_iter = iter;
    if (!changed && !repaired) {
      model.converged = true;
      break;
    }
  }
  if (!model.converged) detail::update_means(data, k, labels, model.centroids);

  model.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) model.labels[i] = labels[i] + 1;
  model.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) model.inertia += squared_distance(data.row(i), model.centroid(model.labels[i]));
  return relabel_by_size(std::move(model));
}

/// Pairwise Euclidean distances, n x n.
inline std::vector<double> pairwise_distances(const MatrixView& data) {
  const std::size_t n = data.rows;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) d[i * n + j] = d[j * n + i] = distance(data.row(i), data.row(j));
  return d;
}

namespace detail {

template <typename DistFn>
double silhouette_impl(std::size_t n, std::span<const int> labels, DistFn&& dist) {
  std::map<int, std::size_t> index;
  for (int l : labels) index.emplace(l, 0);
  if (index.size() < 2) throw Error(ErrorKind::SingleCluster, "silhouette needs at least 2 clusters");
  std::size_t next = 0;
  for (auto& [label, idx] : index) idx = next++;
  std::vector<std::size_t> cls(n), size(index.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    cls[i] = index.at(labels[i]);
    ++size[cls[i]];
  }
  std::vector<double> sums(index.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (size[cls[i]] < 2) continue;  // singleton scores 0
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sums[cls[j]] += dist(i, j);
    const double a = sums[cls[i]] / static_cast<double>(size[cls[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c)
      if (c != cls[i]) b = std::min(b, sums[c] / static_cast<double>(size[c]));
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

/// Mean silhouette (b - a) / max(a, b) with Euclidean distance; singletons score 0 and
/// a = b = 0 scores 0.
inline double silhouette(const MatrixView& data, std::span<const int> labels) {
  if (labels.size() != data.rows) throw Error(ErrorKind::LengthMismatch, "one label per location required");
  return detail::silhouette_impl(data.rows, labels,
                                 [&](std::size_t i, std::size_t j) { return distance(data.row(i), data.row(j)); });
}

/// Same, over a precomputed n x n distance matrix.
inline double silhouette_precomputed(std::span<const double> dist, std::size_t n, std::span<const int> labels) {
  if (labels.size() != n || dist.size() != n * n)
    throw Error(ErrorKind::LengthMismatch, "distance matrix and labels disagree in size");
  return detail::silhouette_impl(n, labels, [&](std::size_t i, std::size_t j) { return dist[i * n + j]; });
}

struct KScore {
  std::size_t k = 0;
  double silhouette = 0.0;
  double inertia = 0.0;
  std::uint64_t seed = 0;  // seed of the best restart
};

struct KSelectionReport {
  std::size_t k_min = 3;
  std::size_t k_max = 10;
  std::size_t restarts = 10;
  std::size_t silhouette_sample = 0;
  std::vector<KScore> scores;
  std::size_t chosen_k = 0;
  std::string tie_break;
};

struct SelectKOptions {
  std::size_t k_min = 3;
  std::size_t k_max = 10;
  std::size_t restarts = 10;
  std::uint64_t seed = 0;
  /// When nonzero and smaller than n, silhouettes are computed on a seeded subsample.
  std::size_t silhouette_sample = 0;
  KMeansOptions kmeans;
};

/// Runs k-means for every k in [k_min, k_max] (best of `restarts` by inertia) and keeps the
/// k with the highest silhouette; ties go to the smallest k.
inline std::pair<ClusterModel, KSelectionReport> select_k(const MatrixView& data, const SelectKOptions& opt) {
  if (opt.k_min < 2 || opt.k_min > opt.k_max)
    throw Error(ErrorKind::InvalidArgument, "k range must satisfy 2 <= k_min <= k_max");
  if (opt.k_max > data.rows)
    throw Error(ErrorKind::KTooLarge, "k_max = " + std::to_string(opt.k_max) + " exceeds " +
                                          std::to_string(data.rows) + " locations");
  if (opt.restarts < 1) throw Error(ErrorKind::InvalidArgument, "restarts must be >= 1");
  detail::check_finite(data);

  const std::size_t n = data.rows;
  std::vector<std::size_t> sample(n);
  std::iota(sample.begin(), sample.end(), 0);
  if (opt.silhouette_sample > 0 && opt.silhouette_sample < n) {
    Rng rng(derive_seed(opt.seed, "silhouette-sample"));
    rng.shuffle(sample.begin(), sample.end());
    sample.resize(opt.silhouette_sample);
    std::sort(sample.begin(), sample.end());
  }
  const std::size_t m = sample.size();
  std::vector<double> dist;
  constexpr std::size_t kMaxPrecomputed = 3000;
  if (m <= kMaxPrecomputed) {
    dist.assign(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j)
        dist[i * m + j] = dist[j * m + i] = distance(data.row(sample[i]), data.row(sample[j]));
  }

  KSelectionReport report;
  report.k_min = opt.k_min;
  report.k_max = opt.k_max;
  report.restarts = opt.restarts;
  report.silhouette_sample = m < n ? m : 0;
  ClusterModel chosen;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<int> sub_labels(m);
  for (std::size_t k = opt.k_min; k <= opt.k_max; ++k) {
    ClusterModel best;
    bool have = false;
    for (std::size_t r = 0; r < opt.restarts; ++r) {
      auto model = kmeans(data, k, derive_seed(opt.seed, "kmeans", k, r), opt.kmeans);
      if (!have || model.inertia < best.inertia) {
        best = std::move(model);
        have = true;
      }
    }
    for (std::size_t i = 0; i < m; ++i) sub_labels[i] = best.labels[sample[i]];
    double score = 0.0;
    const bool distinct = std::any_of(sub_labels.begin(), sub_labels.end(),
                                      [&](int l) { return l != sub_labels.front(); });
    if (distinct) {
      if (!dist.empty()) {
        score = silhouette_precomputed(dist, m, sub_labels);
      } else {
        score = detail::silhouette_impl(m, sub_labels, [&](std::size_t i, std::size_t j) {
          return distance(data.row(sample[i]), data.row(sample[j]));
        });
      }
    }
    report.scores.push_back(KScore{k, score, best.inertia, best.seed});
    if (score > best_score) {
      best_score = score;
      chosen = std::move(best);
    }
  }
  report.chosen_k = chosen.k;
  std::size_t ties = 0;
  for (const auto& s : report.scores) ties += s.silhouette == best_score ? 1 : 0;
  report.tie_break = ties > 1 ? "tied maximum silhouette across " + std::to_string(ties) +
                                    " values of k; smallest k kept"
                              : "unique maximum";
  return {std::move(chosen), std::move(report)};
}

inline nlohmann::json to_json(const KSelectionReport& r) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& s : r.scores)
    scores.push_back({{"k", s.k}, {"silhouette", s.silhouette}, {"inertia", s.inertia}, {"seed", s.seed}});
  return {{"k_min", r.k_min},       {"k_max", r.k_max},     {"restarts", r.restarts},
          {"silhouette_sample", r.silhouette_sample},      {"scores", scores},
          {"chosen_k", r.chosen_k}, {"tie_break", r.tie_break}};
}

inline KSelectionReport k_selection_from_json(const nlohmann::json& j) try {
  KSelectionReport r;
  r.k_min = j.at("k_min").get<std::size_t>();
  r.k_max = j.at("k_max").get<std::size_t>();
  r.restarts = j.at("restarts").get<std::size_t>();
  r.silhouette_sample = j.value("silhouette_sample", std::size_t{0});
  for (const auto& s : j.at("scores"))
    r.scores.push_back(KScore{s.at("k").get<std::size_t>(), s.at("silhouette").get<double>(),
                              s.at("inertia").get<double>(), s.at("seed").get<std::uint64_t>()});
  r.chosen_k = j.at("chosen_k").get<std::size_t>();
  r.tie_break = j.value("tie_break", std::string{});
  return r;
} catch (const nlohmann::json::exception& e) {
  throw Error(ErrorKind::MalformedLine, std::string("k-selection JSON: ") + e.what());
}

// Cluster model file: "VIBRCLST" u64 header_length, JSON header, k * dim f64 centroids.
// Labels are stored separately as CSV.

inline constexpr char kClusterMagic[8] = {'V', 'I', 'B', 'R', 'C', 'L', 'S', 'T'};

inline void write_cluster_model(std::ostream& out, const ClusterModel& model, DayType day_type,
                                const std::vector<std::string>& categories) {
  const nlohmann::json header = {{"version", 1},
                                 {"k", model.k},
                                 {"bins", kBins},
                                 {"dim", model.dim},
                                 {"seed", model.seed},
                                 {"n_iter", model.n_iter},
                                 {"converged", model.converged},
                                 {"inertia", model.inertia},
                                 {"day_type", std::string(to_string(day_type))},
                                 {"categories", categories},
                                 {"cluster_sizes", model.sizes()}};
  const std::string text = header.dump();
  out.write(kClusterMagic, sizeof kClusterMagic);
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(model.centroids.data()),
            static_cast<std::streamsize>(model.centroids.size() * sizeof(double)));
}

struct LoadedClusterModel {
  ClusterModel model;  // labels empty
  nlohmann::json header;
};

inline LoadedClusterModel read_cluster_model(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kClusterMagic, sizeof magic) != 0)
    throw Error(ErrorKind::MalformedHeader, "not a cluster model file");
  const auto len = detail::get<std::uint64_t>(in);
  if (len > (1ull << 26)) throw Error(ErrorKind::MalformedHeader, "implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw Error(ErrorKind::MalformedLine, "truncated cluster model header");
  LoadedClusterModel loaded;
  try {
    loaded.header = nlohmann::json::parse(text);
    auto& m = loaded.model;
    m.k = loaded.header.at("k").get<std::size_t>();
    m.dim = loaded.header.at("dim").get<std::size_t>();
    m.seed = loaded.header.at("seed").get<std::uint64_t>();
    m.n_iter = loaded.header.at("n_iter").get<std::size_t>();
    m.converged = loaded.header.at("converged").get<bool>();
    m.inertia = loaded.header.at("inertia").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedHeader, std::string("cluster model header: ") + e.what());
  }
  auto& m = loaded.model;
  m.centroids.resize(m.k * m.dim);
  if (!in.read(reinterpret_cast<char*>(m.centroids.data()),
               static_cast<std::streamsize>(m.centroids.size() * sizeof(double))))
    throw Error(ErrorKind::MalformedLine, "truncated centroid payload");
  return loaded;
}

}  // namespace vibrancy
