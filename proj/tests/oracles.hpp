#pragma once

// Brute-force reference computations used to check the library. They share no code with
// the implementations they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (long double)(a[i] - b[i]) * (a[i] - b[i]);
  return static_cast<double>(std::sqrt(s));
}

// Mean silhouette straight from the definition.
inline double silhouette(const Matrix& pts, const std::vector<int>& labels) {
  const std::size_t n = pts.size();
  std::set<int> clusters(labels.begin(), labels.end());
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, long double> sum;
    std::map<int, std::size_t> cnt;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[labels[j]] += euclid(pts[i], pts[j]);
      ++cnt[labels[j]];
    }
    if (cnt[labels[i]] == 0) continue;  // singleton
    const long double a = sum[labels[i]] / cnt[labels[i]];
    long double b = std::numeric_limits<long double>::infinity();
    for (int c : clusters)
      if (c != labels[i] && cnt[c] > 0) b = std::min(b, sum[c] / cnt[c]);
    const long double m = std::max(a, b);
    if (m > 0) total += (b - a) / m;
  }
  return static_cast<double>(total / n);
}

// Direct evaluation of the ratio to the mean of the other entries.
inline std::vector<double> relative_risk_column(const std::vector<double>& x, double cap = 1e6) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    long double others = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) others += x[k];
    if (others == 0) out[i] = x[i] == 0 ? 1.0 : cap;
    else out[i] = static_cast<double>(x[i] / (others / (n - 1)));
  }
  return out;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, support = 0;
};

struct MetricsOracle {
  double accuracy = 0, macro = 0, weighted = 0;
  std::map<int, double> precision, recall, f1;
  std::map<int, Counts> counts;
};

// Confusion matrix enumeration, then textbook precision / recall / F1.
inline MetricsOracle metrics(const std::vector<int>& y, const std::vector<int>& p, std::set<int> classes) {
  classes.insert(y.begin(), y.end());
  classes.insert(p.begin(), p.end());
  std::map<std::pair<int, int>, std::size_t> confusion;
  for (std::size_t i = 0; i < y.size(); ++i) ++confusion[{y[i], p[i]}];
  MetricsOracle o;
  std::size_t diag = 0;
  for (int c : classes) diag += confusion[{c, c}];
  o.accuracy = double(diag) / double(y.size());
  for (int c : classes) {
    Counts k;
    k.tp = confusion[{c, c}];
    for (int d : classes) {
      if (d == c) continue;
      k.fp += confusion[{d, c}];
      k.fn += confusion[{c, d}];
    }
    k.support = k.tp + k.fn;
    const double prec = k.tp + k.fp == 0 ? 0.0 : double(k.tp) / double(k.tp + k.fp);
    const double rec = k.tp + k.fn == 0 ? 0.0 : double(k.tp) / double(k.tp + k.fn);
    const double f = prec + rec == 0 ? 0.0 : 2 * prec * rec / (prec + rec);
    o.precision[c] = prec;
    o.recall[c] = rec;
    o.f1[c] = f;
    o.counts[c] = k;
    o.macro += f;
    o.weighted += f * double(k.support);
  }
  o.macro /= double(classes.size());
  o.weighted /= double(y.size());
  return o;
}

// Adjusted Rand index by enumerating all pairs.
inline double ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  long double both = 0, same_a = 0, same_b = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      same_a += sa;
      same_b += sb;
      pairs += 1;
    }
  const long double expected = same_a * same_b / pairs;
  const long double max_index = (same_a + same_b) / 2;
  if (max_index == expected) return 1.0;
  return static_cast<double>((both - expected) / (max_index - expected));
}

// Penalized multinomial cross-entropy written out per sample; theta per class [b, w...].
inline double logit_loss(const std::vector<double>& theta, const Matrix& X, const std::vector<std::size_t>& y,
                         std::size_t C, double lambda) {
  const std::size_t N = X.size(), P = X[0].size();
  long double loss = 0;
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<long double> z(C);
    for (std::size_t c = 0; c < C; ++c) {
      z[c] = theta[c * (P + 1)];
      for (std::size_t j = 0; j < P; ++j) z[c] += theta[c * (P + 1) + 1 + j] * X[i][j];
    }
    long double denom = 0;
    for (auto v : z) denom += std::exp(v);
    loss += -(z[y[i]] - std::log(denom));
  }
  long double pen = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < P; ++j) pen += theta[c * (P + 1) + 1 + j] * theta[c * (P + 1) + 1 + j];
  return static_cast<double>(loss / N + 0.5L * lambda * pen / N);
}

inline double shannon_bits(const std::vector<double>& counts) {
  long double total = 0;
  for (double c : counts) total += c;
  if (total == 0) return 0.0;
  long double h = 0;
  for (double c : counts)
    if (c > 0) h -= (c / total) * std::log2(c / total);
  return static_cast<double>(h);
}

}  // namespace oracle
