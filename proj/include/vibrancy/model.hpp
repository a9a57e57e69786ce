#pragma once

// L2-regularized multinomial logistic regression from cell covariates to cluster labels,
// with accuracy / macro-F1 / weighted-F1 evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibrancy/error.hpp"
#include "vibrancy/random.hpp"
#include "vibrancy/signatures.hpp"
#include "vibrancy/text.hpp"

namespace vibrancy {

struct ConvergenceRecord {
  std::size_t iterations = 0;
  double gradient_inf_norm = 0.0;
  double loss = 0.0;
  bool converged = false;
};

struct MultinomialLogit {
  std::vector<int> classes;  // ascending
  std::vector<std::string> covariates;
  std::vector<double> weights;     // classes x covariates
  std::vector<double> intercepts;  // classes
  double lambda = 1.0;
  bool standardized = false;
  bool fitted = false;
  ConvergenceRecord convergence;

  std::size_t n_classes() const { return classes.size(); }
  std::size_t n_features() const { return covariates.size(); }
  double weight(std::size_t cls, std::size_t feature) const { return weights[cls * n_features() + feature]; }
};

struct FitOptions {
  double lambda = 1.0;
  double tol = 1e-8;
  std::size_t max_iter = 5000;
  /// Optional starting point, laid out per class as [intercept, weights...].
  std::vector<double> init;
};

namespace logit_detail {

// Parameter vector layout: class c occupies [c * (P + 1), (c + 1) * (P + 1)), intercept first.

inline void logits(std::span<const double> theta, std::span<const double> x, std::size_t C, std::size_t P,
                   std::vector<double>& z) {
  z.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double* t = theta.data() + c * (P + 1);
    double s = t[0];
    for (std::size_t j = 0; j < P; ++j) s += t[j + 1] * x[j];
    z[c] = s;
  }
}

/// In-place softmax; returns log-sum-exp.
inline double softmax(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
  return m + std::log(s);
}

}  // namespace logit_detail

/// Mean cross-entropy + lambda / (2N) * ||weights||^2 (intercepts unpenalized). `y` holds
/// class indices 0..C-1. Fills `grad` when non-null.
inline double penalized_loss(std::span<const double> theta, const MatrixView& X, std::span<const std::size_t> y,
                             std::size_t C, double lambda, std::vector<double>* grad = nullptr) {
  const std::size_t N = X.rows, P = X.cols;
  if (grad) grad->assign(theta.size(), 0.0);
  std::vector<double> z;
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto x = X.row(i);
    logit_detail::logits(theta, x, C, P, z);
    const double zy = z[y[i]];
    const double lse = logit_detail::softmax(z);
    loss += lse - zy;
    if (grad) {
      for (std::size_t c = 0; c < C; ++c) {
        const double r = z[c] - (c == y[i] ? 1.0 : 0.0);
        double* g = grad->data() + c * (P + 1);
        g[0] += r;
        for (std::size_t j = 0; j < P; ++j) g[j + 1] += r * x[j];
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(N);
  double penalty = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < P; ++j) {
      const double w = theta[c * (P + 1) + j + 1];
      penalty += w * w;
    }
  if (grad) {
    for (double& g : *grad) g *= inv_n;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < P; ++j) (*grad)[c * (P + 1) + j + 1] += lambda * inv_n * theta[c * (P + 1) + j + 1];
  }
  return loss * inv_n + 0.5 * lambda * inv_n * penalty;
}

inline std::vector<double> pack_parameters(const MultinomialLogit& m) {
  const std::size_t C = m.n_classes(), P = m.n_features();
  std::vector<double> theta(C * (P + 1));
  for (std::size_t c = 0; c < C; ++c) {
    theta[c * (P + 1)] = m.intercepts[c];
    for (std::size_t j = 0; j < P; ++j) theta[c * (P + 1) + j + 1] = m.weights[c * P + j];
  }
  return theta;
}

inline void unpack_parameters(std::span<const double> theta, MultinomialLogit& m) {
  const std::size_t C = m.n_classes(), P = m.n_features();
  m.weights.assign(C * P, 0.0);
  m.intercepts.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    m.intercepts[c] = theta[c * (P + 1)];
    for (std::size_t j = 0; j < P; ++j) m.weights[c * P + j] = theta[c * (P + 1) + j + 1];
  }
}

/// Subtracts the across-class mean from every weight column and from the intercepts.
/// Predictions are unchanged.
inline void apply_sum_to_zero(MultinomialLogit& m) {
  const std::size_t C = m.n_classes(), P = m.n_features();
  for (std::size_t j = 0; j < P; ++j) {
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += m.weights[c * P + j];
    mean /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) m.weights[c * P + j] -= mean;
  }
  const double mean = std::accumulate(m.intercepts.begin(), m.intercepts.end(), 0.0) / static_cast<double>(C);
  for (double& b : m.intercepts) b -= mean;
}

inline std::vector<std::size_t> class_indices(std::span<const int> y, const std::vector<int>& classes) {
  std::vector<std::size_t> idx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), y[i]);
    if (it == classes.end() || *it != y[i])
      throw Error(ErrorKind::InvalidArgument, "label " + std::to_string(y[i]) + " is not a model class");
    idx[i] = static_cast<std::size_t>(it - classes.begin());
  }
  return idx;
}

/// Full-batch gradient descent with Barzilai-Borwein trial steps and Armijo backtracking, so
/// every accepted step lowers the penalized loss. Converged when the gradient's max-norm is
/// below `tol`; afterwards the sum-to-zero identification is applied. A run that hits
/// max_iter is returned with `convergence.converged == false`.
inline MultinomialLogit fit(const MatrixView& X, std::span<const int> y, std::vector<std::string> covariates,
                            const FitOptions& opt = {}, std::vector<double>* loss_history = nullptr) {
  if (y.size() != X.rows) throw Error(ErrorKind::LengthMismatch, "one label per row required");
  if (covariates.size() != X.cols) throw Error(ErrorKind::DimensionMismatch, "covariate names vs columns");
  if (!(opt.lambda >= 0.0) || !std::isfinite(opt.lambda)) throw Error(ErrorKind::InvalidArgument, "lambda must be >= 0");
  for (double v : X.data)
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "covariates contain non-finite values");

  MultinomialLogit model;
  const std::set<int> distinct(y.begin(), y.end());
  model.classes.assign(distinct.begin(), distinct.end());
  if (model.classes.size() < 2) throw Error(ErrorKind::SingleClass, "need at least 2 distinct labels");
  model.covariates = std::move(covariates);
  model.lambda = opt.lambda;
  const std::size_t C = model.n_classes(), P = X.cols;
  const auto yi = class_indices(y, model.classes);

  std::vector<double> theta = opt.init.empty() ? std::vector<double>(C * (P + 1), 0.0) : opt.init;
  if (theta.size() != C * (P + 1)) throw Error(ErrorKind::DimensionMismatch, "initial parameter vector size");

  std::vector<double> grad, grad_new, trial(theta.size());
  double loss = penalized_loss(theta, X, yi, C, opt.lambda, &grad);
  if (loss_history) loss_history->assign(1, loss);
  const auto inf_norm = [](const std::vector<double>& g) {
    double m = 0.0;
    for (double v : g) m = std::max(m, std::abs(v));
    return m;
  };

  double step = 1.0;
  ConvergenceRecord& rec = model.convergence;
  for (rec.iterations = 0; rec.iterations < opt.max_iter; ++rec.iterations) {
    if (inf_norm(grad) < opt.tol) {
      rec.converged = true;
      break;
    }
    double g2 = 0.0;
    for (double v : grad) g2 += v * v;
    double t = step;
    double loss_new = loss;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      for (std::size_t i = 0; i < theta.size(); ++i) trial[i] = theta[i] - t * grad[i];
      loss_new = penalized_loss(trial, X, yi, C, opt.lambda, &grad_new);
      if (std::isfinite(loss_new) && loss_new <= loss - 1e-4 * t * g2) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;  // no further decrease representable
    double ss = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double s = trial[i] - theta[i];
      ss += s * s;
      sy += s * (grad_new[i] - grad[i]);
    }
    step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : 2.0 * t;
    theta.swap(trial);
    grad.swap(grad_new);
    loss = loss_new;
    if (loss_history) loss_history->push_back(loss);
  }
  if (!rec.converged && inf_norm(grad) < opt.tol) rec.converged = true;
  rec.gradient_inf_norm = inf_norm(grad);
  rec.loss = loss;
  for (double v : theta)
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "fit diverged");

  unpack_parameters(theta, model);
  apply_sum_to_zero(model);
  model.fitted = true;
  return model;
}

/// Softmax of intercepts + weights . x.
inline std::vector<double> predict_proba(const MultinomialLogit& model, std::span<const double> x) {
  if (x.size() != model.n_features())
    throw Error(ErrorKind::DimensionMismatch, "expected " + std::to_string(model.n_features()) + " covariates, got " +
                                                  std::to_string(x.size()));
  const auto theta = pack_parameters(model);
  std::vector<double> z;
  logit_detail::logits(theta, x, model.n_classes(), model.n_features(), z);
  logit_detail::softmax(z);
  return z;
}

/// Index of the largest probability; exact ties resolve to the earliest.
inline std::size_t argmax_first(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

inline int predict(const MultinomialLogit& model, std::span<const double> x) {
  return model.classes[argmax_first(predict_proba(model, x))];
}

inline std::vector<int> predict_all(const MultinomialLogit& model, const MatrixView& X) {
  std::vector<int> out(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) out[i] = predict(model, X.row(i));
  return out;
}

struct ClassMetrics {
  int label = 0;
  std::size_t tp = 0, fp = 0, fn = 0, support = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricsReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
};

/// Accuracy, per-class precision/recall/F1, macro and support-weighted F1. Classes are the
/// union of `class_set` and every label seen; a zero denominator makes the ratio 0.
inline MetricsReport evaluate(std::span<const int> y_true, std::span<const int> y_pred,
                              std::span<const int> class_set = {}) {
  if (y_true.size() != y_pred.size()) throw Error(ErrorKind::LengthMismatch, "y_true and y_pred differ in length");
  if (y_true.empty()) throw Error(ErrorKind::LengthMismatch, "evaluate needs at least one instance");
  std::set<int> labels(class_set.begin(), class_set.end());
  labels.insert(y_true.begin(), y_true.end());
  labels.insert(y_pred.begin(), y_pred.end());

  MetricsReport r;
  r.n = y_true.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.n; ++i) correct += y_true[i] == y_pred[i] ? 1 : 0;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);

  const auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  for (int label : labels) {
    ClassMetrics m;
    m.label = label;
    for (std::size_t i = 0; i < r.n; ++i) {
      const bool t = y_true[i] == label, p = y_pred[i] == label;
      m.tp += t && p;
      m.fp += !t && p;
      m.fn += t && !p;
      m.support += t;
    }
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.macro_f1 += m.f1;
    r.weighted_f1 += static_cast<double>(m.support) * m.f1;
    r.per_class.push_back(m);
  }
  r.macro_f1 /= static_cast<double>(r.per_class.size());
  r.weighted_f1 /= static_cast<double>(r.n);
  return r;
}

/// Largest discrepancy between the analytic gradient of the penalized loss at the model's
/// parameters and central differences with step h, each scaled by max(|analytic|,
/// |numeric|, 1e-3).
inline double gradient_check(const MultinomialLogit& model, const MatrixView& X, std::span<const int> y,
                             double h = 1e-5) {
  const auto yi = class_indices(y, model.classes);
  const std::size_t C = model.n_classes();
  std::vector<double> theta = pack_parameters(model);
  std::vector<double> grad;
  penalized_loss(theta, X, yi, C, model.lambda, &grad);
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = penalized_loss(theta, X, yi, C, model.lambda);
    theta[i] = saved - h;
    const double down = penalized_loss(theta, X, yi, C, model.lambda);
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(grad[i]), std::abs(numeric), 1e-3});
    worst = std::max(worst, std::abs(grad[i] - numeric) / scale);
  }
  return worst;
}

/// One row per covariate (intercept first), one column per cluster.
inline std::string coefficient_table(const MultinomialLogit& model) {
  if (!model.fitted) throw Error(ErrorKind::NotFitted, "model has not been fitted");
  std::string out = "covariate";
  for (int c : model.classes) out += ",cluster_" + std::to_string(c);
  out += "\nintercept";
  for (double b : model.intercepts) out += ',' + text::format_double(b);
  out += '\n';
  for (std::size_t j = 0; j < model.n_features(); ++j) {
    out += text::csv_escape(model.covariates[j]);
    for (std::size_t c = 0; c < model.n_classes(); ++c) out += ',' + text::format_double(model.weight(c, j));
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json(const MultinomialLogit& m) {
  nlohmann::json weights = nlohmann::json::array();
  for (std::size_t c = 0; c < m.n_classes(); ++c)
    weights.push_back(std::vector<double>(m.weights.begin() + static_cast<std::ptrdiff_t>(c * m.n_features()),
                                          m.weights.begin() + static_cast<std::ptrdiff_t>((c + 1) * m.n_features())));
  return {{"classes", m.classes},
          {"covariates", m.covariates},
          {"lambda", m.lambda},
          {"standardized", m.standardized},
          {"weights", weights},
          {"intercepts", m.intercepts},
          {"convergence",
           {{"iterations", m.convergence.iterations},
            {"gradient_inf_norm", m.convergence.gradient_inf_norm},
            {"loss", m.convergence.loss},
            {"converged", m.convergence.converged}}}};
}

inline MultinomialLogit logit_from_json(const nlohmann::json& j) {
  try {
    MultinomialLogit m;
    m.classes = j.at("classes").get<std::vector<int>>();
    m.covariates = j.at("covariates").get<std::vector<std::string>>();
    m.lambda = j.at("lambda").get<double>();
    m.standardized = j.value("standardized", false);
    for (const auto& row : j.at("weights")) {
      const auto w = row.get<std::vector<double>>();
      if (w.size() != m.covariates.size()) throw Error(ErrorKind::DimensionMismatch, "weight row length");
      m.weights.insert(m.weights.end(), w.begin(), w.end());
    }
    m.intercepts = j.at("intercepts").get<std::vector<double>>();
    if (m.intercepts.size() != m.classes.size() || m.weights.size() != m.classes.size() * m.covariates.size())
      throw Error(ErrorKind::DimensionMismatch, "model parameter shapes");
    const auto& c = j.at("convergence");
    m.convergence = {c.at("iterations").get<std::size_t>(), c.at("gradient_inf_norm").get<double>(),
                     c.at("loss").get<double>(), c.at("converged").get<bool>()};
    m.fitted = true;
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedLine, std::string("model JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& m : r.per_class)
    per_class.push_back({{"class", m.label},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support},
                         {"tp", m.tp},
                         {"fp", m.fp},
                         {"fn", m.fn}});
  return {{"n", r.n},
          {"accuracy", r.accuracy},
          {"macro_f1", r.macro_f1},
          {"weighted_f1", r.weighted_f1},
          {"per_class", per_class}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) try {
  MetricsReport r;
  r.n = j.at("n").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.weighted_f1 = j.at("weighted_f1").get<double>();
  for (const auto& c : j.at("per_class")) {
    ClassMetrics m;
    m.label = c.at("class").get<int>();
    m.precision = c.at("precision").get<double>();
    m.recall = c.at("recall").get<double>();
    m.f1 = c.at("f1").get<double>();
    m.support = c.at("support").get<std::size_t>();
    m.tp = c.at("tp").get<std::size_t>();
    m.fp = c.at("fp").get<std::size_t>();
    m.fn = c.at("fn").get<std::size_t>();
    r.per_class.push_back(m);
  }
  return r;
} catch (const nlohmann::json::exception& e) {
  throw Error(ErrorKind::MalformedLine, std::string("metrics JSON: ") + e.what());
}

inline std::string metrics_csv(const MetricsReport& r) {
  std::string out = "class,precision,recall,f1,support,tp,fp,fn\n";
  for (const auto& m : r.per_class)
    out += std::to_string(m.label) + ',' + text::format_double(m.precision) + ',' + text::format_double(m.recall) +
           ',' + text::format_double(m.f1) + ',' + std::to_string(m.support) + ',' + std::to_string(m.tp) + ',' +
           std::to_string(m.fp) + ',' + std::to_string(m.fn) + '\n';
  return out;
}

/// Seeded shuffle split; returns (train, test) row indices, each sorted.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::size_t n, double fraction,
                                                                                    std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorKind::InvalidArgument, "holdout fraction must be in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "holdout"));
  rng.shuffle(idx.begin(), idx.end());
  const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

}  // namespace vibrancy
