// Synthetic city end to end: signatures, clusters, features, logit.
#include <iostream>

#include "vibrancy/clustering.hpp"
#include "vibrancy/features.hpp"
#include "vibrancy/model.hpp"
#include "vibrancy/signatures.hpp"
#include "vibrancy/synth.hpp"

int main() {
  using namespace vibrancy;
  SynthSpec spec;
  spec.seed = 7;
  spec.n_cells = 300;
  spec.archetype_weights = {0.5, 0.3, 0.2};
  const auto truth = generate(spec);

  const auto raw = build_signatures(truth.traffic, truth.taxonomy, truth.region, spec.day_type);
  const auto rr = relative_risk(raw);
  SelectKOptions sel;
  sel.seed = 42;
  const auto [clusters, report] = select_k(rr.view(), sel);
  std::cout << "chosen k = " << report.chosen_k << ", ARI vs truth = "
            << adjusted_rand_index(clusters.labels, truth.archetype_of_cell) << "\n";

  ThirdPlaceTaxonomy places;
  for (const auto& [label, cat] : truth.third_place_labels) places.add(label, cat);
  const auto features = standardize(build_features(truth.pois, places, truth.region));
  const auto logit = fit(features.view(), clusters.labels, covariate_names());
  const auto metrics = evaluate(clusters.labels, predict_all(logit, features.view()));
  std::cout << "fit converged = " << std::boolalpha << logit.convergence.converged
            << ", accuracy = " << metrics.accuracy << "\n\n"
            << coefficient_table(logit);
}
