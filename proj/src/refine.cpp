#include "pplr/refine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pplr {

void RefinementConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("refinement.beta out of [0,1]");
  if (constant_alpha && !(*constant_alpha >= 0.0 && *constant_alpha <= 1.0))
    throw ConfigError("refinement.constant_alpha out of [0,1]");
}

double RefinementConfig::alpha_for(double agreement, std::size_t epoch) const {
  if (epoch < aals_warmup_epochs) return 1.0;
  return constant_alpha ? *constant_alpha : agreement;
}

SoftLabel aals_target(int label, std::size_t k_clusters, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("aals_target: alpha out of [0,1]");
  if (label < 0 || static_cast<std::size_t>(label) >= k_clusters)
    throw std::invalid_argument("aals_target: label out of range");
  const double base = (1.0 - alpha) / static_cast<double>(k_clusters);
  std::vector<double> p(k_clusters, base);
  p[static_cast<std::size_t>(label)] = alpha + base;
  return SoftLabel(std::move(p));
}

std::vector<double> pglr_weights(std::span<const double> agreements) {
  std::vector<double> w(agreements.size());
  if (w.empty()) return w;
  const double mx = *std::max_element(agreements.begin(), agreements.end());
  double total = 0.0;
  for (std::size_t n = 0; n < w.size(); ++n) {
    w[n] = std::exp(agreements[n] - mx);
    total += w[n];
  }
  for (double& x : w) x /= total;
  return w;
}

SoftLabel pglr_target(int label, std::size_t k_clusters, const std::vector<SoftLabel>& part_preds,
                      std::span<const double> weights, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("pglr_target: beta out of [0,1]");
  if (label < 0 || static_cast<std::size_t>(label) >= k_clusters)
    throw std::invalid_argument("pglr_target: label out of range");
  if (weights.size() != part_preds.size()) throw std::invalid_argument("pglr_target: weight count mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-6) throw std::invalid_argument("pglr_target: weights do not sum to 1");

  std::vector<double> p(k_clusters, 0.0);
  for (std::size_t n = 0; n < part_preds.size(); ++n) {
    if (part_preds[n].size() != k_clusters) throw std::invalid_argument("pglr_target: prediction length != K");
    for (std::size_t c = 0; c < k_clusters; ++c) p[c] += weights[n] * part_preds[n][c];
  }
  for (double& v : p) v *= (1.0 - beta);
  p[static_cast<std::size_t>(label)] += beta;
  return SoftLabel(std::move(p));
}

}  // namespace pplr
