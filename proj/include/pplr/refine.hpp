#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pplr/core.hpp"

namespace pplr {

struct RefinementConfig {
  double beta = 0.5;
  /// Epochs at the start of training during which part labels stay hard.
  std::size_t aals_warmup_epochs = 5;
  /// When set, every part uses this smoothing weight instead of its agreement score.
  std::optional<double> constant_alpha;

  void validate() const;

  /// Smoothing weight for one (sample, part) at the given epoch.
  double alpha_for(double agreement, std::size_t epoch) const;
};

/// alpha * onehot(label) + (1 - alpha) * uniform.
SoftLabel aals_target(int label, std::size_t k_clusters, double alpha);

/// Softmax of the agreement vector.
std::vector<double> pglr_weights(std::span<const double> agreements);

/// beta * onehot(label) + (1 - beta) * sum_n weights[n] * part_preds[n].
SoftLabel pglr_target(int label, std::size_t k_clusters, const std::vector<SoftLabel>& part_preds,
                      std::span<const double> weights, double beta);

}  // namespace pplr
