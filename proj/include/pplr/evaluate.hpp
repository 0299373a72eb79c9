#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pplr/core.hpp"

namespace pplr {

/// Mean of precision@r over the positions r of relevant items.
/// Throws std::invalid_argument when nothing is relevant.
double average_precision(std::span<const std::uint8_t> relevance);

struct RetrievalResult {
  double map = 0.0;
  std::vector<std::size_t> ranks;
  std::vector<double> cmc;  // aligned with ranks
  std::size_t n_queries = 0;   // queries that had at least one valid positive
  std::size_t n_excluded = 0;  // queries without one
};

struct LabeledSet {
  const Matrix& features;
  std::span<const std::uint32_t> ids;
  std::span<const std::uint16_t> cams;
};

/// Cross-camera retrieval protocol: gallery entries sharing both id and camera
/// with the query are dropped before ranking by Euclidean distance (ties by
/// gallery index).
RetrievalResult map_cmc(const LabeledSet& query, const LabeledSet& gallery,
                        const std::vector<std::size_t>& ranks = {1, 5, 10});

struct LabelQuality {
  double accuracy = 0.0;  // over non-outliers, clusters mapped to their majority identity
  double pairwise_precision = 0.0;
  double pairwise_recall = 0.0;
  double pairwise_f = 0.0;
  double outlier_fraction = 0.0;
};

/// Quality of a hard assignment (-1 = outlier) against ground-truth identities.
/// Outliers never pair with anything; accuracy is 0 when every sample is an outlier.
LabelQuality label_quality(std::span<const int> assignment, std::span<const std::uint32_t> gt_ids);

/// Argmax of each soft label; entries without a label stay -1.
std::vector<int> argmax_assignment(const std::vector<std::vector<double>>& soft, std::span<const int> fallback);

}  // namespace pplr
