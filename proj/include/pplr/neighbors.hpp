#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pplr/core.hpp"

namespace pplr {

enum class Metric { kSquaredEuclidean, kJaccard };

/// Symmetric N x N dissimilarity with an exact zero diagonal.
struct DistanceMatrix {
  Matrix values;
  Metric metric = Metric::kSquaredEuclidean;

  std::size_t size() const { return values.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return values(i, j); }
  bool is_symmetric(double tol = 1e-6) const;
};

DistanceMatrix pairwise_sq_euclidean(const Matrix& features);

/// Row i holds the k nearest j != i, ascending by distance, ties to the smaller index.
RankedLists topk_ranked_lists(const DistanceMatrix& dist, std::size_t k, int space_id);

/// Same ordering as topk_ranked_lists but with the sample itself prepended (k + 1 entries).
std::vector<std::vector<std::uint32_t>> initial_rank_with_self(const DistanceMatrix& dist, std::size_t k);

struct JaccardParams {
  std::size_t k1 = 30;
  std::size_t k2 = 6;
  double lambda = 0.0;
};

/// k-reciprocal encoded Jaccard distance blended with max-normalized Euclidean distance.
///
/// Neighbour sets are mutual top-(k1+1) lists (self included), expanded with the
/// round(k1/2) reciprocal sets of their members whose overlap exceeds 2/3. Each
/// sample is encoded as exp(-d) weights over its expanded set, normalized to sum
/// 1, then averaged over its top-k2 list (query expansion). The result is
/// symmetrized as (D + D^T) / 2 with an exact zero diagonal.
DistanceMatrix k_reciprocal_jaccard(const Matrix& features, const JaccardParams& params);

}  // namespace pplr
