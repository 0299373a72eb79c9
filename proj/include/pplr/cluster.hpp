#pragma once

#include "pplr/core.hpp"
#include "pplr/neighbors.hpp"

namespace pplr {

struct DbscanParams {
  double eps = 0.6;
  /// Neighbours within eps required for a core point, not counting the point itself.
  std::size_t min_samples = 4;

  void validate() const;
};

/// DBSCAN over a precomputed dissimilarity (neighbourhood is dist <= eps).
///
/// Core points are joined into clusters through eps-reachability. A border
/// point joins the cluster of its lowest-index core neighbour. Clusters are
/// numbered 0..K-1 in order of their smallest member index; noise is -1.
PseudoLabels dbscan(const DistanceMatrix& dist, const DbscanParams& params);

/// K x D matrix of per-cluster means; outliers are ignored.
Matrix cluster_centroids(const Matrix& features, const PseudoLabels& labels);

}  // namespace pplr
