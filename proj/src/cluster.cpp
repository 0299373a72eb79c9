#include "pplr/cluster.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace pplr {

void DbscanParams::validate() const {
  if (!(eps > 0.0)) throw ConfigError("dbscan.eps must be > 0");
  if (min_samples < 1) throw ConfigError("dbscan.min_samples must be >= 1");
}

PseudoLabels dbscan(const DistanceMatrix& dist, const DbscanParams& params) {
  params.validate();
  if (!dist.is_symmetric()) throw std::invalid_argument("dbscan: distance matrix is not symmetric");
  const std::size_t n = dist.size();

  std::vector<std::vector<std::uint32_t>> neigh(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && dist(i, j) <= params.eps) neigh[i].push_back(static_cast<std::uint32_t>(j));
  });
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) core[i] = neigh[i].size() >= params.min_samples;

  // Grow core components in ascending seed order.
  constexpr int kUnset = -2;
  std::vector<int> comp(n, kUnset);
  int n_comp = 0;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || comp[seed] != kUnset) continue;
    std::deque<std::uint32_t> queue{static_cast<std::uint32_t>(seed)};
    comp[seed] = n_comp;
    while (!queue.empty()) {
      const auto p = queue.front();
      queue.pop_front();
      for (auto q : neigh[p])
        if (core[q] && comp[q] == kUnset) {
          comp[q] = n_comp;
          queue.push_back(q);
        }
    }
    ++n_comp;
  }

  // Border points: first core neighbour in ascending index order.
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    comp[i] = -1;
    for (auto q : neigh[i])
      if (core[q]) {
        comp[i] = comp[q];
        break;
      }
  }

  // Canonical renumbering by smallest member index.
  std::vector<int> remap(static_cast<std::size_t>(n_comp), -1);
  int next = 0;
  PseudoLabels out;
  out.labels.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (comp[i] < 0) continue;
    int& r = remap[static_cast<std::size_t>(comp[i])];
    if (r < 0) r = next++;
    out.labels[i] = r;
  }
  out.k_clusters = next;
  return out;
}

Matrix cluster_centroids(const Matrix& features, const PseudoLabels& labels) {
  if (labels.size() != features.rows()) throw std::invalid_argument("centroids: label count mismatch");
  if (labels.k_clusters < 1) throw std::invalid_argument("centroids: no clusters");
  const auto k = static_cast<std::size_t>(labels.k_clusters);
  Matrix sums(k, features.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const int l = labels.labels[i];
    if (l < 0) continue;
    auto dst = sums.row(static_cast<std::size_t>(l));
    const auto src = features.row(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t b = 0; b < k; ++b) {
    if (counts[b] == 0) throw std::invalid_argument("centroids: empty cluster " + std::to_string(b));
    for (double& v : sums.row(b)) v /= static_cast<double>(counts[b]);
  }
  return sums;
}

}  // namespace pplr
