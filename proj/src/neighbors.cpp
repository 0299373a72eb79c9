#include "pplr/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace pplr {

bool DistanceMatrix::is_symmetric(double tol) const {
  const std::size_t n = size();
  if (values.cols() != n) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (values(i, i) != 0.0) return false;
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(values(i, j) - values(j, i)) > tol) return false;
  }
  return true;
}

DistanceMatrix pairwise_sq_euclidean(const Matrix& features) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  DistanceMatrix out{Matrix(n, n), Metric::kSquaredEuclidean};
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto xi = features.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const auto xj = features.row(j);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = xi[k] - xj[k];
          s += diff * diff;
        }
        out.values(i, j) = s;
      }
    }
  });
  return out;
}

namespace {

// Sorted (distance, index) order over all j != i, truncated to k.
void rank_row(const DistanceMatrix& dist, std::size_t i, std::size_t k, std::vector<std::uint32_t>& scratch,
              std::uint32_t* out) {
  const std::size_t n = dist.size();
  scratch.clear();
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) scratch.push_back(static_cast<std::uint32_t>(j));
  const auto less = [&](std::uint32_t a, std::uint32_t b) {
    const double da = dist(i, a), db = dist(i, b);
    return da < db || (da == db && a < b);
  };
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end(), less);
  std::copy_n(scratch.begin(), k, out);
}

}  // namespace

RankedLists topk_ranked_lists(const DistanceMatrix& dist, std::size_t k, int space_id) {
  const std::size_t n = dist.size();
  if (k >= n) throw std::invalid_argument("topk: k must be < N");
  RankedLists out;
  out.space_id = space_id;
  out.k = k;
  out.lists.assign(n * k, 0);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    std::vector<std::uint32_t> scratch;
    scratch.reserve(n);
    for (std::size_t i = b; i < e; ++i) rank_row(dist, i, k, scratch, out.lists.data() + i * k);
  });
  return out;
}

std::vector<std::vector<std::uint32_t>> initial_rank_with_self(const DistanceMatrix& dist, std::size_t k) {
  const std::size_t n = dist.size();
  if (k >= n) throw std::invalid_argument("initial rank: k must be < N");
  std::vector<std::vector<std::uint32_t>> ranks(n, std::vector<std::uint32_t>(k + 1));
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    std::vector<std::uint32_t> scratch;
    scratch.reserve(n);
    for (std::size_t i = b; i < e; ++i) {
      ranks[i][0] = static_cast<std::uint32_t>(i);
      rank_row(dist, i, k, scratch, ranks[i].data() + 1);
    }
  });
  return ranks;
}

namespace {

using SparseRow = std::vector<std::pair<std::uint32_t, double>>;  // sorted by index

// Members j of i's top-(k+1) list whose own top-(k+1) list contains i.
std::vector<std::uint32_t> reciprocal_set(const std::vector<std::vector<std::uint32_t>>& rank, std::size_t i,
                                          std::size_t k) {
  std::vector<std::uint32_t> out;
  for (std::size_t a = 0; a <= k; ++a) {
    const std::uint32_t j = rank[i][a];
    const auto& back = rank[j];
    if (std::find(back.begin(), back.begin() + static_cast<std::ptrdiff_t>(k + 1), i) !=
        back.begin() + static_cast<std::ptrdiff_t>(k + 1))
      out.push_back(j);
  }
  return out;
}

std::size_t intersection_size(std::vector<std::uint32_t> a, std::vector<std::uint32_t> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::uint32_t> tmp;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(tmp));
  return tmp.size();
}

}  // namespace

DistanceMatrix k_reciprocal_jaccard(const Matrix& features, const JaccardParams& params) {
  const std::size_t n = features.rows();
  const std::size_t k1 = params.k1;
  const std::size_t k2 = params.k2;
  if (k1 == 0 || k1 >= n) throw std::invalid_argument("k_reciprocal_jaccard: requires 0 < k1 < N");
  if (k2 == 0 || k2 > k1) throw std::invalid_argument("k_reciprocal_jaccard: requires 1 <= k2 <= k1");
  if (!(params.lambda >= 0.0 && params.lambda <= 1.0))
    throw std::invalid_argument("k_reciprocal_jaccard: lambda out of [0,1]");

  const DistanceMatrix base = pairwise_sq_euclidean(features);
  const auto rank = initial_rank_with_self(base, k1);
  // Half-size sets use round-half-even to match the reference re-ranking code.
  const auto k1_half = static_cast<std::size_t>(std::nearbyint(static_cast<double>(k1) / 2.0));

  std::vector<std::vector<std::uint32_t>> recip(n), recip_half(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      recip[i] = reciprocal_set(rank, i, k1);
      recip_half[i] = reciprocal_set(rank, i, k1_half);
    }
  });

  std::vector<SparseRow> encoded(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      std::vector<std::uint32_t> expanded = recip[i];
      for (std::uint32_t cand : recip[i]) {
        const auto& cset = recip_half[cand];
        if (3 * intersection_size(cset, recip[i]) > 2 * cset.size())
          expanded.insert(expanded.end(), cset.begin(), cset.end());
      }
      std::sort(expanded.begin(), expanded.end());
      expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());
      SparseRow row;
      row.reserve(expanded.size());
      double total = 0.0;
      for (std::uint32_t j : expanded) {
        const double w = std::exp(-base(i, j));
        row.emplace_back(j, w);
        total += w;
      }
      for (auto& [j, w] : row) w /= total;
      encoded[i] = std::move(row);
    }
  });

  // Local query expansion: average the encodings of the top-k2 list (self first).
  std::vector<SparseRow> expanded_enc(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    std::vector<double> acc(n, 0.0);
    std::vector<char> seen(n, 0);
    std::vector<std::uint32_t> touched;
    for (std::size_t i = b; i < e; ++i) {
      touched.clear();
      for (std::size_t a = 0; a < k2; ++a)
        for (const auto& [j, w] : encoded[rank[i][a]]) {
          if (!seen[j]) {
            seen[j] = 1;
            touched.push_back(j);
          }
          acc[j] += w;
        }
      std::sort(touched.begin(), touched.end());
      SparseRow row;
      row.reserve(touched.size());
      for (std::uint32_t j : touched) {
        row.emplace_back(j, acc[j] / static_cast<double>(k2));
        acc[j] = 0.0;
        seen[j] = 0;
      }
      expanded_enc[i] = std::move(row);
    }
  });

  // Inverted index: column j -> rows with nonzero weight.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> inverted(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, w] : expanded_enc[i]) inverted[j].emplace_back(static_cast<std::uint32_t>(i), w);

  std::vector<double> mass(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, w] : expanded_enc[i]) mass[i] += w;

  Matrix jac(n, n, 1.0);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    std::vector<double> min_sum(n, 0.0);
    std::vector<char> seen(n, 0);
    std::vector<std::uint32_t> touched;
    for (std::size_t i = b; i < e; ++i) {
      touched.clear();
      for (const auto& [col, wi] : expanded_enc[i])
        for (const auto& [r, wr] : inverted[col]) {
          if (!seen[r]) {
            seen[r] = 1;
            touched.push_back(r);
          }
          min_sum[r] += std::min(wi, wr);
        }
      for (std::uint32_t r : touched) {
        // sum(max) = sum(a) + sum(b) - sum(min)
        const double max_sum = mass[i] + mass[r] - min_sum[r];
        jac(i, r) = 1.0 - min_sum[r] / max_sum;
        min_sum[r] = 0.0;
        seen[r] = 0;
      }
    }
  });

  double max_base = 0.0;
  for (double v : base.values.data()) max_base = std::max(max_base, v);

  DistanceMatrix out{Matrix(n, n), Metric::kJaccard};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double eu_ij = max_base > 0.0 ? base(i, j) / max_base : 0.0;
      const double eu_ji = max_base > 0.0 ? base(j, i) / max_base : 0.0;
      const double a = (1.0 - params.lambda) * jac(i, j) + params.lambda * eu_ij;
      const double c = (1.0 - params.lambda) * jac(j, i) + params.lambda * eu_ji;
      const double v = std::clamp(0.5 * (a + c), 0.0, 1.0);
      out.values(i, j) = v;
      out.values(j, i) = v;
    }
  return out;
}

}  // namespace pplr
