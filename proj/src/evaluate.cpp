#include "pplr/evaluate.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace pplr {

double average_precision(std::span<const std::uint8_t> relevance) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < relevance.size(); ++r) {
    if (!relevance[r]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) throw std::invalid_argument("average_precision: no relevant items");
  return sum / static_cast<double>(hits);
}

RetrievalResult map_cmc(const LabeledSet& query, const LabeledSet& gallery, const std::vector<std::size_t>& ranks) {
  const std::size_t nq = query.features.rows();
  const std::size_t ng = gallery.features.rows();
  if (query.ids.size() != nq || query.cams.size() != nq || gallery.ids.size() != ng || gallery.cams.size() != ng)
    throw std::invalid_argument("map_cmc: ids and cameras required for every row");
  if (query.features.cols() != gallery.features.cols()) throw std::invalid_argument("map_cmc: dim mismatch");

  std::vector<double> ap(nq, 0.0);
  std::vector<long> first_hit(nq, -1);  // -1: query excluded
  parallel_for(nq, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> dist(ng);
    std::vector<std::uint32_t> order;
    std::vector<std::uint8_t> rel;
    for (std::size_t q = lo; q < hi; ++q) {
      const auto fq = query.features.row(q);
      for (std::size_t g = 0; g < ng; ++g) {
        const auto fg = gallery.features.row(g);
        double s = 0.0;
        for (std::size_t k = 0; k < fq.size(); ++k) s += (fq[k] - fg[k]) * (fq[k] - fg[k]);
        dist[g] = s;
      }
      order.clear();
      for (std::size_t g = 0; g < ng; ++g)
        if (!(gallery.ids[g] == query.ids[q] && gallery.cams[g] == query.cams[q]))
          order.push_back(static_cast<std::uint32_t>(g));
      std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
      });
      rel.assign(order.size(), 0);
      long first = -1;
      for (std::size_t r = 0; r < order.size(); ++r) {
        rel[r] = gallery.ids[order[r]] == query.ids[q];
        if (rel[r] && first < 0) first = static_cast<long>(r);
      }
      if (first < 0) continue;
      first_hit[q] = first;
      ap[q] = average_precision(rel);
    }
  });

  RetrievalResult out;
  out.ranks = ranks;
  out.cmc.assign(ranks.size(), 0.0);
  for (std::size_t q = 0; q < nq; ++q) {
    if (first_hit[q] < 0) {
      ++out.n_excluded;
      continue;
    }
    ++out.n_queries;
    out.map += ap[q];
    for (std::size_t r = 0; r < ranks.size(); ++r)
      if (static_cast<std::size_t>(first_hit[q]) < ranks[r]) out.cmc[r] += 1.0;
  }
  if (out.n_queries > 0) {
    const double inv = 1.0 / static_cast<double>(out.n_queries);
    out.map *= inv;
    for (double& c : out.cmc) c *= inv;
  }
  return out;
}

namespace {
double pairs(std::size_t n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n > 0 ? n - 1 : 0); }
}  // namespace

LabelQuality label_quality(std::span<const int> assignment, std::span<const std::uint32_t> gt_ids) {
  if (assignment.size() != gt_ids.size()) throw std::invalid_argument("label_quality: ground truth missing");
  const std::size_t n = assignment.size();
  std::map<int, std::map<std::uint32_t, std::size_t>> table;
  std::map<std::uint32_t, std::size_t> id_sizes;
  std::size_t outliers = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ++id_sizes[gt_ids[i]];
    if (assignment[i] < 0) {
      ++outliers;
      continue;
    }
    ++table[assignment[i]][gt_ids[i]];
  }

  LabelQuality q;
  q.outlier_fraction = n == 0 ? 0.0 : static_cast<double>(outliers) / static_cast<double>(n);

  std::size_t correct = 0;
  double tp = 0.0, predicted = 0.0, actual = 0.0;
  for (const auto& [cluster, row] : table) {
    std::size_t size = 0, best = 0;
    for (const auto& [id, count] : row) {
      size += count;
      best = std::max(best, count);  // map iteration gives the smaller id on ties
      tp += pairs(count);
    }
    correct += best;
    predicted += pairs(size);
  }
  for (const auto& [id, count] : id_sizes) actual += pairs(count);

  const std::size_t clustered = n - outliers;
  q.accuracy = clustered == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(clustered);
  q.pairwise_precision = predicted > 0 ? tp / predicted : 0.0;
  q.pairwise_recall = actual > 0 ? tp / actual : 0.0;
  const double pr = q.pairwise_precision + q.pairwise_recall;
  q.pairwise_f = pr > 0 ? 2.0 * q.pairwise_precision * q.pairwise_recall / pr : 0.0;
  return q;
}

std::vector<int> argmax_assignment(const std::vector<std::vector<double>>& soft, std::span<const int> fallback) {
  std::vector<int> out(fallback.begin(), fallback.end());
  for (std::size_t i = 0; i < soft.size() && i < out.size(); ++i)
    if (!soft[i].empty())
      out[i] = static_cast<int>(std::max_element(soft[i].begin(), soft[i].end()) - soft[i].begin());
  return out;
}

}  // namespace pplr
