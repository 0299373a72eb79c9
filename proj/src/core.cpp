#include "pplr/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

namespace pplr {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

void check_finite(const Matrix& m, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (double v : m.row(r))
      if (!std::isfinite(v))
        throw std::invalid_argument(std::string(what) + ": non-finite value in row " + std::to_string(r));
}

}  // namespace

void FeatureBank::validate() const {
  const std::size_t n = n_samples();
  const std::size_t d = dim();
  if (n == 0 || d == 0) throw std::invalid_argument("feature bank: empty global matrix");
  check_finite(global, "global");
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].rows() != n || parts[p].cols() != d)
      throw std::invalid_argument("feature bank: part " + std::to_string(p) + " shape mismatch");
    check_finite(parts[p], "part");
  }
  if (camera_ids && camera_ids->size() != n)
    throw std::invalid_argument("feature bank: camera_ids length mismatch");
  if (gt_ids && gt_ids->size() != n) throw std::invalid_argument("feature bank: gt_ids length mismatch");
  if (normalized) {
    for (std::size_t s = 0; s < n_spaces(); ++s) {
      const Matrix& m = space(s);
      for (std::size_t r = 0; r < n; ++r)
        if (std::abs(std::sqrt(dot(m.row(r), m.row(r))) - 1.0) > 1e-6)
          throw std::invalid_argument("feature bank: row " + std::to_string(r) + " not unit norm");
    }
  }
}

FeatureBank normalized(const FeatureBank& bank) {
  FeatureBank out = bank;
  for (std::size_t s = 0; s < out.n_spaces(); ++s) l2_normalize_inplace(out.space(s));
  out.normalized = true;
  return out;
}

std::size_t PseudoLabels::outlier_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), -1));
}

void PseudoLabels::validate() const {
  std::vector<char> seen(static_cast<std::size_t>(std::max(k_clusters, 0)), 0);
  for (int l : labels) {
    if (l < -1 || l >= k_clusters) throw std::invalid_argument("pseudo labels: value out of range");
    if (l >= 0) seen[static_cast<std::size_t>(l)] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw std::invalid_argument("pseudo labels: empty cluster");
}

void RankedLists::validate() const {
  const std::size_t n = n_samples();
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::uint32_t> s;
    for (auto j : row(i)) {
      if (j >= n || j == i) throw std::invalid_argument("ranked lists: bad index in row " + std::to_string(i));
      if (!s.insert(j).second) throw std::invalid_argument("ranked lists: duplicate index in row " + std::to_string(i));
    }
  }
}

double CrossAgreement::column_mean(std::size_t part) const {
  if (scores.rows() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < scores.rows(); ++i) s += scores(i, part);
  return s / static_cast<double>(scores.rows());
}

SoftLabel::SoftLabel(std::vector<double> probs) : probs_(std::move(probs)) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw std::invalid_argument("soft label: negative or NaN entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance)
    throw std::invalid_argument("soft label: entries sum to " + std::to_string(sum));
}

SoftLabel SoftLabel::uniform(std::size_t k) {
  return SoftLabel(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

SoftLabel SoftLabel::one_hot(std::size_t label, std::size_t k) {
  std::vector<double> p(k, 0.0);
  p.at(label) = 1.0;
  return SoftLabel(std::move(p));
}

std::size_t SoftLabel::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

void l2_normalize_inplace(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double norm = std::sqrt(dot(row, row));
    if (!std::isfinite(norm)) throw NumericalError("non-finite row " + std::to_string(r));
    if (norm == 0.0) throw NumericalError("zero-norm row " + std::to_string(r));
    for (double& v : row) v /= norm;
  }
}

Matrix l2_normalize(const Matrix& m) {
  Matrix out = m;
  l2_normalize_inplace(out);
  return out;
}

namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(n, 1); }
std::size_t num_threads() { return g_threads; }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    if (n > 0) body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(body, b, e);
  }
  for (auto& t : pool) t.join();
}

}  // namespace pplr
