#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pplr {

// Error categories. The CLI maps them onto exit codes 2, 3 and 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

/// N samples, one global and n_parts part feature matrices of identical shape.
struct FeatureBank {
  Matrix global;
  std::vector<Matrix> parts;
  std::optional<std::vector<std::uint16_t>> camera_ids;
  std::optional<std::vector<std::uint32_t>> gt_ids;
  bool normalized = false;

  std::size_t n_samples() const { return global.rows(); }
  std::size_t dim() const { return global.cols(); }
  std::size_t n_parts() const { return parts.size(); }

  /// Feature space by index: 0 is global, 1..n_parts are the parts.
  const Matrix& space(std::size_t s) const { return s == 0 ? global : parts[s - 1]; }
  Matrix& space(std::size_t s) { return s == 0 ? global : parts[s - 1]; }
  std::size_t n_spaces() const { return 1 + parts.size(); }

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

/// Returns a copy of the bank with every row of every space unit-normalized.
FeatureBank normalized(const FeatureBank& bank);

/// Hard cluster assignment; -1 marks an outlier.
struct PseudoLabels {
  std::vector<int> labels;
  int k_clusters = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t outlier_count() const;
  void validate() const;
};

/// Per-sample top-k neighbour indices for one feature space, self excluded.
struct RankedLists {
  int space_id = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> lists;  // N x k row-major

  std::size_t n_samples() const { return k == 0 ? 0 : lists.size() / k; }
  std::span<const std::uint32_t> row(std::size_t i) const { return {lists.data() + i * k, k}; }
  void validate() const;
};

/// N x N_p matrix of scores in [0,1].
struct CrossAgreement {
  Matrix scores;

  std::size_t n_samples() const { return scores.rows(); }
  std::size_t n_parts() const { return scores.cols(); }
  double column_mean(std::size_t part) const;
};

/// Probability vector over the K current clusters.
class SoftLabel {
 public:
  static constexpr double kSumTolerance = 1e-6;

  SoftLabel() = default;
  /// Throws std::invalid_argument on negative entries or a sum off by more than 1e-6.
  explicit SoftLabel(std::vector<double> probs);

  static SoftLabel uniform(std::size_t k);
  static SoftLabel one_hot(std::size_t label, std::size_t k);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t c) const { return probs_[c]; }
  const std::vector<double>& probs() const { return probs_; }
  std::size_t argmax() const;

 private:
  std::vector<double> probs_;
};

/// Unit-normalizes each row. Zero rows raise NumericalError("zero-norm row i").
Matrix l2_normalize(const Matrix& m);
void l2_normalize_inplace(Matrix& m);

// Worker-count control. Work is always partitioned by row ranges so results
// never depend on the thread count.
void set_num_threads(std::size_t n);
std::size_t num_threads();
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& body);

}  // namespace pplr
