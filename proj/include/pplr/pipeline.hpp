#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pplr/cluster.hpp"
#include "pplr/core.hpp"
#include "pplr/evaluate.hpp"
#include "pplr/neighbors.hpp"
#include "pplr/objectives.hpp"
#include "pplr/random.hpp"
#include "pplr/refine.hpp"

namespace pplr {

struct PipelineConfig {
  std::size_t epochs = 15;
  std::size_t iters_per_epoch = 50;
  std::size_t batch_p = 16;
  std::size_t batch_k = 4;
  double learning_rate = 0.5;
  std::size_t feature_dim = 32;
  /// Classifier rows start as unit-normalized centroids times this factor.
  double head_init_scale = 10.0;
  std::size_t k_agreement = 20;
  JaccardParams jaccard;
  DbscanParams dbscan;
  RefinementConfig refinement;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  TrainingMode mode = TrainingMode::kPplr;
  /// Wall time makes reports non-reproducible, so it is opt-in.
  bool record_wall_time = false;

  void validate() const;
};

/// Linear stand-in for the backbone plus one classifier per feature space.
struct ToyModel {
  Matrix projection;  // D_raw x D, shared by every feature space
  std::vector<ClassifierHead> heads;

  static ToyModel random_init(std::size_t d_raw, std::size_t d, std::size_t n_spaces, Rng& rng);

  std::size_t raw_dim() const { return projection.rows(); }
  std::size_t dim() const { return projection.cols(); }

  /// Projects every space of a raw bank and unit-normalizes the rows.
  FeatureBank project(const FeatureBank& raw) const;

  /// Re-creates every head with rows set to scaled, normalized cluster centroids.
  void init_heads(const FeatureBank& features, const PseudoLabels& labels, double scale);

  friend bool operator==(const ToyModel& a, const ToyModel& b);
};

std::vector<std::uint8_t> encode_model(const ToyModel& model);
ToyModel decode_model(const std::vector<std::uint8_t>& bytes);
void write_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel read_model(const std::filesystem::path& path);

struct ClusteringResult {
  PseudoLabels labels;
  CrossAgreement agreement;
  std::vector<RankedLists> lists;  // one per space, global first
};

/// Jaccard distance on global features -> DBSCAN; plain top-k lists per space -> agreement.
ClusteringResult clustering_stage(const FeatureBank& bank, const PipelineConfig& cfg);

/// P x K mini-batches over clustered samples.
class PKSampler {
 public:
  PKSampler(const PseudoLabels& labels, std::size_t p, std::size_t k);

  /// Sample indices of the next batch, grouped by cluster.
  std::vector<std::size_t> next(Rng& rng);
  /// Batches drawn with fewer than P distinct clusters available.
  std::size_t warnings() const { return warnings_; }

 private:
  std::vector<std::vector<std::size_t>> members_;
  std::size_t p_;
  std::size_t k_;
  std::size_t warnings_ = 0;
};

/// Everything held fixed while one batch is differentiated.
struct BatchContext {
  const FeatureBank& raw;
  const PseudoLabels& labels;
  const CrossAgreement& agreement;
  /// One proxy set per space when the camera term applies to it, else empty.
  const std::vector<CameraProxySet>& proxies;
  const PipelineConfig& cfg;
  std::size_t epoch;
};

struct BatchGradients {
  LossComponents components;
  double total = 0.0;
  Matrix projection;          // d total / d projection
  std::vector<Matrix> heads;  // d total / d head weights
  std::size_t skipped_anchors = 0;
  std::size_t skipped_cam = 0;
};

BatchGradients batch_loss_and_grad(const ToyModel& model, std::span<const std::size_t> batch,
                                   const BatchContext& ctx);

/// Camera proxies per space from the current projected features.
std::vector<CameraProxySet> stage_proxies(const FeatureBank& features, const PseudoLabels& labels,
                                          const PipelineConfig& cfg);

struct TrainingTrace {
  std::vector<LossComponents> components;
  std::vector<double> totals;
  std::size_t sampler_warnings = 0;
  std::size_t skipped_anchors = 0;
  std::size_t skipped_cam = 0;
};

/// iters_per_epoch gradient-descent steps on PK batches; heads must already match K.
TrainingTrace training_stage(ToyModel& model, const FeatureBank& raw, const PseudoLabels& labels,
                             const CrossAgreement& agreement, const PipelineConfig& cfg, std::size_t epoch,
                             Rng& rng);

/// PGLR targets for every clustered sample under the current model; outliers get an empty vector.
std::vector<std::vector<double>> refined_targets(const ToyModel& model, const FeatureBank& features,
                                                 const PseudoLabels& labels, const CrossAgreement& agreement,
                                                 double beta);

struct EpochReport {
  std::size_t epoch = 0;
  int k_clusters = 0;
  std::size_t outliers = 0;
  std::vector<double> mean_agreement;
  std::optional<LabelQuality> raw_quality;
  std::optional<LabelQuality> refined_quality;
  std::optional<RetrievalResult> retrieval;
  LossComponents mean_losses;
  std::vector<double> loss_trace;
  std::size_t sampler_warnings = 0;
  std::optional<double> wall_time_s;

  nlohmann::json to_json() const;
};

struct RunResult {
  std::vector<EpochReport> reports;
  ToyModel model;
  /// Retrieval on features from the untrained random projection.
  std::optional<RetrievalResult> initial_retrieval;
};

RunResult run(const PipelineConfig& cfg, const FeatureBank& raw);

/// Retrieval over the bank itself (every sample a query) on global features.
std::optional<RetrievalResult> self_retrieval(const FeatureBank& features);

}  // namespace pplr
