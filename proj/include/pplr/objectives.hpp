#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pplr/core.hpp"

namespace pplr {

struct LossWeights {
  double lambda_cam = 0.5;
  double tau = 0.07;
  std::size_t n_hard_negatives = 50;
  /// Apply the inter-camera loss on every feature space (averaged) instead of the global one only.
  bool camera_loss_all_spaces = false;

  void validate() const;
};

/// Scalar value plus gradient with respect to the named input.
struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Bias-free linear classifier; softmax is applied by the loss.
struct ClassifierHead {
  Matrix weight;  // K x D
  int space_id = 0;

  std::vector<double> logits(std::span<const double> feature) const;
};

SoftLabel softmax_forward(std::span<const double> logits);

/// -sum_c target_c log probs_c; grad is with respect to the pre-softmax logits.
LossGrad cross_entropy(const SoftLabel& target, const SoftLabel& probs);

/// alpha * H(onehot, q) + (1 - alpha) * KL(u || q); grad with respect to logits.
LossGrad aals_loss(int label, double alpha, const SoftLabel& probs);

struct TripletResult {
  double loss = 0.0;              // mean over anchors that had a positive and a negative
  Matrix grad;                    // B x D, gradient of the mean loss
  std::size_t skipped = 0;        // anchors without a positive or a negative
  std::vector<int> hardest_pos;   // -1 when skipped
  std::vector<int> hardest_neg;
};

/// Softmax-triplet loss with batch-hard mining on plain L2 distances.
/// Hardest positive is the farthest same-label sample, hardest negative the
/// nearest other-label sample; ties go to the smaller batch index.
TripletResult softmax_triplet_loss(const Matrix& features, std::span<const int> labels);

struct CameraProxySet {
  Matrix proxies;                        // M x D
  std::vector<std::uint16_t> proxy_camera;
  std::vector<int> proxy_cluster;

  std::size_t size() const { return proxies.rows(); }
};

/// One centroid per non-empty (camera, cluster) group, ordered by (cluster, camera).
CameraProxySet build_camera_proxies(const Matrix& features, const PseudoLabels& labels,
                                    std::span<const std::uint16_t> cams);

struct CameraLossResult {
  double loss = 0.0;
  std::vector<double> grad;  // with respect to the feature
  bool skipped = false;      // no positive proxy on another camera
};

/// Inter-camera contrastive loss for one feature. Positives are the proxies of
/// the own cluster seen by other cameras; negatives are the n_hard_negatives
/// most similar proxies of other clusters.
CameraLossResult inter_camera_loss(std::span<const double> feature, int own_label, std::uint16_t own_cam,
                                   const CameraProxySet& proxies, const LossWeights& weights);

enum class TrainingMode { kBaseline, kPplr };

struct LossComponents {
  double gce = 0.0;
  double pce = 0.0;
  double aals = 0.0;
  double pglr = 0.0;
  double triplet = 0.0;
  double cam = 0.0;
};

/// Baseline: gce + pce + triplet + lambda_cam * cam. PPLR: aals + pglr + triplet + lambda_cam * cam.
double total_loss(const LossComponents& c, const LossWeights& w, TrainingMode mode);

}  // namespace pplr
