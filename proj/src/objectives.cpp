#include "pplr/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace pplr {

void LossWeights::validate() const {
  if (!(lambda_cam >= 0.0)) throw ConfigError("loss.lambda_cam must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("loss.tau must be > 0");
}

std::vector<double> ClassifierHead::logits(std::span<const double> feature) const {
  if (feature.size() != weight.cols()) throw std::invalid_argument("classifier: feature dim mismatch");
  std::vector<double> out(weight.rows());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = dot(weight.row(c), feature);
  return out;
}

SoftLabel softmax_forward(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    p[c] = std::exp(logits[c] - mx);
    total += p[c];
  }
  for (double& v : p) v /= total;
  return SoftLabel(std::move(p));
}

LossGrad cross_entropy(const SoftLabel& target, const SoftLabel& probs) {
  if (target.size() != probs.size()) throw std::invalid_argument("cross_entropy: dimension mismatch");
  LossGrad out;
  out.grad.resize(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (target[c] != 0.0) out.loss -= target[c] * std::log(probs[c]);
    out.grad[c] = probs[c] - target[c];
  }
  return out;
}

LossGrad aals_loss(int label, double alpha, const SoftLabel& probs) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("aals_loss: alpha out of [0,1]");
  const std::size_t k = probs.size();
  if (label < 0 || static_cast<std::size_t>(label) >= k) throw std::invalid_argument("aals_loss: label out of range");
  const double inv_k = 1.0 / static_cast<double>(k);
  const double log_inv_k = std::log(inv_k);

  double kl = 0.0;  // KL(u || q)
  for (std::size_t c = 0; c < k; ++c) kl += inv_k * (log_inv_k - std::log(probs[c]));
  const double ce = -std::log(probs[static_cast<std::size_t>(label)]);

  LossGrad out;
  out.loss = alpha * ce + (1.0 - alpha) * kl;
  out.grad.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double target = (static_cast<int>(c) == label ? alpha : 0.0) + (1.0 - alpha) * inv_k;
    out.grad[c] = probs[c] - target;
  }
  return out;
}

namespace {

double l2_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

TripletResult softmax_triplet_loss(const Matrix& features, std::span<const int> labels) {
  const std::size_t b = features.rows();
  if (labels.size() != b) throw std::invalid_argument("triplet: label count mismatch");
  TripletResult out;
  out.grad = Matrix(b, features.cols());
  out.hardest_pos.assign(b, -1);
  out.hardest_neg.assign(b, -1);

  Matrix dist(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) dist(i, j) = dist(j, i) = l2_dist(features.row(i), features.row(j));

  std::size_t valid = 0;
  for (std::size_t i = 0; i < b; ++i) {
    int pos = -1, neg = -1;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (pos < 0 || dist(i, j) > dist(i, static_cast<std::size_t>(pos))) pos = static_cast<int>(j);
      } else if (neg < 0 || dist(i, j) < dist(i, static_cast<std::size_t>(neg))) {
        neg = static_cast<int>(j);
      }
    }
    if (pos < 0 || neg < 0) {
      ++out.skipped;
      continue;
    }
    out.hardest_pos[i] = pos;
    out.hardest_neg[i] = neg;
    ++valid;
  }
  if (valid == 0) return out;

  const double scale = 1.0 / static_cast<double>(valid);
  for (std::size_t i = 0; i < b; ++i) {
    if (out.hardest_pos[i] < 0) continue;
    const auto p = static_cast<std::size_t>(out.hardest_pos[i]);
    const auto n = static_cast<std::size_t>(out.hardest_neg[i]);
    const double dp = dist(i, p), dn = dist(i, n);
    // -log(e^dn / (e^dp + e^dn)) = softplus(dp - dn)
    out.loss += scale * softplus(dp - dn);
    const double s = scale * sigmoid(dp - dn);
    const auto fi = features.row(i), fp = features.row(p), fn = features.row(n);
    auto gi = out.grad.row(i), gp = out.grad.row(p), gn = out.grad.row(n);
    for (std::size_t k = 0; k < fi.size(); ++k) {
      // Zero distance has no direction; use the zero subgradient.
      const double up = dp > 0 ? (fi[k] - fp[k]) / dp : 0.0;
      const double un = dn > 0 ? (fi[k] - fn[k]) / dn : 0.0;
      gi[k] += s * (up - un);
      gp[k] -= s * up;
      gn[k] += s * un;
    }
  }
  return out;
}

CameraProxySet build_camera_proxies(const Matrix& features, const PseudoLabels& labels,
                                    std::span<const std::uint16_t> cams) {
  if (cams.size() != features.rows()) throw std::invalid_argument("camera proxies: missing camera ids");
  if (labels.size() != features.rows()) throw std::invalid_argument("camera proxies: label count mismatch");
  std::map<std::pair<int, std::uint16_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < features.rows(); ++i)
    if (labels.labels[i] >= 0) groups[{labels.labels[i], cams[i]}].push_back(i);

  CameraProxySet out;
  out.proxies = Matrix(groups.size(), features.cols());
  std::size_t m = 0;
  for (const auto& [key, members] : groups) {
    auto dst = out.proxies.row(m);
    for (auto i : members) {
      const auto src = features.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    for (double& v : dst) v /= static_cast<double>(members.size());
    out.proxy_cluster.push_back(key.first);
    out.proxy_camera.push_back(key.second);
    ++m;
  }
  return out;
}

CameraLossResult inter_camera_loss(std::span<const double> feature, int own_label, std::uint16_t own_cam,
                                   const CameraProxySet& proxies, const LossWeights& weights) {
  CameraLossResult out;
  out.grad.assign(feature.size(), 0.0);
  const std::size_t m = proxies.size();
  std::vector<double> sim(m);
  for (std::size_t j = 0; j < m; ++j) sim[j] = dot(proxies.proxies.row(j), feature) / weights.tau;

  std::vector<std::size_t> pos, neg;
  for (std::size_t j = 0; j < m; ++j) {
    if (proxies.proxy_cluster[j] == own_label) {
      if (proxies.proxy_camera[j] != own_cam) pos.push_back(j);
    } else {
      neg.push_back(j);
    }
  }
  if (pos.empty()) {
    out.skipped = true;
    return out;
  }
  const std::size_t n_neg = std::min(weights.n_hard_negatives, neg.size());
  std::partial_sort(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg), neg.end(),
                    [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); });
  neg.resize(n_neg);

  std::vector<std::size_t> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  double mx = -std::numeric_limits<double>::infinity();
  for (auto j : all) mx = std::max(mx, sim[j]);
  double z = 0.0;
  for (auto j : all) z += std::exp(sim[j] - mx);
  const double log_z = mx + std::log(z);

  const double inv_p = 1.0 / static_cast<double>(pos.size());
  for (auto j : pos) out.loss -= inv_p * (sim[j] - log_z);

  // d/df = (1/tau) * (sum_k softmax_k c_k - mean_{j in P} c_j)
  for (auto j : all) {
    const double w = std::exp(sim[j] - log_z) / weights.tau;
    const auto c = proxies.proxies.row(j);
    for (std::size_t d = 0; d < feature.size(); ++d) out.grad[d] += w * c[d];
  }
  for (auto j : pos) {
    const auto c = proxies.proxies.row(j);
    for (std::size_t d = 0; d < feature.size(); ++d) out.grad[d] -= inv_p * c[d] / weights.tau;
  }
  return out;
}

double total_loss(const LossComponents& c, const LossWeights& w, TrainingMode mode) {
  const double shared = c.triplet + w.lambda_cam * c.cam;
  return mode == TrainingMode::kBaseline ? c.gce + c.pce + shared : c.aals + c.pglr + shared;
}

}  // namespace pplr
