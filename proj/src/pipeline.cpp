#include "pplr/pipeline.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include "pplr/agreement.hpp"

namespace pplr {

void PipelineConfig::validate() const {
  if (batch_p < 1 || batch_k < 1 || batch_p * batch_k < 4) throw ConfigError("pipeline: batch_p * batch_k must be >= 4");
  if (iters_per_epoch < 1) throw ConfigError("pipeline.iters_per_epoch must be >= 1");
  if (feature_dim < 1) throw ConfigError("pipeline.feature_dim must be >= 1");
  if (k_agreement < 1) throw ConfigError("pipeline.k_agreement must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("pipeline.learning_rate must be >= 0");
  if (!(head_init_scale > 0.0)) throw ConfigError("pipeline.head_init_scale must be > 0");
  if (jaccard.k1 < 1) throw ConfigError("jaccard.k1 must be >= 1");
  if (jaccard.k2 < 1 || jaccard.k2 > jaccard.k1) throw ConfigError("jaccard.k2 must be in [1, k1]");
  if (!(jaccard.lambda >= 0.0 && jaccard.lambda <= 1.0)) throw ConfigError("jaccard.lambda out of [0,1]");
  dbscan.validate();
  refinement.validate();
  loss_weights.validate();
}

// ---------------------------------------------------------------------------
// Model

ToyModel ToyModel::random_init(std::size_t d_raw, std::size_t d, std::size_t n_spaces, Rng& rng) {
  ToyModel m;
  m.projection = Matrix(d_raw, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_raw));
  for (double& v : m.projection.data()) v = scale * rng.normal();
  m.heads.resize(n_spaces);
  for (std::size_t s = 0; s < n_spaces; ++s) m.heads[s].space_id = static_cast<int>(s);
  return m;
}

FeatureBank ToyModel::project(const FeatureBank& raw) const {
  if (raw.dim() != raw_dim()) throw std::invalid_argument("project: bank dim does not match model input");
  FeatureBank out;
  out.camera_ids = raw.camera_ids;
  out.gt_ids = raw.gt_ids;
  out.parts.resize(raw.n_parts());
  const std::size_t n = raw.n_samples(), d = dim(), dr = raw_dim();
  for (std::size_t s = 0; s < raw.n_spaces(); ++s) {
    Matrix z(n, d);
    const Matrix& x = raw.space(s);
    for (std::size_t i = 0; i < n; ++i) {
      auto zi = z.row(i);
      const auto xi = x.row(i);
      for (std::size_t r = 0; r < dr; ++r) {
        const auto pr = projection.row(r);
        for (std::size_t c = 0; c < d; ++c) zi[c] += xi[r] * pr[c];
      }
    }
    l2_normalize_inplace(z);
    out.space(s) = std::move(z);
  }
  out.normalized = true;
  return out;
}

void ToyModel::init_heads(const FeatureBank& features, const PseudoLabels& labels, double scale) {
  heads.assign(features.n_spaces(), {});
  for (std::size_t s = 0; s < features.n_spaces(); ++s) {
    heads[s].space_id = static_cast<int>(s);
    heads[s].weight = cluster_centroids(features.space(s), labels);
    for (std::size_t c = 0; c < heads[s].weight.rows(); ++c) {
      auto row = heads[s].weight.row(c);
      const double norm = std::sqrt(dot(row, row));
      if (norm > 0)
        for (double& v : row) v *= scale / norm;
    }
  }
}

bool operator==(const ToyModel& a, const ToyModel& b) {
  if (!(a.projection == b.projection) || a.heads.size() != b.heads.size()) return false;
  for (std::size_t s = 0; s < a.heads.size(); ++s)
    if (!(a.heads[s].weight == b.heads[s].weight) || a.heads[s].space_id != b.heads[s].space_id) return false;
  return true;
}

namespace {

constexpr char kModelMagic[4] = {'P', 'P', 'L', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("truncated payload");
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[pos + b]) << (8 * b);
  pos += 4;
  return v;
}

void put_matrix(std::vector<std::uint8_t>& out, const Matrix& m) {
  for (double v : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void get_matrix(const std::vector<std::uint8_t>& in, std::size_t& pos, Matrix& m) {
  for (double& v : m.data()) v = static_cast<double>(std::bit_cast<float>(get_u32(in, pos)));
}

}  // namespace

// "PPLM" | u32 version | u32 d_raw | u32 d | u32 n_heads | n_heads x u32 K
// | projection f32 | head weights f32, in head order
std::vector<std::uint8_t> encode_model(const ToyModel& model) {
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 4);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(model.raw_dim()));
  put_u32(out, static_cast<std::uint32_t>(model.dim()));
  put_u32(out, static_cast<std::uint32_t>(model.heads.size()));
  for (const auto& h : model.heads) put_u32(out, static_cast<std::uint32_t>(h.weight.rows()));
  put_matrix(out, model.projection);
  for (const auto& h : model.heads) put_matrix(out, h.weight);
  return out;
}

ToyModel decode_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) throw FormatError("bad magic");
  std::size_t pos = 4;
  const auto version = get_u32(bytes, pos);
  if (version != kModelVersion) throw FormatError("unsupported version " + std::to_string(version));
  const std::size_t d_raw = get_u32(bytes, pos);
  const std::size_t d = get_u32(bytes, pos);
  const std::size_t n_heads = get_u32(bytes, pos);
  if (n_heads > 65536) throw FormatError("implausible head count");
  std::vector<std::size_t> ks(n_heads);
  for (auto& k : ks) k = get_u32(bytes, pos);
  ToyModel m;
  m.projection = Matrix(d_raw, d);
  get_matrix(bytes, pos, m.projection);
  m.heads.resize(n_heads);
  for (std::size_t s = 0; s < n_heads; ++s) {
    m.heads[s].space_id = static_cast<int>(s);
    m.heads[s].weight = Matrix(ks[s], d);
    get_matrix(bytes, pos, m.heads[s].weight);
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after payload");
  return m;
}

void write_model(const ToyModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ToyModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

// ---------------------------------------------------------------------------
// Clustering stage

ClusteringResult clustering_stage(const FeatureBank& bank, const PipelineConfig& cfg) {
  if (!bank.normalized) throw std::invalid_argument("clustering_stage: bank must be normalized");
  ClusteringResult out;
  const auto jac = k_reciprocal_jaccard(bank.global, cfg.jaccard);
  out.labels = dbscan(jac, cfg.dbscan);
  for (std::size_t s = 0; s < bank.n_spaces(); ++s)
    out.lists.push_back(topk_ranked_lists(pairwise_sq_euclidean(bank.space(s)), cfg.k_agreement, static_cast<int>(s)));
  std::vector<RankedLists> parts(out.lists.begin() + 1, out.lists.end());
  out.agreement = agreement_matrix(out.lists[0], parts);
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

PKSampler::PKSampler(const PseudoLabels& labels, std::size_t p, std::size_t k) : p_(p), k_(k) {
  members_.resize(static_cast<std::size_t>(std::max(labels.k_clusters, 0)));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels.labels[i] >= 0) members_[static_cast<std::size_t>(labels.labels[i])].push_back(i);
  if (members_.empty()) throw std::invalid_argument("PK sampler: no clusters");
}

std::vector<std::size_t> PKSampler::next(Rng& rng) {
  const std::size_t n_clusters = members_.size();
  std::vector<std::size_t> chosen;
  if (n_clusters >= p_) {
    std::vector<std::size_t> ids(n_clusters);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t t = 0; t < p_; ++t) std::swap(ids[t], ids[t + rng.below(n_clusters - t)]);
    chosen.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(p_));
  } else {
    ++warnings_;
    for (std::size_t t = 0; t < p_; ++t) chosen.push_back(rng.below(n_clusters));
  }
  std::vector<std::size_t> batch;
  batch.reserve(p_ * k_);
  for (auto c : chosen) {
    auto m = members_[c];
    if (m.size() >= k_) {
      for (std::size_t t = 0; t < k_; ++t) std::swap(m[t], m[t + rng.below(m.size() - t)]);
      batch.insert(batch.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(k_));
    } else {
      for (std::size_t t = 0; t < k_; ++t) batch.push_back(m[rng.below(m.size())]);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training stage

std::vector<CameraProxySet> stage_proxies(const FeatureBank& features, const PseudoLabels& labels,
                                          const PipelineConfig& cfg) {
  std::vector<CameraProxySet> out(features.n_spaces());
  if (!features.camera_ids || cfg.loss_weights.lambda_cam == 0.0) return out;
  const std::size_t spaces = cfg.loss_weights.camera_loss_all_spaces ? features.n_spaces() : 1;
  for (std::size_t s = 0; s < spaces; ++s)
    out[s] = build_camera_proxies(features.space(s), labels, *features.camera_ids);
  return out;
}

BatchGradients batch_loss_and_grad(const ToyModel& model, std::span<const std::size_t> batch,
                                   const BatchContext& ctx) {
  const FeatureBank& raw = ctx.raw;
  const PipelineConfig& cfg = ctx.cfg;
  const std::size_t n_batch = batch.size();
  const std::size_t spaces = raw.n_spaces();
  const std::size_t n_parts = raw.n_parts();
  const std::size_t d = model.dim(), dr = model.raw_dim();
  const auto k = static_cast<std::size_t>(ctx.labels.k_clusters);
  if (n_parts == 0) throw std::invalid_argument("training: at least one part space is required");
  if (model.heads.size() != spaces) throw std::invalid_argument("training: head count != feature spaces");
  for (const auto& h : model.heads)
    if (h.weight.rows() != k || h.weight.cols() != d) throw std::invalid_argument("training: head shape != K x D");
  if (n_batch == 0) throw std::invalid_argument("training: empty batch");

  const bool pplr = cfg.mode == TrainingMode::kPplr;
  const double inv_b = 1.0 / static_cast<double>(n_batch);
  const double inv_p = 1.0 / static_cast<double>(n_parts);

  // Forward: unnormalized projection, its norm, and the unit feature per space.
  std::vector<Matrix> feat(spaces, Matrix(n_batch, d));
  std::vector<std::vector<double>> norms(spaces, std::vector<double>(n_batch));
  std::vector<int> y(n_batch);
  for (std::size_t b = 0; b < n_batch; ++b) {
    y[b] = ctx.labels.labels.at(batch[b]);
    if (y[b] < 0) throw std::invalid_argument("training: outlier in batch");
    for (std::size_t s = 0; s < spaces; ++s) {
      auto f = feat[s].row(b);
      const auto x = raw.space(s).row(batch[b]);
      for (std::size_t r = 0; r < dr; ++r)
        for (std::size_t c = 0; c < d; ++c) f[c] += x[r] * model.projection(r, c);
      const double nrm = std::sqrt(dot(f, f));
      if (nrm == 0.0) throw NumericalError("training: zero projected feature");
      norms[s][b] = nrm;
      for (double& v : f) v /= nrm;
    }
  }

  BatchGradients g;
  g.projection = Matrix(dr, d);
  for (std::size_t s = 0; s < spaces; ++s) g.heads.emplace_back(k, d);
  std::vector<Matrix> dfeat(spaces, Matrix(n_batch, d));

  auto backprop_logits = [&](std::size_t s, std::size_t b, const std::vector<double>& dlogits, double scale) {
    const auto f = feat[s].row(b);
    auto df = dfeat[s].row(b);
    const Matrix& w = model.heads[s].weight;
    for (std::size_t c = 0; c < k; ++c) {
      const double gc = scale * dlogits[c];
      if (gc == 0.0) continue;
      auto gw = g.heads[s].row(c);
      const auto wc = w.row(c);
      for (std::size_t j = 0; j < d; ++j) {
        gw[j] += gc * f[j];
        df[j] += gc * wc[j];
      }
    }
  };

  LossComponents& lc = g.components;
  for (std::size_t b = 0; b < n_batch; ++b) {
    const std::size_t i = batch[b];
    std::vector<SoftLabel> q(spaces);
    for (std::size_t s = 0; s < spaces; ++s) q[s] = softmax_forward(model.heads[s].logits(feat[s].row(b)));
    const SoftLabel onehot = SoftLabel::one_hot(static_cast<std::size_t>(y[b]), k);

    const auto gce = cross_entropy(onehot, q[0]);
    lc.gce += inv_b * gce.loss;
    if (!pplr) backprop_logits(0, b, gce.grad, inv_b);

    std::vector<double> agree(n_parts);
    for (std::size_t n = 0; n < n_parts; ++n) agree[n] = ctx.agreement.scores(i, n);

    for (std::size_t n = 0; n < n_parts; ++n) {
      const auto pce = cross_entropy(onehot, q[n + 1]);
      lc.pce += inv_b * inv_p * pce.loss;
      if (!pplr) backprop_logits(n + 1, b, pce.grad, inv_b * inv_p);
      const double alpha = cfg.refinement.alpha_for(agree[n], ctx.epoch);
      const auto aals = aals_loss(y[b], alpha, q[n + 1]);
      lc.aals += inv_b * inv_p * aals.loss;
      if (pplr) backprop_logits(n + 1, b, aals.grad, inv_b * inv_p);
    }

    // Part predictions enter the target as constants.
    const std::vector<SoftLabel> part_preds(q.begin() + 1, q.end());
    const auto target = pglr_target(y[b], k, part_preds, pglr_weights(agree), cfg.refinement.beta);
    const auto pglr = cross_entropy(target, q[0]);
    lc.pglr += inv_b * pglr.loss;
    if (pplr) backprop_logits(0, b, pglr.grad, inv_b);
  }

  const auto trip = softmax_triplet_loss(feat[0], y);
  lc.triplet = trip.loss;
  g.skipped_anchors = trip.skipped;
  for (std::size_t b = 0; b < n_batch; ++b)
    for (std::size_t j = 0; j < d; ++j) dfeat[0](b, j) += trip.grad(b, j);

  const auto& lw = cfg.loss_weights;
  if (raw.camera_ids && lw.lambda_cam != 0.0) {
    std::size_t cam_spaces = 0;
    for (const auto& p : ctx.proxies) cam_spaces += p.size() > 0 ? 1 : 0;
    for (std::size_t s = 0; s < ctx.proxies.size() && s < spaces; ++s) {
      if (ctx.proxies[s].size() == 0) continue;
      std::vector<CameraLossResult> res(n_batch);
      std::size_t used = 0;
      for (std::size_t b = 0; b < n_batch; ++b) {
        res[b] = inter_camera_loss(feat[s].row(b), y[b], (*raw.camera_ids)[batch[b]], ctx.proxies[s], lw);
        if (res[b].skipped)
          ++g.skipped_cam;
        else
          ++used;
      }
      if (used == 0) continue;
      const double scale = 1.0 / (static_cast<double>(used) * static_cast<double>(cam_spaces));
      for (std::size_t b = 0; b < n_batch; ++b) {
        if (res[b].skipped) continue;
        lc.cam += scale * res[b].loss;
        for (std::size_t j = 0; j < d; ++j) dfeat[s](b, j) += lw.lambda_cam * scale * res[b].grad[j];
      }
    }
  }
  g.total = total_loss(lc, lw, cfg.mode);

  // Back through the normalization and the shared projection.
  std::vector<double> dz(d);
  for (std::size_t s = 0; s < spaces; ++s)
    for (std::size_t b = 0; b < n_batch; ++b) {
      const auto f = feat[s].row(b);
      const auto df = dfeat[s].row(b);
      const double radial = dot(f, df);
      for (std::size_t j = 0; j < d; ++j) dz[j] = (df[j] - f[j] * radial) / norms[s][b];
      const auto x = raw.space(s).row(batch[b]);
      for (std::size_t r = 0; r < dr; ++r) {
        if (x[r] == 0.0) continue;
        auto gp = g.projection.row(r);
        for (std::size_t j = 0; j < d; ++j) gp[j] += x[r] * dz[j];
      }
    }
  return g;
}

TrainingTrace training_stage(ToyModel& model, const FeatureBank& raw, const PseudoLabels& labels,
                             const CrossAgreement& agreement, const PipelineConfig& cfg, std::size_t epoch,
                             Rng& rng) {
  const auto proxies = stage_proxies(model.project(raw), labels, cfg);
  const BatchContext ctx{raw, labels, agreement, proxies, cfg, epoch};
  PKSampler sampler(labels, cfg.batch_p, cfg.batch_k);
  TrainingTrace trace;
  for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it) {
    const auto batch = sampler.next(rng);
    const auto g = batch_loss_and_grad(model, batch, ctx);
    if (!std::isfinite(g.total)) throw NumericalError("training: non-finite loss at iteration " + std::to_string(it));
    auto& p = model.projection.data();
    for (std::size_t t = 0; t < p.size(); ++t) p[t] -= cfg.learning_rate * g.projection.data()[t];
    for (std::size_t s = 0; s < model.heads.size(); ++s) {
      auto& w = model.heads[s].weight.data();
      for (std::size_t t = 0; t < w.size(); ++t) w[t] -= cfg.learning_rate * g.heads[s].data()[t];
    }
    trace.components.push_back(g.components);
    trace.totals.push_back(g.total);
    trace.skipped_anchors += g.skipped_anchors;
    trace.skipped_cam += g.skipped_cam;
  }
  trace.sampler_warnings = sampler.warnings();
  return trace;
}

std::vector<std::vector<double>> refined_targets(const ToyModel& model, const FeatureBank& features,
                                                 const PseudoLabels& labels, const CrossAgreement& agreement,
                                                 double beta) {
  const std::size_t n_parts = features.n_parts();
  const auto k = static_cast<std::size_t>(labels.k_clusters);
  std::vector<std::vector<double>> out(features.n_samples());
  for (std::size_t i = 0; i < features.n_samples(); ++i) {
    if (labels.labels[i] < 0) continue;
    std::vector<SoftLabel> preds;
    std::vector<double> agree(n_parts);
    for (std::size_t n = 0; n < n_parts; ++n) {
      preds.push_back(softmax_forward(model.heads[n + 1].logits(features.parts[n].row(i))));
      agree[n] = agreement.scores(i, n);
    }
    out[i] = pglr_target(labels.labels[i], k, preds, pglr_weights(agree), beta).probs();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports and the alternating driver

namespace {

nlohmann::json quality_json(const std::optional<LabelQuality>& q) {
  if (!q) return nullptr;
  return {{"accuracy", q->accuracy},
          {"pairwise_precision", q->pairwise_precision},
          {"pairwise_recall", q->pairwise_recall},
          {"pairwise_f", q->pairwise_f},
          {"outlier_fraction", q->outlier_fraction}};
}

}  // namespace

nlohmann::json EpochReport::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["k_clusters"] = k_clusters;
  j["outliers"] = outliers;
  j["mean_agreement"] = mean_agreement;
  j["raw_quality"] = quality_json(raw_quality);
  j["refined_quality"] = quality_json(refined_quality);
  if (retrieval) {
    nlohmann::json r{{"mAP", retrieval->map}, {"n_queries", retrieval->n_queries}};
    for (std::size_t t = 0; t < retrieval->ranks.size(); ++t)
      r["CMC@" + std::to_string(retrieval->ranks[t])] = retrieval->cmc[t];
    j["retrieval"] = r;
  } else {
    j["retrieval"] = nullptr;
  }
  j["losses"] = {{"gce", mean_losses.gce},   {"pce", mean_losses.pce},         {"aals", mean_losses.aals},
                 {"pglr", mean_losses.pglr}, {"triplet", mean_losses.triplet}, {"cam", mean_losses.cam}};
  j["loss_trace"] = loss_trace;
  j["sampler_warnings"] = sampler_warnings;
  if (wall_time_s) j["wall_time_s"] = *wall_time_s;
  return j;
}

std::optional<RetrievalResult> self_retrieval(const FeatureBank& features) {
  if (!features.gt_ids || !features.camera_ids) return std::nullopt;
  const LabeledSet set{features.global, *features.gt_ids, *features.camera_ids};
  return map_cmc(set, set);
}

RunResult run(const PipelineConfig& cfg, const FeatureBank& raw) {
  cfg.validate();
  raw.validate();
  Rng rng(cfg.seed);
  RunResult result;
  result.model = ToyModel::random_init(raw.dim(), cfg.feature_dim, raw.n_spaces(), rng);
  ToyModel& model = result.model;
  result.initial_retrieval = self_retrieval(model.project(raw));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochReport rep;
    rep.epoch = epoch;
    const FeatureBank feats = model.project(raw);
    const auto cl = clustering_stage(feats, cfg);
    rep.k_clusters = cl.labels.k_clusters;
    rep.outliers = cl.labels.outlier_count();
    for (std::size_t n = 0; n < feats.n_parts(); ++n) rep.mean_agreement.push_back(cl.agreement.column_mean(n));
    if (feats.gt_ids) rep.raw_quality = label_quality(cl.labels.labels, *feats.gt_ids);

    if (cl.labels.k_clusters > 0) {
      model.init_heads(feats, cl.labels, cfg.head_init_scale);
      const auto trace = training_stage(model, raw, cl.labels, cl.agreement, cfg, epoch, rng);
      rep.loss_trace = trace.totals;
      rep.sampler_warnings = trace.sampler_warnings;
      const double inv = 1.0 / static_cast<double>(trace.components.size());
      for (const auto& c : trace.components) {
        rep.mean_losses.gce += inv * c.gce;
        rep.mean_losses.pce += inv * c.pce;
        rep.mean_losses.aals += inv * c.aals;
        rep.mean_losses.pglr += inv * c.pglr;
        rep.mean_losses.triplet += inv * c.triplet;
        rep.mean_losses.cam += inv * c.cam;
      }
    }

    const FeatureBank after = model.project(raw);
    if (feats.gt_ids && cl.labels.k_clusters > 0) {
      const auto targets = refined_targets(model, after, cl.labels, cl.agreement, cfg.refinement.beta);
      rep.refined_quality = label_quality(argmax_assignment(targets, cl.labels.labels), *feats.gt_ids);
    }
    rep.retrieval = self_retrieval(after);
    if (cfg.record_wall_time)
      rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.reports.push_back(std::move(rep));
  }
  return result;
}

}  // namespace pplr
