#include <doctest.h>

#include <set>

#include "gradcheck.hpp"
#include "pplr/agreement.hpp"
#include "pplr/ingest.hpp"
#include "pplr/pipeline.hpp"

using namespace pplr;

namespace {

PseudoLabels blocks(std::size_t k, std::size_t per) {
  PseudoLabels l;
  l.k_clusters = static_cast<int>(k);
  for (std::size_t c = 0; c < k; ++c) l.labels.insert(l.labels.end(), per, static_cast<int>(c));
  return l;
}

FeatureBank random_raw(std::size_t n, std::size_t dr, std::size_t parts, std::size_t cams, Rng& rng) {
  FeatureBank b;
  b.global = testutil::random_matrix(n, dr, rng);
  for (std::size_t p = 0; p < parts; ++p) b.parts.push_back(testutil::random_matrix(n, dr, rng));
  std::vector<std::uint16_t> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<std::uint16_t>(i % cams);
  b.camera_ids = c;
  return b;
}

CrossAgreement random_agreement(std::size_t n, std::size_t parts, Rng& rng) {
  CrossAgreement a{Matrix(n, parts)};
  for (auto& v : a.scores.data()) v = rng.uniform();
  return a;
}

PipelineConfig small_cfg() {
  PipelineConfig cfg;
  cfg.epochs = 3;
  cfg.iters_per_epoch = 5;
  cfg.batch_p = 8;
  cfg.batch_k = 4;
  cfg.feature_dim = 16;
  return cfg;
}

FeatureBank small_bank(std::uint64_t seed = 0) {
  SynthConfig s;
  s.n_identities = 12;
  s.samples_per_identity = 10;
  s.dim = 32;
  s.seed = seed;
  return generate_synthetic_bank(s);
}

std::vector<double> five_point_grad(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    auto at = [&](double off) {
      x[i] = keep + off;
      return f(x);
    };
    g[i] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    x[i] = keep;
  }
  return g;
}

// Scalar re-derivation of one batch objective. Mining, hard negatives, proxies
// and PGLR targets are fixed from the starting parameters, as in training.
struct StepOracle {
  const FeatureBank& raw;
  const PseudoLabels& labels;
  const CrossAgreement& agree;
  const PipelineConfig& cfg;
  std::vector<std::size_t> batch;
  std::size_t dr, d, k, spaces;

  std::vector<std::vector<double>> targets;       // per batch row
  std::vector<std::pair<int, int>> mined;         // (pos, neg) per anchor, -1 when skipped
  oracle::Dense proxies;                          // global space only
  std::vector<int> proxy_cluster, proxy_cam;
  std::vector<std::vector<std::size_t>> pos_set, neg_set;

  std::vector<double> feature(const std::vector<double>& th, std::size_t s, std::size_t i) const {
    std::vector<double> z(d, 0.0);
    for (std::size_t r = 0; r < dr; ++r)
      for (std::size_t c = 0; c < d; ++c) z[c] += raw.space(s)(i, r) * th[r * d + c];
    double n = 0;
    for (double v : z) n += v * v;
    for (double& v : z) v /= std::sqrt(n);
    return z;
  }
  std::vector<double> logits(const std::vector<double>& th, std::size_t s, const std::vector<double>& f) const {
    const std::size_t off = dr * d + s * k * d;
    std::vector<double> l(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < d; ++j) l[c] += th[off + c * d + j] * f[j];
    return l;
  }
  static double l2(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  }

  void freeze(const std::vector<double>& th) {
    const std::size_t nb = batch.size(), np = spaces - 1;
    targets.assign(nb, std::vector<double>(k, 0.0));
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t i = batch[b];
      std::vector<double> w(np);
      double z = 0;
      for (std::size_t n = 0; n < np; ++n) z += (w[n] = std::exp(agree.scores(i, n)));
      for (std::size_t n = 0; n < np; ++n) {
        const auto q = gradcheck::softmax(logits(th, n + 1, feature(th, n + 1, i)));
        for (std::size_t c = 0; c < k; ++c) targets[b][c] += (1 - cfg.refinement.beta) * w[n] / z * q[c];
      }
      targets[b][static_cast<std::size_t>(labels.labels[i])] += cfg.refinement.beta;
    }
    std::vector<std::vector<double>> f(nb);
    for (std::size_t b = 0; b < nb; ++b) f[b] = feature(th, 0, batch[b]);
    mined.assign(nb, {-1, -1});
    for (std::size_t a = 0; a < nb; ++a) {
      double bp = -1, bn = 1e300;
      for (std::size_t j = 0; j < nb; ++j) {
        if (j == a) continue;
        const double dj = l2(f[a], f[j]);
        const bool same = labels.labels[batch[j]] == labels.labels[batch[a]];
        if (same && dj > bp) bp = dj, mined[a].first = static_cast<int>(j);
        if (!same && dj < bn) bn = dj, mined[a].second = static_cast<int>(j);
      }
      if (mined[a].first < 0 || mined[a].second < 0) mined[a] = {-1, -1};
    }
    // Proxies: group means of projected global features over all clustered samples.
    std::map<std::pair<int, int>, std::pair<std::vector<double>, double>> groups;
    for (std::size_t i = 0; i < raw.n_samples(); ++i) {
      if (labels.labels[i] < 0) continue;
      auto& g = groups[{labels.labels[i], (*raw.camera_ids)[i]}];
      const auto fi = feature(th, 0, i);
      g.first.resize(d);
      for (std::size_t j = 0; j < d; ++j) g.first[j] += fi[j];
      g.second += 1;
    }
    proxies.clear();
    proxy_cluster.clear();
    proxy_cam.clear();
    for (auto& [key, g] : groups) {
      for (double& v : g.first) v /= g.second;
      proxies.push_back(g.first);
      proxy_cluster.push_back(key.first);
      proxy_cam.push_back(key.second);
    }
    pos_set.assign(nb, {});
    neg_set.assign(nb, {});
    for (std::size_t b = 0; b < nb; ++b) {
      const int y = labels.labels[batch[b]];
      const int cam = (*raw.camera_ids)[batch[b]];
      std::vector<std::pair<double, std::size_t>> negs;
      for (std::size_t m = 0; m < proxies.size(); ++m) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += proxies[m][j] * f[b][j];
        if (proxy_cluster[m] == y) {
          if (proxy_cam[m] != cam) pos_set[b].push_back(m);
        } else {
          negs.emplace_back(-s, m);
        }
      }
      std::sort(negs.begin(), negs.end());
      for (std::size_t t = 0; t < std::min(negs.size(), cfg.loss_weights.n_hard_negatives); ++t)
        neg_set[b].push_back(negs[t].second);
    }
  }

  double total(const std::vector<double>& th) const {
    const std::size_t nb = batch.size(), np = spaces - 1;
    const bool pplr = cfg.mode == TrainingMode::kPplr;
    double cls = 0;
    std::vector<std::vector<double>> f(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t i = batch[b];
      const int y = labels.labels[i];
      std::vector<double> onehot(k, 0.0);
      onehot[static_cast<std::size_t>(y)] = 1.0;
      f[b] = feature(th, 0, i);
      const auto l0 = logits(th, 0, f[b]);
      cls += testutil::softmax_ce(pplr ? targets[b] : onehot, l0) / static_cast<double>(nb);
      for (std::size_t n = 0; n < np; ++n) {
        const auto ln = logits(th, n + 1, feature(th, n + 1, i));
        const double part = pplr ? gradcheck::aals_value(y, agree.scores(i, n), ln) : testutil::softmax_ce(onehot, ln);
        cls += part / static_cast<double>(nb * np);
      }
    }
    double trip = 0;
    std::size_t valid = 0;
    for (std::size_t a = 0; a < nb; ++a) {
      if (mined[a].first < 0) continue;
      const double dp = l2(f[a], f[static_cast<std::size_t>(mined[a].first)]);
      const double dn = l2(f[a], f[static_cast<std::size_t>(mined[a].second)]);
      trip += std::log1p(std::exp(dp - dn));
      ++valid;
    }
    if (valid) trip /= static_cast<double>(valid);
    double cam = 0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      if (pos_set[b].empty()) continue;
      ++used;
      auto sim = [&](std::size_t m) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += proxies[m][j] * f[b][j];
        return s / cfg.loss_weights.tau;
      };
      double z = 0;
      for (auto m : pos_set[b]) z += std::exp(sim(m));
      for (auto m : neg_set[b]) z += std::exp(sim(m));
      for (auto m : pos_set[b]) cam -= (sim(m) - std::log(z)) / static_cast<double>(pos_set[b].size());
    }
    if (used) cam /= static_cast<double>(used);
    return cls + trip + cfg.loss_weights.lambda_cam * cam;
  }
};

std::vector<double> flatten(const ToyModel& m) {
  std::vector<double> th = m.projection.data();
  for (const auto& h : m.heads) th.insert(th.end(), h.weight.data().begin(), h.weight.data().end());
  return th;
}

}  // namespace

TEST_CASE("PK sampler audit") {
  // 20 clusters of mixed sizes; some smaller than K.
  PseudoLabels l;
  l.k_clusters = 20;
  for (int c = 0; c < 20; ++c) l.labels.insert(l.labels.end(), 2 + c % 6, c);
  l.labels.push_back(-1);
  PKSampler s(l, 8, 4);
  Rng rng(81);
  for (int t = 0; t < 200; ++t) {
    const auto batch = s.next(rng);
    REQUIRE(batch.size() == 32);
    std::set<int> clusters;
    for (std::size_t p = 0; p < 8; ++p) {
      const int c = l.labels[batch[p * 4]];
      CHECK(c >= 0);
      clusters.insert(c);
      std::set<std::size_t> members;
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(l.labels[batch[p * 4 + j]] == c);
        members.insert(batch[p * 4 + j]);
      }
      if (2 + c % 6 >= 4) CHECK(members.size() == 4);
    }
    CHECK(clusters.size() == 8);
  }
  CHECK(s.warnings() == 0);

  PKSampler few(blocks(3, 5), 8, 2);
  const auto b = few.next(rng);
  CHECK(b.size() == 16);
  CHECK(few.warnings() == 1);
}

TEST_CASE("single training step matches a scalar oracle") {
  for (TrainingMode mode : {TrainingMode::kPplr, TrainingMode::kBaseline}) {
    Rng data_rng(82);
    const std::size_t n = 12, dr = 4, d = 3, k = 3;
    const FeatureBank raw = random_raw(n, dr, 2, 3, data_rng);
    const PseudoLabels labels = blocks(k, 4);
    const CrossAgreement agree = random_agreement(n, 2, data_rng);
    PipelineConfig cfg;
    cfg.batch_p = 3;
    cfg.batch_k = 2;
    cfg.iters_per_epoch = 1;
    cfg.learning_rate = 0.5;
    cfg.mode = mode;
    cfg.loss_weights.n_hard_negatives = 2;

    Rng model_rng(83);
    ToyModel model = ToyModel::random_init(dr, d, 3, model_rng);
    model.init_heads(model.project(raw), labels, 2.0);
    const std::vector<double> before = flatten(model);

    Rng rng(84), replay(84);
    StepOracle o{raw, labels, agree, cfg, PKSampler(labels, 3, 2).next(replay), dr, d, k, 3, {}, {}, {}, {}, {}, {}, {}};
    o.freeze(before);
    const auto grad = five_point_grad([&](const std::vector<double>& th) { return o.total(th); }, before, 1e-4);

    const auto trace = training_stage(model, raw, labels, agree, cfg, 7, rng);
    CHECK(trace.totals.size() == 1);
    CHECK(std::abs(trace.totals[0] - o.total(before)) <= 1e-10);
    const std::vector<double> after = flatten(model);
    double worst = 0;
    for (std::size_t t = 0; t < before.size(); ++t)
      worst = std::max(worst, std::abs(after[t] - (before[t] - cfg.learning_rate * grad[t])));
    CHECK(worst <= 1e-8);
  }
}

TEST_CASE("learning rate zero leaves the model untouched") {
  const FeatureBank raw = small_bank();
  PipelineConfig cfg = small_cfg();
  cfg.learning_rate = 0.0;
  Rng rng(85);
  ToyModel m = ToyModel::random_init(raw.dim(), cfg.feature_dim, raw.n_spaces(), rng);
  const FeatureBank f = m.project(raw);
  const auto cl = clustering_stage(f, cfg);
  REQUIRE(cl.labels.k_clusters > 0);
  m.init_heads(f, cl.labels, cfg.head_init_scale);
  const ToyModel before = m;
  const auto trace = training_stage(m, raw, cl.labels, cl.agreement, cfg, 0, rng);
  CHECK(m == before);
  for (double t : trace.totals) CHECK(std::isfinite(t));
}

TEST_CASE("warm-up: the smoothing path is bit-identical to hard-label part loss") {
  Rng data_rng(86);
  const FeatureBank raw = random_raw(24, 6, 3, 2, data_rng);
  const PseudoLabels labels = blocks(4, 6);
  const CrossAgreement agree = random_agreement(24, 3, data_rng);
  PipelineConfig cfg;
  Rng mr(87);
  ToyModel model = ToyModel::random_init(6, 5, 4, mr);
  model.init_heads(model.project(raw), labels, 3.0);
  const auto proxies = stage_proxies(model.project(raw), labels, cfg);
  const std::vector<std::size_t> batch{0, 1, 6, 7, 12, 13, 18, 19};
  for (std::size_t epoch = 0; epoch < cfg.refinement.aals_warmup_epochs; ++epoch) {
    const auto g = batch_loss_and_grad(model, batch, {raw, labels, agree, proxies, cfg, epoch});
    CHECK(g.components.aals == g.components.pce);
  }
  const auto late = batch_loss_and_grad(model, batch, {raw, labels, agree, proxies, cfg, 5});
  CHECK(late.components.aals != late.components.pce);
}

TEST_CASE("baseline and pplr differ only through target construction") {
  Rng data_rng(88);
  const FeatureBank raw = random_raw(24, 6, 2, 3, data_rng);
  const PseudoLabels labels = blocks(4, 6);
  const CrossAgreement agree = random_agreement(24, 2, data_rng);
  Rng mr(89);
  ToyModel model = ToyModel::random_init(6, 5, 3, mr);
  model.init_heads(model.project(raw), labels, 3.0);
  const std::vector<std::size_t> batch{0, 1, 6, 7, 12, 13, 18, 19};

  PipelineConfig base, pplr;
  base.mode = TrainingMode::kBaseline;
  const auto proxies = stage_proxies(model.project(raw), labels, base);

  // Same forward pass: every component agrees whichever mode is active.
  const auto gb = batch_loss_and_grad(model, batch, {raw, labels, agree, proxies, base, 9});
  const auto gp = batch_loss_and_grad(model, batch, {raw, labels, agree, proxies, pplr, 9});
  CHECK(gb.components.gce == gp.components.gce);
  CHECK(gb.components.aals == gp.components.aals);
  CHECK(gb.components.pglr == gp.components.pglr);
  CHECK(gb.components.triplet == gp.components.triplet);
  CHECK(gb.components.cam == gp.components.cam);
  CHECK_FALSE(gb.projection == gp.projection);

  // With hard targets (warm-up, beta = 1) the refinement path degenerates and
  // the two modes become bit-identical.
  base.refinement.beta = pplr.refinement.beta = 1.0;
  const auto hb = batch_loss_and_grad(model, batch, {raw, labels, agree, proxies, base, 0});
  const auto hp = batch_loss_and_grad(model, batch, {raw, labels, agree, proxies, pplr, 0});
  CHECK(hb.total == hp.total);
  CHECK(hb.projection == hp.projection);
  CHECK(hb.heads == hp.heads);

  const FeatureBank bank = small_bank();
  PipelineConfig rb = small_cfg(), rp = small_cfg();
  rb.mode = TrainingMode::kBaseline;
  rb.refinement.beta = rp.refinement.beta = 1.0;
  rb.refinement.aals_warmup_epochs = rp.refinement.aals_warmup_epochs = rb.epochs;
  const auto runb = run(rb, bank), runp = run(rp, bank);
  for (std::size_t e = 0; e < rb.epochs; ++e) CHECK(runb.reports[e].loss_trace == runp.reports[e].loss_trace);
  CHECK(runb.model == runp.model);
}

TEST_CASE("run is deterministic and thread-count independent") {
  const FeatureBank bank = small_bank(3);
  const PipelineConfig cfg = small_cfg();
  set_num_threads(1);
  const auto a = run(cfg, bank);
  set_num_threads(4);
  const auto b = run(cfg, bank);
  set_num_threads(1);
  REQUIRE(a.reports.size() == cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) CHECK(a.reports[e].to_json().dump() == b.reports[e].to_json().dump());
  CHECK(encode_model(a.model) == encode_model(b.model));
}

TEST_CASE("zero epochs gives an empty report list") {
  PipelineConfig cfg = small_cfg();
  cfg.epochs = 0;
  const auto r = run(cfg, small_bank());
  CHECK(r.reports.empty());
}

TEST_CASE("reports carry quality only with ground truth") {
  FeatureBank bank = small_bank();
  PipelineConfig cfg = small_cfg();
  cfg.epochs = 1;
  const auto with = run(cfg, bank);
  CHECK(with.reports[0].raw_quality.has_value());
  const auto j = with.reports[0].to_json();
  for (const char* key : {"epoch", "k_clusters", "outliers", "mean_agreement", "raw_quality", "refined_quality",
                          "retrieval", "losses", "loss_trace", "sampler_warnings"})
    CHECK(j.contains(key));
  CHECK_FALSE(j.contains("wall_time_s"));
  bank.gt_ids.reset();
  const auto without = run(cfg, bank);
  CHECK_FALSE(without.reports[0].raw_quality.has_value());
  CHECK_FALSE(without.reports[0].refined_quality.has_value());
}

TEST_CASE("model blob round trip and layout") {
  Rng rng(90);
  ToyModel m = ToyModel::random_init(5, 3, 3, rng);
  for (auto& h : m.heads) h.weight = Matrix(4, 3, 0.25);
  // f32 storage: keep values representable.
  for (auto& v : m.projection.data()) v = static_cast<float>(v);
  const auto bytes = encode_model(m);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PPLM");
  CHECK(bytes.size() == 4 + 4 * 4 + 3 * 4 + 4 * (5 * 3 + 3 * 4 * 3));
  CHECK(decode_model(bytes) == m);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_model(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_model(bad), FormatError);
}

TEST_CASE("clustering stage on a zero-noise bank") {
  SynthConfig s;
  s.n_identities = 10;
  s.samples_per_identity = 21;  // top-20 lists stay inside the identity
  s.cluster_spread = 0;
  s.occlusion_fraction = 0;
  s.camera_shift = 0;
  const FeatureBank bank = normalized(generate_synthetic_bank(s));
  PipelineConfig cfg;
  const auto a = clustering_stage(bank, cfg);
  CHECK(a.labels.k_clusters == 10);
  CHECK(a.labels.outlier_count() == 0);
  for (std::size_t n = 0; n < 3; ++n) CHECK(a.agreement.column_mean(n) == doctest::Approx(1.0));
  const auto b = clustering_stage(bank, cfg);
  CHECK(a.labels.labels == b.labels.labels);
  CHECK(a.agreement.scores == b.agreement.scores);
  CHECK_THROWS_AS(clustering_stage(generate_synthetic_bank(s), cfg), std::invalid_argument);
}

TEST_CASE("fully occluded part has the lowest agreement") {
  SynthConfig s;
  s.part_occlusion = {0.2, 1.0, 0.2};
  const auto a = clustering_stage(normalized(generate_synthetic_bank(s)), PipelineConfig{});
  CHECK(a.agreement.column_mean(1) < a.agreement.column_mean(0));
  CHECK(a.agreement.column_mean(1) < a.agreement.column_mean(2));
}

TEST_CASE("pipeline config validation") {
  PipelineConfig cfg;
  cfg.batch_p = 1;
  cfg.batch_k = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PipelineConfig{};
  cfg.jaccard.k2 = 40;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PipelineConfig{};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
