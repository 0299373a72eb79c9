// pplr: command-line driver for pseudo-label refinement on feature banks.
//
//   pplr <subcommand> --config <path> [--seed S] [--threads N] [--out <path>] [--key value ...]
//
// Exit codes: 0 success, 2 config error, 3 data-format error, 4 runtime error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pplr/agreement.hpp"
#include "pplr/config.hpp"
#include "pplr/evaluate.hpp"
#include "pplr/ingest.hpp"
#include "pplr/pipeline.hpp"
#include "pplr/refine.hpp"

namespace {

using nlohmann::json;

struct Options {
  std::string config_path;
  std::string out;
  std::string seed;
  std::size_t threads = 0;
  std::vector<pplr::Override> overrides;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw pplr::ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Turns leftover "--key value" / "--key=value" arguments into overrides.
std::vector<pplr::Override> collect_overrides(const std::vector<std::string>& extras) {
  std::vector<pplr::Override> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0) throw pplr::ConfigError("unexpected argument " + a);
    std::string key = a.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw pplr::ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    out.emplace_back(key, value);
  }
  return out;
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw std::runtime_error("cannot open output " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::string require_path(const std::string& primary, const std::string& fallback, const char* what) {
  if (!primary.empty()) return primary;
  if (!fallback.empty()) return fallback;
  throw pplr::ConfigError(std::string("no ") + what + " path given");
}

// Bank ready for clustering: projected by a model when one is given, otherwise normalized raw features.
struct PreparedBank {
  pplr::FeatureBank raw;
  pplr::FeatureBank features;
  std::optional<pplr::ToyModel> model;
};

PreparedBank prepare(const pplr::RunConfig& cfg) {
  PreparedBank p;
  p.raw = pplr::read_feature_bank(require_path(cfg.paths.bank_in, "", "paths.bank_in"));
  if (!cfg.paths.model_in.empty()) {
    p.model = pplr::read_model(cfg.paths.model_in);
    p.features = p.model->project(p.raw);
  } else {
    p.features = pplr::normalized(p.raw);
  }
  return p;
}

int cmd_simgen(const pplr::RunConfig& cfg, const Options& opt) {
  const auto bank = pplr::generate_synthetic_bank(cfg.synth);
  const auto path = require_path(opt.out, cfg.paths.bank_out, "output bank");
  pplr::write_feature_bank(bank, path);
  std::cerr << "wrote " << bank.n_samples() << " samples x " << bank.n_spaces() << " spaces to " << path << '\n';
  return 0;
}

int cmd_cluster(const pplr::RunConfig& cfg, const Options& opt) {
  const auto p = prepare(cfg);
  const auto dist = pplr::k_reciprocal_jaccard(p.features.global, cfg.pipeline.jaccard);
  const auto labels = pplr::dbscan(dist, cfg.pipeline.dbscan);
  const auto ids = pplr::read_sidecar(cfg.paths.bank_in, p.raw.n_samples());
  Output out(opt.out);
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.stream() << json{{"index", i}, {"sample_id", ids[i]}, {"label", labels.labels[i]}}.dump() << '\n';
  std::cerr << "clusters=" << labels.k_clusters << " outliers=" << labels.outlier_count() << '\n';
  return 0;
}

pplr::CrossAgreement agreement_for(const pplr::FeatureBank& f, std::size_t k) {
  std::vector<pplr::RankedLists> parts;
  const auto global = pplr::topk_ranked_lists(pplr::pairwise_sq_euclidean(f.global), k, 0);
  for (std::size_t n = 0; n < f.n_parts(); ++n)
    parts.push_back(pplr::topk_ranked_lists(pplr::pairwise_sq_euclidean(f.parts[n]), k, static_cast<int>(n + 1)));
  return pplr::agreement_matrix(global, parts);
}

int cmd_agree(const pplr::RunConfig& cfg, const Options& opt) {
  const auto p = prepare(cfg);
  const auto agree = agreement_for(p.features, cfg.pipeline.k_agreement);
  Output out(opt.out);
  for (std::size_t i = 0; i < agree.n_samples(); ++i) {
    const auto row = agree.scores.row(i);
    out.stream() << json{{"index", i}, {"scores", std::vector<double>(row.begin(), row.end())}}.dump() << '\n';
  }
  return 0;
}

int cmd_refine(const pplr::RunConfig& cfg, const Options& opt) {
  auto p = prepare(cfg);
  const auto cl = pplr::clustering_stage(p.features, cfg.pipeline);
  if (cl.labels.k_clusters == 0) throw pplr::NumericalError("refine: clustering produced no clusters");
  pplr::ToyModel model = p.model ? *p.model : pplr::ToyModel{};
  const auto k = static_cast<std::size_t>(cl.labels.k_clusters);
  bool heads_match = model.heads.size() == p.features.n_spaces();
  for (const auto& h : model.heads) heads_match = heads_match && h.weight.rows() == k;
  if (!heads_match) model.init_heads(p.features, cl.labels, cfg.pipeline.head_init_scale);

  const auto pglr = pplr::refined_targets(model, p.features, cl.labels, cl.agreement, cfg.pipeline.refinement.beta);
  const std::size_t post_warmup = cfg.pipeline.refinement.aals_warmup_epochs;
  Output out(opt.out);
  for (std::size_t i = 0; i < p.features.n_samples(); ++i) {
    if (cl.labels.labels[i] < 0) continue;
    json aals = json::array();
    for (std::size_t n = 0; n < p.features.n_parts(); ++n) {
      const double alpha = cfg.pipeline.refinement.alpha_for(cl.agreement.scores(i, n), post_warmup);
      aals.push_back(pplr::aals_target(cl.labels.labels[i], k, alpha).probs());
    }
    out.stream() << json{{"index", i}, {"pglr", pglr[i]}, {"aals", aals}}.dump() << '\n';
  }
  return 0;
}

void write_trace(std::ostream& os, const pplr::TrainingTrace& trace) {
  for (std::size_t it = 0; it < trace.totals.size(); ++it) {
    const auto& c = trace.components[it];
    os << json{{"iter", it},     {"total", trace.totals[it]}, {"gce", c.gce},         {"pce", c.pce},
               {"aals", c.aals}, {"pglr", c.pglr},            {"triplet", c.triplet}, {"cam", c.cam}}
              .dump()
       << '\n';
  }
}

int cmd_train(const pplr::RunConfig& cfg, const Options& opt) {
  const auto raw = pplr::read_feature_bank(require_path(cfg.paths.bank_in, "", "paths.bank_in"));
  pplr::Rng rng(cfg.pipeline.seed);
  pplr::ToyModel model = cfg.paths.model_in.empty()
                             ? pplr::ToyModel::random_init(raw.dim(), cfg.pipeline.feature_dim, raw.n_spaces(), rng)
                             : pplr::read_model(cfg.paths.model_in);
  const auto feats = model.project(raw);
  const auto cl = pplr::clustering_stage(feats, cfg.pipeline);
  if (cl.labels.k_clusters == 0) throw pplr::NumericalError("train: clustering produced no clusters");
  model.init_heads(feats, cl.labels, cfg.pipeline.head_init_scale);
  const auto trace = pplr::training_stage(model, raw, cl.labels, cl.agreement, cfg.pipeline, 0, rng);
  Output out(opt.out.empty() ? cfg.paths.report_out : opt.out);
  write_trace(out.stream(), trace);
  if (!cfg.paths.model_out.empty()) pplr::write_model(model, cfg.paths.model_out);
  if (trace.sampler_warnings > 0)
    std::cerr << "warning: " << trace.sampler_warnings << " batches drawn with fewer than batch_p clusters\n";
  return 0;
}

int cmd_pipeline(const pplr::RunConfig& cfg, const Options& opt) {
  const auto raw = pplr::read_feature_bank(require_path(cfg.paths.bank_in, "", "paths.bank_in"));
  const auto result = pplr::run(cfg.pipeline, raw);
  const auto report_path = require_path(opt.out, cfg.paths.report_out, "report");
  {
    std::ofstream os(report_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open report " + report_path);
    for (const auto& r : result.reports) os << r.to_json().dump() << '\n';
  }
  const auto model_path = cfg.paths.model_out.empty() ? report_path + ".model.bin" : cfg.paths.model_out;
  pplr::write_model(result.model, model_path);
  {
    // The effective config, sufficient to reproduce this run.
    auto resolved = cfg;
    resolved.paths.report_out = report_path;
    resolved.paths.model_out = model_path;
    std::ofstream os(report_path + ".config.json", std::ios::trunc);
    os << pplr::to_json(resolved).dump(2) << '\n';
  }
  if (result.initial_retrieval) std::cerr << "initial mAP " << result.initial_retrieval->map << '\n';
  if (!result.reports.empty() && result.reports.back().retrieval)
    std::cerr << "final mAP " << result.reports.back().retrieval->map << '\n';
  return 0;
}

int cmd_eval(const pplr::RunConfig& cfg, const Options& opt) {
  const auto load = [&](const std::string& path) {
    auto bank = pplr::read_feature_bank(path);
    if (!bank.gt_ids || !bank.camera_ids) throw pplr::FormatError("eval: bank lacks ids or camera ids: " + path);
    if (!cfg.paths.model_in.empty()) return pplr::read_model(cfg.paths.model_in).project(bank);
    return pplr::normalized(bank);
  };
  const auto query = load(require_path(cfg.paths.query, cfg.paths.bank_in, "paths.query"));
  const auto gallery = load(require_path(cfg.paths.gallery, cfg.paths.bank_in, "paths.gallery"));
  const auto r = pplr::map_cmc({query.global, *query.gt_ids, *query.camera_ids},
                               {gallery.global, *gallery.gt_ids, *gallery.camera_ids});
  json j{{"mAP", r.map}};
  for (std::size_t t = 0; t < r.ranks.size(); ++t) j["CMC@" + std::to_string(r.ranks[t])] = r.cmc[t];
  Output out(opt.out);
  out.stream() << j.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-label refinement on feature banks"};
  app.require_subcommand(1);
  Options opt;

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const pplr::RunConfig&, const Options&);
  };
  const std::vector<Command> commands = {
      {"simgen", "Generate a synthetic feature bank", cmd_simgen},
      {"cluster", "Jaccard distance + DBSCAN pseudo-labels (JSON-lines)", cmd_cluster},
      {"agree", "Cross agreement scores per sample (JSON-lines)", cmd_agree},
      {"refine", "AALS and PGLR refined targets (JSON-lines)", cmd_refine},
      {"train", "One clustering + training stage; writes a loss trace", cmd_train},
      {"pipeline", "Full alternating clustering/training run", cmd_pipeline},
      {"eval", "Retrieval mAP / CMC", cmd_eval},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->allow_extras();
    sub->add_option("--config", opt.config_path, "JSON config file");
    sub->add_option("--seed", opt.seed, "Seed override");
    sub->add_option("--threads", opt.threads, "Worker threads (falls back to PPLR_THREADS)");
    sub->add_option("--out", opt.out, "Output path");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    std::size_t threads = opt.threads;
    if (threads == 0)
      if (const char* env = std::getenv("PPLR_THREADS")) threads = static_cast<std::size_t>(std::atoi(env));
    pplr::set_num_threads(threads == 0 ? 1 : threads);

    for (std::size_t c = 0; c < commands.size(); ++c) {
      if (!subs[c]->parsed()) continue;
      opt.overrides = collect_overrides(subs[c]->remaining());
      if (!opt.seed.empty()) opt.overrides.emplace_back("seed", opt.seed);
      const auto cfg = pplr::parse_config(opt.config_path.empty() ? "" : read_text(opt.config_path), opt.overrides);
      return commands[c].fn(cfg, opt);
    }
  } catch (const pplr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const pplr::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
