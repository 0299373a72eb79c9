#include "pplr/config.hpp"

#include <cmath>

namespace pplr {

using nlohmann::json;

namespace {

std::string mode_name(TrainingMode m) { return m == TrainingMode::kBaseline ? "baseline" : "pplr"; }

}  // namespace

json to_json(const RunConfig& cfg) {
  const auto& s = cfg.synth;
  const auto& p = cfg.pipeline;
  json j;
  j["seed"] = cfg.seed;
  j["synth"] = {{"n_identities", s.n_identities},
                {"samples_per_identity", s.samples_per_identity},
                {"dim", s.dim},
                {"n_parts", s.n_parts},
                {"n_cameras", s.n_cameras},
                {"cluster_spread", s.cluster_spread},
                {"occlusion_fraction", s.occlusion_fraction},
                {"part_occlusion", s.part_occlusion},
                {"camera_shift", s.camera_shift}};
  j["dbscan"] = {{"eps", p.dbscan.eps}, {"min_samples", p.dbscan.min_samples}};
  j["jaccard"] = {{"k1", p.jaccard.k1}, {"k2", p.jaccard.k2}, {"lambda", p.jaccard.lambda}};
  j["refinement"] = {{"beta", p.refinement.beta},
                     {"aals_warmup_epochs", p.refinement.aals_warmup_epochs},
                     {"constant_alpha", p.refinement.constant_alpha ? json(*p.refinement.constant_alpha) : json()}};
  j["loss"] = {{"lambda_cam", p.loss_weights.lambda_cam},
               {"tau", p.loss_weights.tau},
               {"n_hard_negatives", p.loss_weights.n_hard_negatives},
               {"camera_loss_all_spaces", p.loss_weights.camera_loss_all_spaces}};
  j["pipeline"] = {{"epochs", p.epochs},
                   {"iters_per_epoch", p.iters_per_epoch},
                   {"batch_p", p.batch_p},
                   {"batch_k", p.batch_k},
                   {"learning_rate", p.learning_rate},
                   {"feature_dim", p.feature_dim},
                   {"head_init_scale", p.head_init_scale},
                   {"k_agreement", p.k_agreement},
                   {"mode", mode_name(p.mode)},
                   {"record_wall_time", p.record_wall_time}};
  j["paths"] = {{"bank_in", cfg.paths.bank_in},       {"bank_out", cfg.paths.bank_out},
                {"report_out", cfg.paths.report_out}, {"model_in", cfg.paths.model_in},
                {"model_out", cfg.paths.model_out},   {"query", cfg.paths.query},
                {"gallery", cfg.paths.gallery}};
  return j;
}

json default_config_json() { return to_json(RunConfig{}); }

namespace {

const char* type_label(const json& v) {
  if (v.is_number_unsigned()) return "non-negative integer";
  if (v.is_number()) return "number";
  if (v.is_boolean()) return "boolean";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool compatible(const json& def, const json& val) {
  if (def.is_number_unsigned()) {
    if (val.is_number_unsigned()) return true;
    if (val.is_number_integer()) return false;
    // Accept 3.0 for an integer field but not 3.5.
    return val.is_number_float() && val.get<double>() >= 0 && std::floor(val.get<double>()) == val.get<double>();
  }
  if (def.is_number()) return val.is_number();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  if (def.is_null()) return val.is_null() || val.is_number();
  return false;
}

void merge(json& target, const json& src, const std::string& prefix) {
  if (!src.is_object()) throw ConfigError("type mismatch at " + (prefix.empty() ? "<root>" : prefix) + ": expected object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!target.contains(it.key())) throw ConfigError("unknown key " + key);
    json& slot = target[it.key()];
    if (slot.is_object()) {
      merge(slot, it.value(), key);
      continue;
    }
    if (!compatible(slot, it.value()))
      throw ConfigError("type mismatch at " + key + ": expected " + type_label(slot) + ", got " +
                        type_label(it.value()));
    if (slot.is_number_unsigned())
      slot = static_cast<std::uint64_t>(it.value().get<double>());
    else
      slot = it.value();
  }
}

// Full dotted path for an override key: exact path or unique leaf name.
std::string resolve_key(const json& defaults, const std::string& key) {
  if (key.find('.') != std::string::npos || defaults.contains(key)) return key;
  std::vector<std::string> hits;
  for (auto it = defaults.begin(); it != defaults.end(); ++it)
    if (it.value().is_object() && it.value().contains(key)) hits.push_back(it.key() + "." + key);
  if (hits.empty()) throw ConfigError("unknown key " + key);
  if (hits.size() > 1) throw ConfigError("ambiguous key " + key + " (use " + hits[0] + " or " + hits[1] + ")");
  return hits[0];
}

json nest(const std::string& path, json value) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t dot; (dot = path.find('.', start)) != std::string::npos; start = dot + 1)
    parts.push_back(path.substr(start, dot - start));
  parts.push_back(path.substr(start));
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) value = json{{*it, std::move(value)}};
  return value;
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  return j.at(section).at(key).get<T>();
}

}  // namespace

RunConfig parse_config(std::string_view document, const std::vector<Override>& overrides) {
  json merged = default_config_json();
  std::string text(document);
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    json user;
    try {
      user = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    merge(merged, user, "");
  }
  for (const auto& [key, raw] : overrides) {
    const std::string path = resolve_key(merged, key);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    merge(merged, nest(path, std::move(value)), "");
  }

  RunConfig cfg;
  cfg.seed = merged.at("seed").get<std::uint64_t>();
  auto& s = cfg.synth;
  s.n_identities = get<std::size_t>(merged, "synth", "n_identities");
  s.samples_per_identity = get<std::size_t>(merged, "synth", "samples_per_identity");
  s.dim = get<std::size_t>(merged, "synth", "dim");
  s.n_parts = get<std::size_t>(merged, "synth", "n_parts");
  s.n_cameras = get<std::size_t>(merged, "synth", "n_cameras");
  s.cluster_spread = get<double>(merged, "synth", "cluster_spread");
  s.occlusion_fraction = get<double>(merged, "synth", "occlusion_fraction");
  try {
    s.part_occlusion = get<std::vector<double>>(merged, "synth", "part_occlusion");
  } catch (const json::type_error&) {
    throw ConfigError("type mismatch at synth.part_occlusion: expected array of numbers");
  }
  s.camera_shift = get<double>(merged, "synth", "camera_shift");
  s.seed = cfg.seed;

  auto& p = cfg.pipeline;
  p.seed = cfg.seed;
  p.dbscan.eps = get<double>(merged, "dbscan", "eps");
  p.dbscan.min_samples = get<std::size_t>(merged, "dbscan", "min_samples");
  p.jaccard.k1 = get<std::size_t>(merged, "jaccard", "k1");
  p.jaccard.k2 = get<std::size_t>(merged, "jaccard", "k2");
  p.jaccard.lambda = get<double>(merged, "jaccard", "lambda");
  p.refinement.beta = get<double>(merged, "refinement", "beta");
  p.refinement.aals_warmup_epochs = get<std::size_t>(merged, "refinement", "aals_warmup_epochs");
  const auto& ca = merged.at("refinement").at("constant_alpha");
  if (!ca.is_null()) p.refinement.constant_alpha = ca.get<double>();
  p.loss_weights.lambda_cam = get<double>(merged, "loss", "lambda_cam");
  p.loss_weights.tau = get<double>(merged, "loss", "tau");
  p.loss_weights.n_hard_negatives = get<std::size_t>(merged, "loss", "n_hard_negatives");
  p.loss_weights.camera_loss_all_spaces = get<bool>(merged, "loss", "camera_loss_all_spaces");
  p.epochs = get<std::size_t>(merged, "pipeline", "epochs");
  p.iters_per_epoch = get<std::size_t>(merged, "pipeline", "iters_per_epoch");
  p.batch_p = get<std::size_t>(merged, "pipeline", "batch_p");
  p.batch_k = get<std::size_t>(merged, "pipeline", "batch_k");
  p.learning_rate = get<double>(merged, "pipeline", "learning_rate");
  p.feature_dim = get<std::size_t>(merged, "pipeline", "feature_dim");
  p.head_init_scale = get<double>(merged, "pipeline", "head_init_scale");
  p.k_agreement = get<std::size_t>(merged, "pipeline", "k_agreement");
  const auto mode = get<std::string>(merged, "pipeline", "mode");
  if (mode == "pplr")
    p.mode = TrainingMode::kPplr;
  else if (mode == "baseline")
    p.mode = TrainingMode::kBaseline;
  else
    throw ConfigError("pipeline.mode must be \"pplr\" or \"baseline\"");
  p.record_wall_time = get<bool>(merged, "pipeline", "record_wall_time");

  const auto& paths = merged.at("paths");
  cfg.paths.bank_in = paths.at("bank_in").get<std::string>();
  cfg.paths.bank_out = paths.at("bank_out").get<std::string>();
  cfg.paths.report_out = paths.at("report_out").get<std::string>();
  cfg.paths.model_in = paths.at("model_in").get<std::string>();
  cfg.paths.model_out = paths.at("model_out").get<std::string>();
  cfg.paths.query = paths.at("query").get<std::string>();
  cfg.paths.gallery = paths.at("gallery").get<std::string>();

  s.validate();
  p.validate();
  return cfg;
}

}  // namespace pplr
