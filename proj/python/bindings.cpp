#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pplr/agreement.hpp"
#include "pplr/cluster.hpp"
#include "pplr/config.hpp"
#include "pplr/evaluate.hpp"
#include "pplr/ingest.hpp"
#include "pplr/neighbors.hpp"
#include "pplr/pipeline.hpp"
#include "pplr/refine.hpp"

namespace py = pybind11;
using namespace pplr;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const F64& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v) {
  py::array_t<T> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

template <typename T>
std::vector<T> to_vector(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

// Banks cross the boundary as dicts: global, parts (list), camera_ids, gt_ids.
py::dict bank_to_dict(const FeatureBank& b) {
  py::dict d;
  d["global"] = to_array(b.global);
  py::list parts;
  for (const auto& p : b.parts) parts.append(to_array(p));
  d["parts"] = parts;
  d["camera_ids"] = b.camera_ids ? py::object(to_array(*b.camera_ids)) : py::none();
  d["gt_ids"] = b.gt_ids ? py::object(to_array(*b.gt_ids)) : py::none();
  return d;
}

FeatureBank dict_to_bank(const py::dict& d) {
  FeatureBank b;
  b.global = to_matrix(d["global"].cast<F64>());
  if (d.contains("parts"))
    for (auto p : d["parts"]) b.parts.push_back(to_matrix(p.cast<F64>()));
  if (d.contains("camera_ids") && !d["camera_ids"].is_none())
    b.camera_ids = to_vector<std::uint16_t>(d["camera_ids"].cast<py::array_t<std::uint16_t, py::array::forcecast>>());
  if (d.contains("gt_ids") && !d["gt_ids"].is_none())
    b.gt_ids = to_vector<std::uint32_t>(d["gt_ids"].cast<py::array_t<std::uint32_t, py::array::forcecast>>());
  b.validate();
  return b;
}

RankedLists to_lists(const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("ranked lists must be N x k");
  RankedLists r{0, static_cast<std::size_t>(a.shape(1)), {a.data(), a.data() + a.size()}};
  r.validate();
  return r;
}

DistanceMatrix to_dist(const F64& a) { return {to_matrix(a), Metric::kSquaredEuclidean}; }

py::dict quality_dict(const LabelQuality& q) {
  py::dict d;
  d["accuracy"] = q.accuracy;
  d["pairwise_precision"] = q.pairwise_precision;
  d["pairwise_recall"] = q.pairwise_recall;
  d["pairwise_f"] = q.pairwise_f;
  d["outlier_fraction"] = q.outlier_fraction;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pseudo-label refinement engine";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("set_num_threads", &set_num_threads);

  m.def(
      "generate_synthetic",
      [](const std::string& overrides_json) {
        std::vector<Override> ov;
        if (!overrides_json.empty()) {
          const auto j = nlohmann::json::parse(overrides_json);
          for (auto it = j.begin(); it != j.end(); ++it) ov.emplace_back("synth." + it.key(), it.value().dump());
        }
        const auto seed_it = std::find_if(ov.begin(), ov.end(), [](const Override& o) { return o.first == "synth.seed"; });
        if (seed_it != ov.end()) seed_it->first = "seed";
        return bank_to_dict(generate_synthetic_bank(parse_config("{}", ov).synth));
      },
      py::arg("overrides_json") = "", "Synthetic bank; overrides are a JSON object of synth fields (and seed).");

  m.def("write_feature_bank", [](const py::dict& bank, const std::string& path) { write_feature_bank(dict_to_bank(bank), path); });
  m.def("read_feature_bank", [](const std::string& path) { return bank_to_dict(read_feature_bank(path)); });

  m.def("l2_normalize", [](const F64& x) { return to_array(l2_normalize(to_matrix(x))); });
  m.def("pairwise_sq_euclidean", [](const F64& x) { return to_array(pairwise_sq_euclidean(to_matrix(x)).values); });
  m.def(
      "topk_ranked_lists",
      [](const F64& dist, std::size_t k) {
        const auto r = topk_ranked_lists(to_dist(dist), k, 0);
        py::array_t<std::uint32_t> a({r.n_samples(), k});
        std::copy(r.lists.begin(), r.lists.end(), a.mutable_data());
        return a;
      },
      py::arg("dist"), py::arg("k"));
  m.def(
      "k_reciprocal_jaccard",
      [](const F64& x, std::size_t k1, std::size_t k2, double lambda) {
        return to_array(k_reciprocal_jaccard(to_matrix(x), {k1, k2, lambda}).values);
      },
      py::arg("features"), py::arg("k1") = 30, py::arg("k2") = 6, py::arg("lambda_") = 0.0);
  m.def(
      "dbscan",
      [](const F64& dist, double eps, std::size_t min_samples) {
        return to_array(dbscan(to_dist(dist), {eps, min_samples}).labels);
      },
      py::arg("dist"), py::arg("eps") = 0.6, py::arg("min_samples") = 4, "Cluster labels, -1 for noise.");
  m.def("cross_agreement",
        [](const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& b) {
          return to_array(cross_agreement(to_lists(a), to_lists(b)));
        });

  m.def("aals_target", [](int label, std::size_t k, double alpha) { return to_array(aals_target(label, k, alpha).probs()); });
  m.def("pglr_weights", [](const std::vector<double>& a) { return to_array(pglr_weights(a)); });
  m.def("pglr_target", [](int label, std::size_t k, const std::vector<std::vector<double>>& preds,
                          const std::vector<double>& weights, double beta) {
    std::vector<SoftLabel> p;
    for (const auto& v : preds) p.emplace_back(v);
    return to_array(pglr_target(label, k, p, weights, beta).probs());
  });

  m.def("average_precision", [](const std::vector<std::uint8_t>& rel) { return average_precision(rel); });
  m.def(
      "map_cmc",
      [](const F64& q, const std::vector<std::uint32_t>& qid, const std::vector<std::uint16_t>& qcam, const F64& g,
         const std::vector<std::uint32_t>& gid, const std::vector<std::uint16_t>& gcam) {
        const Matrix qm = to_matrix(q), gm = to_matrix(g);
        const auto r = map_cmc({qm, qid, qcam}, {gm, gid, gcam});
        py::dict d;
        d["mAP"] = r.map;
        for (std::size_t t = 0; t < r.ranks.size(); ++t) d[("CMC@" + std::to_string(r.ranks[t])).c_str()] = r.cmc[t];
        d["n_queries"] = r.n_queries;
        d["n_excluded"] = r.n_excluded;
        return d;
      },
      py::arg("query"), py::arg("query_ids"), py::arg("query_cams"), py::arg("gallery"), py::arg("gallery_ids"),
      py::arg("gallery_cams"));
  m.def("label_quality", [](const std::vector<int>& assignment, const std::vector<std::uint32_t>& gt) {
    return quality_dict(label_quality(assignment, gt));
  });

  m.def("default_config", [] { return default_config_json().dump(); }, "Default run config as a JSON string.");
  m.def(
      "run_pipeline",
      [](const py::dict& bank, const std::string& config_json) {
        const RunConfig cfg = parse_config(config_json);
        const FeatureBank raw = dict_to_bank(bank);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run(cfg.pipeline, raw);
        }
        py::list reports;
        for (const auto& rep : r.reports) reports.append(rep.to_json().dump());
        const auto blob = encode_model(r.model);
        py::dict out;
        out["reports"] = reports;
        out["model"] = py::bytes(reinterpret_cast<const char*>(blob.data()), blob.size());
        out["initial_mAP"] = r.initial_retrieval ? py::object(py::float_(r.initial_retrieval->map)) : py::none();
        return out;
      },
      py::arg("bank"), py::arg("config_json") = "{}",
      "Full alternating run. Reports come back as JSON strings, the model as the binary blob.");
}
