// Python bindings: numpy in, numpy out. Point clouds are (N, 3) float32 arrays.
#include "ndp/cluster.hpp"
#include "ndp/losses.hpp"
#include "ndp/metrics.hpp"
#include "ndp/ndp.hpp"
#include "ndp/perlin.hpp"
#include "ndp/pipeline.hpp"
#include "ndp/scenegen.hpp"
#include "ndp/scoring.hpp"
#include "ndp/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ndp;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U16Array = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

PointCloud to_cloud(const F32Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw ContractError("points must have shape (N, 3)");
  PointCloud c;
  const auto v = a.unchecked<2>();
  c.points.reserve(std::size_t(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) c.push_back({v(i, 0), v(i, 1), v(i, 2)});
  return c;
}

F32Array from_cloud(const PointCloud& c) {
  F32Array out({py::ssize_t(c.size()), py::ssize_t(3)});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < c.size(); ++i) {
    v(py::ssize_t(i), 0) = c.points[i].x;
    v(py::ssize_t(i), 1) = c.points[i].y;
    v(py::ssize_t(i), 2) = c.points[i].z;
  }
  return out;
}

template <typename T, typename A>
std::vector<T> to_vec(const A& a) {
  return std::vector<T>(a.data(), a.data() + a.size());
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v) {
  return py::array_t<T>(py::ssize_t(v.size()), v.data());
}

LabelMap to_labels(const U16Array& semantic, const U16Array& instance, const ClassSpec& spec) {
  if (semantic.size() != instance.size()) throw ContractError("semantic and instance lengths differ");
  LabelMap l;
  for (py::ssize_t i = 0; i < semantic.size(); ++i) l.push_back(semantic.data()[i], instance.data()[i], spec);
  return l;
}

py::dict from_labels(const LabelMap& l) {
  std::vector<std::uint8_t> roles(l.role.size());
  for (std::size_t i = 0; i < roles.size(); ++i) roles[i] = static_cast<std::uint8_t>(l.role[i]);
  py::dict d;
  d["semantic"] = to_array(l.semantic);
  d["instance"] = to_array(l.instance);
  d["role"] = to_array(roles);
  return d;
}

LogitField to_logits(const F64Array& a, bool extended) {
  if (a.ndim() != 2) throw ContractError("logits must be 2-D");
  LogitField f;
  f.extended = extended;
  const auto w = std::size_t(a.shape(1));
  if (extended && w % 2) throw ContractError("extended logits need an even width");
  f.num_classes = extended ? w / 2 : w;
  f.values = Eigen::Map<const Matrix>(a.data(), a.shape(0), a.shape(1));
  return f;
}

std::vector<std::uint8_t> mask_or_empty(const std::optional<U8Array>& m) {
  return m ? to_vec<std::uint8_t>(*m) : std::vector<std::uint8_t>{};
}

}  // namespace

PYBIND11_MODULE(_ndp, m) {
  m.doc() = "Neural distribution prior OOD scoring for point clouds";
  m.attr("__version__") = version_string();

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::enum_<Role>(m, "Role")
      .value("INLIER", Role::Inlier)
      .value("VOID", Role::Void)
      .value("AUX_OOD", Role::AuxOod)
      .value("REAL_OOD", Role::RealOod)
      .value("IGNORE", Role::Ignore);

  py::class_<ClassSpec>(m, "ClassSpec")
      .def(py::init<>())
      .def_static("synthetic_default", &ClassSpec::synthetic_default)
      .def_readwrite("inlier_classes", &ClassSpec::inlier_classes)
      .def_readwrite("road_id", &ClassSpec::road_id)
      .def_readwrite("void_id", &ClassSpec::void_id)
      .def_readwrite("ignore_id", &ClassSpec::ignore_id)
      .def_readwrite("ood_id", &ClassSpec::ood_id)
      .def_readwrite("aux_ood_id", &ClassSpec::aux_ood_id)
      .def_readwrite("extended", &ClassSpec::extended)
      .def_property_readonly("logit_width", &ClassSpec::logit_width)
      .def("role_of", &ClassSpec::role_of)
      .def("validate", &ClassSpec::validate);

  // I/O
  m.def("read_points", [](const std::filesystem::path& p) { return from_cloud(load_point_cloud(p)); });
  m.def("write_points", [](const std::filesystem::path& p, const F32Array& a) { save_point_cloud(p, to_cloud(a)); });
  m.def("read_labels", [](const std::filesystem::path& p, const ClassSpec& s) { return from_labels(load_labels(p, s)); });
  m.def("write_labels", [](const std::filesystem::path& p, const U16Array& sem, const U16Array& inst,
                           const ClassSpec& s) { save_labels(p, to_labels(sem, inst, s)); });
  m.def("read_scores", [](const std::filesystem::path& p) { return to_array(load_scores(p).scores); });
  m.def("write_scores", [](const std::filesystem::path& p, const F64Array& s) {
    save_scores(p, ScoreField{to_vec<double>(s)});
  });

  // Scoring
  m.def("entropy_score", [](const F64Array& row) { return entropy_score(to_vec<double>(row)); });
  m.def("energy_score", [](const F64Array& row) { return energy_score(to_vec<double>(row)); });
  m.def("extended_energy_score", [](const F64Array& row) { return extended_energy_score(to_vec<double>(row)); });
  m.def("maxlogit_score", [](const F64Array& row) { return maxlogit_score(to_vec<double>(row)); });
  m.def(
      "static_scores",
      [](const F64Array& logits, const std::string& method, bool extended) {
        return to_array(static_scores(to_logits(logits, extended), ScoreMethod::parse(method)).scores);
      },
      py::arg("logits"), py::arg("method") = "ee", py::arg("extended") = true);

  py::class_<NdpParams>(m, "NdpParams")
      .def_readwrite("w_p", &NdpParams::w_p)
      .def_readwrite("psi", &NdpParams::psi)
      .def_readwrite("w_q", &NdpParams::w_q)
      .def_readwrite("w_k", &NdpParams::w_k)
      .def_readwrite("w_v", &NdpParams::w_v)
      .def_readwrite("w_s", &NdpParams::w_s)
      .def_readwrite("b", &NdpParams::b)
      .def_property_readonly("logit_width", &NdpParams::logit_width)
      .def_property_readonly("latent_dim", &NdpParams::latent_dim);
  m.def("init_params", &init_params, py::arg("logit_width"), py::arg("latent_dim") = kDefaultLatentDim,
        py::arg("seed") = 0);
  m.def(
      "ndp_weight",
      [](const F64Array& logits, const NdpParams& p, bool extended) {
        return ndp_weight_only(to_logits(logits, extended), p);
      },
      py::arg("logits"), py::arg("params"), py::arg("extended") = true);
  m.def(
      "ndp_score",
      [](const F64Array& logits, const NdpParams& p, const std::string& method, bool extended) {
        return to_array(ndp_score(to_logits(logits, extended), ScoreMethod::parse(method), p).scores);
      },
      py::arg("logits"), py::arg("params"), py::arg("method") = "ee", py::arg("extended") = true);

  // Clustering and augmentation
  m.def(
      "dbscan",
      [](const F32Array& pts, double eps, std::size_t min_pts) {
        const auto c = to_cloud(pts);
        return to_array(dbscan(c.points, eps, min_pts).cluster_id);
      },
      py::arg("points"), py::arg("eps"), py::arg("min_pts"));
  m.def(
      "perlin_raise",
      [](const F32Array& pts, const U16Array& sem, const U16Array& inst, const ClassSpec& spec, double r,
         double alpha, double rho, std::uint64_t seed) {
        RaiseConfig cfg;
        cfg.r = r;
        cfg.alpha = alpha;
        cfg.rho = rho;
        cfg.seed = seed;
        const auto out = perlin_raise(to_cloud(pts), to_labels(sem, inst, spec), spec, cfg);
        py::dict d = from_labels(out.labels);
        d["points"] = from_cloud(out.cloud);
        d["raised"] = to_array(out.report.raised_indices);
        d["center"] = py::make_tuple(out.report.center.x, out.report.center.y, out.report.center.z);
        return d;
      },
      py::arg("points"), py::arg("semantic"), py::arg("instance"), py::arg("spec"), py::arg("r") = 1.0,
      py::arg("alpha") = 0.4, py::arg("rho") = 0.3, py::arg("seed") = 0);
  m.def(
      "generate_scene",
      [](std::size_t points, std::uint64_t seed, const ClassSpec& spec, std::size_t anomalies) {
        PipelineConfig cfg;
        cfg.spec = spec;
        cfg.scene = SceneConfig::long_tail(points, 0);
        const auto scans = synthesize(cfg, 1, seed, anomalies);
        py::dict d = from_labels(scans[0].labels);
        d["points"] = from_cloud(scans[0].cloud);
        return d;
      },
      py::arg("points") = 8000, py::arg("seed") = 0, py::arg("spec") = ClassSpec::synthetic_default(),
      py::arg("anomalies") = 0);

  // Metrics
  m.def(
      "auroc", [](const F64Array& s, const U8Array& ood, const std::optional<U8Array>& ig) {
        return auroc(to_vec<double>(s), to_vec<std::uint8_t>(ood), mask_or_empty(ig));
      },
      py::arg("scores"), py::arg("is_ood"), py::arg("ignore") = py::none());
  m.def(
      "fpr_at_95_tpr", [](const F64Array& s, const U8Array& ood, const std::optional<U8Array>& ig) {
        return fpr_at_95_tpr(to_vec<double>(s), to_vec<std::uint8_t>(ood), mask_or_empty(ig));
      },
      py::arg("scores"), py::arg("is_ood"), py::arg("ignore") = py::none());
  m.def(
      "average_precision", [](const F64Array& s, const U8Array& ood, const std::optional<U8Array>& ig) {
        return average_precision(to_vec<double>(s), to_vec<std::uint8_t>(ood), mask_or_empty(ig));
      },
      py::arg("scores"), py::arg("is_ood"), py::arg("ignore") = py::none());
  m.def(
      "panoptic_scores",
      [](const std::vector<Instance>& preds, const std::vector<Instance>& gts, const std::optional<U8Array>& ig) {
        const auto p = panoptic_scores(match_instances(preds, gts, mask_or_empty(ig)));
        py::dict d;
        d["sq"] = p.sq;
        d["rq"] = p.rq;
        d["pq"] = p.pq;
        d["recallq"] = p.recall_q;
        d["uq"] = p.uq;
        return d;
      },
      py::arg("preds"), py::arg("gts"), py::arg("ignore") = py::none());

  // Training and the end-to-end pipeline
  py::class_<Model>(m, "Model")
      .def("score", [](const Model& md, const F32Array& pts) { return to_array(md.score(to_cloud(pts)).scores); })
      .def("logits", [](const Model& md, const F32Array& pts) { return md.logits(to_cloud(pts)).values; })
      .def_readonly("spec", &Model::spec)
      .def_readonly("use_ndp", &Model::use_ndp)
      .def_readonly("ndp", &Model::ndp)
      .def("save", [](const Model& md, const std::filesystem::path& p) { save_model(p, md); });
  m.def("load_model", &load_model);

  m.def(
      "train",
      [](const std::string& config_text, const std::filesystem::path& data_dir) {
        const auto cfg = PipelineConfig::parse(config_text);
        py::gil_scoped_release release;
        return train(load_dataset(data_dir, cfg.spec), cfg.spec, cfg.train).model;
      },
      py::arg("config") = "", py::arg("data_dir"));
  m.def(
      "synthesize",
      [](const std::string& config_text, const std::filesystem::path& out, std::size_t count, std::uint64_t seed,
         std::size_t anomalies) {
        const auto cfg = PipelineConfig::parse(config_text);
        write_dataset(out, synthesize(cfg, count, seed, anomalies));
      },
      py::arg("config") = "", py::arg("out"), py::arg("count"), py::arg("seed") = 0, py::arg("anomalies") = 1);
  m.def(
      "run_pipeline",
      [](const std::string& config_text, const std::filesystem::path& out) {
        const auto cfg = PipelineConfig::parse(config_text);
        PipelineArtifacts a;
        {
          py::gil_scoped_release release;
          a = run_pipeline(cfg, out);
        }
        return read_report(a.report);
      },
      py::arg("config") = "", py::arg("out"));
  m.def("default_config", [] { return PipelineConfig{}.serialize(); });
}
