#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "glsasm/appearance.hpp"
#include "glsasm/chi_square.hpp"
#include "glsasm/engine.hpp"
#include "glsasm/error.hpp"
#include "glsasm/eval.hpp"
#include "glsasm/io.hpp"
#include "glsasm/pdm.hpp"
#include "glsasm/phantom.hpp"
#include "glsasm/weighting.hpp"

namespace py = pybind11;
using namespace glsasm;

namespace {

using Pixels = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image image_from_array(const Pixels& a) {
  if (a.ndim() != 2) throw Error(ErrorKind::InvariantViolation, "image must be a 2-D array (rows, columns)");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

Pixels image_to_array(const Image& img) {
  Pixels a({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

// A 1-D real array is a diagonal weight; a 2-D complex array is used as is.
HermitianWeight to_weight(const py::object& w, Eigen::Index n) {
  if (w.is_none()) return HermitianWeight::identity(n);
  const py::array a = py::array::ensure(w);
  if (a.ndim() == 1) return HermitianWeight::diagonal(w.cast<Eigen::VectorXd>());
  return HermitianWeight(w.cast<Eigen::MatrixXcd>());
}

std::vector<ResidualRecord> to_records(const std::vector<LandmarkVector>& residuals) {
  std::vector<ResidualRecord> records;
  for (std::size_t i = 0; i < residuals.size(); ++i) records.push_back({residuals[i], 0, static_cast<int>(i)});
  return records;
}

std::vector<const LabeledImage*> pointers(const std::vector<LabeledImage>& samples) {
  std::vector<const LabeledImage*> out;
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Active shape model segmentation with residual-covariance weighting";

  // Messages start with the error kind, e.g. "ConfigError: ...".
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::enum_<Strategy>(m, "Strategy")
      .value("identity", Strategy::Identity)
      .value("zhao", Strategy::ZhaoInverseDistance)
      .value("yang", Strategy::YangTrace)
      .value("gls_diagonal", Strategy::GlsDiagonal)
      .value("gls_full", Strategy::GlsFull);
  m.def("parse_strategy", [](const std::string& name) { return parse_strategy(name); });

  py::class_<SimilarityTransform>(m, "SimilarityTransform")
      .def(py::init([](Complex r, Complex t) { return SimilarityTransform{r, t}; }), py::arg("r") = Complex(1.0),
           py::arg("t") = Complex(0.0))
      .def_readwrite("r", &SimilarityTransform::r)
      .def_readwrite("t", &SimilarityTransform::t)
      .def("inverse", &SimilarityTransform::inverse)
      .def("__call__", [](const SimilarityTransform& s, const LandmarkVector& k) { return apply_transform(k, s); })
      .def("__repr__", [](const SimilarityTransform& s) {
        return "SimilarityTransform(r=" + py::repr(py::cast(s.r)).cast<std::string>() +
               ", t=" + py::repr(py::cast(s.t)).cast<std::string>() + ")";
      });

  // shape model
  m.def("procrustes_align", [](const std::vector<LandmarkVector>& shapes) {
    const ProcrustesResult r = procrustes_align(shapes);
    return py::make_tuple(r.aligned, r.transforms, r.mean);
  }, "Aligned real shape vectors, per-shape transforms and the unit-norm mean.");
  m.def("solve_pose", [](const LandmarkVector& model, const LandmarkVector& targets, const py::object& w) {
    return solve_pose(model, targets, to_weight(w, targets.size()));
  }, py::arg("model_points"), py::arg("targets"), py::arg("weight") = py::none());

  py::class_<PointDistributionModel>(m, "PointDistributionModel")
      .def_readonly("mean", &PointDistributionModel::mean)
      .def_readonly("modes", &PointDistributionModel::modes)
      .def_readonly("eigenvalues", &PointDistributionModel::eigenvalues)
      .def_readonly("xi", &PointDistributionModel::xi)
      .def_readonly("retained_fraction", &PointDistributionModel::retained_fraction)
      .def_property_readonly("n_modes", &PointDistributionModel::n_modes)
      .def_property_readonly("n_landmarks", &PointDistributionModel::n_landmarks);
  m.def("train_pdm", [](const std::vector<RealShapeVector>& aligned, double variance_fraction, double xi) {
    return train_pdm(aligned, {variance_fraction, xi});
  }, py::arg("aligned"), py::arg("variance_fraction") = 0.98, py::arg("xi") = 9.0);
  m.def("plausibility", &plausibility);
  m.def("constrain", &constrain);
  m.def("model_points", &model_points);
  m.def("reconstruct", &reconstruct);

  // fitting
  py::class_<FitResult>(m, "FitResult")
      .def_readonly("pose", &FitResult::pose)
      .def_readonly("shape", &FitResult::shape)
      .def_readonly("landmarks", &FitResult::landmarks)
      .def_readonly("objective", &FitResult::objective)
      .def_readonly("degraded", &FitResult::degraded)
      .def_readonly("alternations", &FitResult::alternations);
  m.def("gls_fit",
        [](const LandmarkVector& targets, const PointDistributionModel& pdm, const py::object& w, int alternations,
           double tol) {
          return gls_fit(targets, to_weight(w, targets.size()), pdm, std::nullopt, {alternations, tol});
        },
        py::arg("targets"), py::arg("pdm"), py::arg("weight") = py::none(), py::arg("inner_alternations") = 5,
        py::arg("objective_tol") = 1e-10,
        "Weighted fit. weight is None (identity), a 1-D diagonal or a Hermitian matrix.");

  // residual weighting
  m.def("estimate_covariance",
        [](const std::vector<LandmarkVector>& residuals, bool diagonal_only, double shrinkage, bool centered) {
          const ResidualCovariance c = estimate_covariance(to_records(residuals), diagonal_only, shrinkage, centered);
          return py::make_tuple(c.r_hat, c.r_inv);
        },
        py::arg("residuals"), py::arg("diagonal_only") = true, py::arg("shrinkage") = 0.05,
        py::arg("centered") = false, "Returns (r_hat, regularized inverse).");
  m.def("sample_residual_covariance", [](const std::vector<LandmarkVector>& residuals, bool centered) {
    return sample_residual_covariance(to_records(residuals), centered);
  }, py::arg("residuals"), py::arg("centered") = false);
  m.def("chi_square_gate",
        [](const Eigen::VectorXd& distances, double alpha, int dof, bool fallback) {
          GateConfig gate = GateConfig::make(alpha, dof, distances.size());
          gate.fallback = fallback;
          const GateResult r = chi_square_gate(distances, gate);
          return py::make_tuple(r.flags, r.fallback, r.insufficient);
        },
        py::arg("distances"), py::arg("alpha") = 0.10, py::arg("dof") = 10, py::arg("fallback") = true,
        "Returns (flags, fallback, insufficient).");
  m.def("chi_square_upper_quantile", &chi_square_upper_quantile, py::arg("upper_tail"), py::arg("dof"));
  m.def("complex_normal_neg_log_likelihood", &complex_normal_neg_log_likelihood);

  // phantoms and data
  py::class_<LabeledImage>(m, "LabeledImage")
      .def_readonly("id", &LabeledImage::id)
      .def_property_readonly("image", [](const LabeledImage& s) { return image_to_array(s.image); })
      .def_readonly("landmarks", &LabeledImage::landmarks)
      .def_property_readonly("occlusions", [](const LabeledImage& s) {
        std::vector<std::array<double, 4>> out;
        for (const Rect& r : s.occlusions) out.push_back({r.x0, r.y0, r.x1, r.y1});
        return out;
      });
  m.def("generate_corpus",
        [](int count, std::uint64_t seed, int image_size, const std::string& occlude, double noise_sigma) {
          PhantomConfig pc;
          pc.seed = seed;
          pc.image_size = image_size;
          pc.noise_sigma = noise_sigma;
          if (!occlude.empty()) pc.occlusions = parse_occlusion_list(occlude);
          return generate_corpus(pc, count);
        },
        py::arg("count"), py::arg("seed") = 0, py::arg("image_size") = 480, py::arg("occlude") = "",
        py::arg("noise_sigma") = 0.05);
  m.def("corpus_seed", &corpus_seed);
  m.def("load_samples", [](const std::filesystem::path& manifest) { return load_samples(load_manifest(manifest)); });
  m.def("load_image", [](const std::filesystem::path& p) { return image_to_array(load_image(p)); });
  m.def("load_landmarks", &load_landmarks);
  m.def("checksum", [](const py::bytes& b) { return checksum(std::string(b)); });

  // models and segmentation
  py::class_<LooConfig>(m, "LooConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &LooConfig::alpha)
      .def_readwrite("gate_enabled", &LooConfig::gate_enabled)
      .def_readwrite("gate_baselines", &LooConfig::gate_baselines)
      .def_readwrite("max_iterations", &LooConfig::max_iterations)
      .def_readwrite("inner_alternations", &LooConfig::inner_alternations)
      .def_readwrite("convergence_tol", &LooConfig::convergence_tol)
      .def_readwrite("seed", &LooConfig::seed)
      .def_readwrite("threads", &LooConfig::threads)
      .def_readwrite("occluded_landmarks", &LooConfig::occluded_landmarks);

  py::class_<ModelBundle>(m, "Model")
      .def_readonly("pdm", &ModelBundle::pdm)
      .def_property_readonly("calibrated", [](const ModelBundle& b) { return b.calibration.has_value(); })
      .def_property_readonly("critical_value", [](const ModelBundle& b) { return b.gate.critical_value; })
      .def("save", [](const ModelBundle& b, const std::filesystem::path& p) { save_model(p, b); });
  m.def("load_model", &load_model);
  m.def("train",
        [](const std::vector<LabeledImage>& samples, const LooConfig& cfg, bool calibrate) {
          const TrainedModels t = train_models(pointers(samples), cfg, calibrate, cfg.seed);
          ModelBundle b;
          b.pdm = t.pdm;
          b.profiles = t.profiles;
          b.calibration = t.calibration;
          b.gate = GateConfig::make(cfg.alpha, t.profiles.config.effective_len(), t.pdm.n_landmarks());
          b.gate.enabled = cfg.gate_enabled;
          return b;
        },
        py::arg("samples"), py::arg("config") = LooConfig{}, py::arg("calibrate") = true);

  m.def("segment",
        [](const ModelBundle& b, const Pixels& pixels, Strategy strategy, int iterations,
           std::optional<LandmarkVector> init) {
          const Image img = image_from_array(pixels);
          AsmConfig cfg;
          cfg.max_iterations = iterations;
          cfg.weight_spec.strategy = strategy;
          cfg.weight_spec.gate = b.gate;
          if (needs_covariance(strategy)) {
            if (!b.calibration) throw Error(ErrorKind::ConfigError, "strategy needs a calibrated model");
            cfg.weight_spec.covariance = b.calibration->covariance(strategy == Strategy::GlsDiagonal);
          }
          const LandmarkVector start = init ? *init : initialize_from_mean(img, b.pdm);
          const SegmentResult r = asm_segment(img, start, b.pdm, b.profiles, cfg);
          return py::make_tuple(r.fit, static_cast<int>(r.trace.size()));
        },
        py::arg("model"), py::arg("image"), py::arg("strategy") = Strategy::GlsDiagonal, py::arg("iterations") = 100,
        py::arg("init") = py::none(), "Returns (fit, iterations run).");

  // evaluation
  py::class_<StrategyReport>(m, "StrategyReport")
      .def_readonly("strategy", &StrategyReport::strategy)
      .def_readonly("rmse", &StrategyReport::rmse)
      .def("mean_rmse", &StrategyReport::mean_rmse)
      .def("group_rmse", &StrategyReport::group_rmse);
  py::class_<LooReport>(m, "LooReport")
      .def_readonly("strategies", &LooReport::strategies)
      .def_readonly("image_ids", &LooReport::image_ids)
      .def_property_readonly("failures", [](const LooReport& r) {
        std::vector<std::pair<int, std::string>> out;
        for (const auto& f : r.failures) out.emplace_back(f.image_id, f.message);
        return out;
      })
      .def("find", &LooReport::find, py::return_value_policy::reference_internal)
      .def("results_table", &format_results_table)
      .def("summary", &format_summary);
  m.def("run_leave_one_out", &run_leave_one_out, py::arg("samples"), py::arg("strategies"),
        py::arg("config") = LooConfig{}, py::call_guard<py::gil_scoped_release>());
  m.def("point_to_contour_distance", &point_to_contour_distance, py::arg("p"), py::arg("contour"),
        py::arg("closed") = true);
}
