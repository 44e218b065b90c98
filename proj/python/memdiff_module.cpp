#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "memdiff/energy_landscape.hpp"
#include "memdiff/harness.hpp"
#include "memdiff/hopfield.hpp"
#include "memdiff/score_net.hpp"

namespace py = pybind11;
using namespace memdiff;

namespace {

MemorySpec make_segment_spec(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int nodes) {
  Subspace s;
  s.kind = Subspace::Kind::segment;
  s.a = a;
  s.b = b;
  s.nodes = nodes;
  return MemorySpec::make_extended(static_cast<int>(a.size()), {s});
}

MemorySpec make_ring_spec(const Eigen::VectorXd& center, double radius, int atoms) {
  SemanticCloud cloud;
  cloud.points.resize(2, atoms);
  cloud.weights = Eigen::VectorXd::Constant(atoms, 1.0 / atoms);
  for (int i = 0; i < atoms; ++i) {
    double ang = 2.0 * M_PI * i / atoms;
    cloud.points.col(i) << center[0] + radius * std::cos(ang), center[1] + radius * std::sin(ang);
  }
  return MemorySpec::make_semantic(std::move(cloud));
}

}  // namespace

PYBIND11_MODULE(memdiff, m) {
  m.doc() = "Hopfield networks and diffusion denoisers over a shared pattern store";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_ArithmeticError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);

  py::enum_<PatternKind>(m, "PatternKind")
      .value("binary", PatternKind::binary)
      .value("continuous", PatternKind::continuous);

  py::class_<PatternSet>(m, "PatternSet")
      .def_readonly("dim", &PatternSet::dim)
      .def_readonly("count", &PatternSet::count)
      .def_readonly("data", &PatternSet::data)
      .def_readonly("kind", &PatternSet::kind)
      .def("pattern", &PatternSet::pattern)
      .def_static("binary", &PatternSet::binary)
      .def_static("continuous", &PatternSet::continuous);

  m.def("gen_binary_patterns", &gen_binary_patterns, py::arg("dim"), py::arg("count"), py::arg("seed"));
  m.def("gen_gaussian_patterns", &gen_gaussian_patterns, py::arg("dim"), py::arg("count"), py::arg("seed"));
  m.def("normalize_columns", &normalize_columns);
  m.def("corrupt_gaussian", &corrupt_gaussian, py::arg("y"), py::arg("theta"), py::arg("seed"));
  m.def(
      "mask_bernoulli",
      [](const Eigen::VectorXd& y, double p, uint64_t seed) {
        MaskedVector mv = mask_bernoulli(y, p, seed);
        return py::make_tuple(mv.x, mv.mask);
      },
      py::arg("y"), py::arg("p"), py::arg("seed"));
  m.def("binarize", &binarize);
  m.def("hamming_error", &hamming_error);
  m.def("pearson", &pearson);

  py::class_<CouplingMatrix>(m, "CouplingMatrix")
      .def_readonly("dim", &CouplingMatrix::dim)
      .def_readonly("weights", &CouplingMatrix::weights);

  py::enum_<UpdateMode>(m, "UpdateMode")
      .value("synchronous", UpdateMode::synchronous)
      .value("asynchronous", UpdateMode::asynchronous);

  py::class_<ModernHopfieldConfig>(m, "ModernHopfieldConfig")
      .def(py::init<>())
      .def_readwrite("beta", &ModernHopfieldConfig::beta)
      .def_readwrite("max_iters", &ModernHopfieldConfig::max_iters)
      .def_readwrite("convergence_tol", &ModernHopfieldConfig::convergence_tol);

  m.def("hebbian_weights", &hebbian_weights);
  m.def("classical_update", &classical_update, py::arg("w"), py::arg("x"), py::arg("mode"),
        py::arg("seed") = 0);
  m.def("classical_energy", &classical_energy);
  m.def(
      "classical_recall",
      [](const CouplingMatrix& w, const Eigen::VectorXd& x0, int max_sweeps, uint64_t seed) {
        ClassicalRecallResult r = classical_recall(w, x0, max_sweeps, seed);
        return py::make_tuple(r.state, r.converged, r.sweeps);
      },
      py::arg("w"), py::arg("x0"), py::arg("max_sweeps"), py::arg("seed"));
  m.def("modern_energy", &modern_energy);
  m.def("modern_softmax_weights", &modern_softmax_weights);
  m.def("modern_update", &modern_update);
  m.def("modern_recall", &modern_recall, py::arg("patterns"), py::arg("x0"), py::arg("cfg"));
  m.def("modern_iterates", &modern_iterates);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_static("variance_exploding", &NoiseSchedule::variance_exploding, py::arg("sigma"), py::arg("T"))
      .def_static("variance_preserving", &NoiseSchedule::variance_preserving, py::arg("gamma"))
      .def("theta_of", &NoiseSchedule::theta_of)
      .def("var_of", &NoiseSchedule::var_of)
      .def("std_of", &NoiseSchedule::std_of)
      .def("data_time", &NoiseSchedule::data_time)
      .def("beta_of", &NoiseSchedule::beta_of);

  m.def(
      "forward_sample",
      [](const Eigen::VectorXd& y, double t, const NoiseSchedule& s, uint64_t seed) {
        ForwardSampleResult r = forward_sample(y, t, s, seed);
        return py::make_tuple(r.x, r.delta);
      },
      py::arg("y"), py::arg("t"), py::arg("schedule"), py::arg("seed"));
  m.def("log_marginal", &log_marginal);
  m.def("exact_score", &exact_score);
  m.def("make_exact_score", &make_exact_score);
  m.def("t_start_for_noise", &t_start_for_noise, py::arg("theta"), py::arg("gamma"));

  py::class_<Trajectory>(m, "Trajectory")
      .def_readonly("times", &Trajectory::times)
      .def_readonly("states", &Trajectory::states)
      .def_readonly("t_start", &Trajectory::t_start)
      .def_readonly("t_end", &Trajectory::t_end)
      .def("paper_time", &Trajectory::paper_time)
      .def("final_state", &Trajectory::final_state);

  m.def("ode_denoise", &ode_denoise, py::arg("score"), py::arg("x0"), py::arg("t0"),
        py::arg("schedule"), py::arg("steps"), py::arg("t_end") = std::nullopt);
  m.def("sde_sample", &sde_sample, py::arg("score"), py::arg("x0"), py::arg("t0"),
        py::arg("schedule"), py::arg("steps"), py::arg("seed"), py::arg("t_end") = std::nullopt,
        py::arg("noise_scale") = 1.0);

  py::class_<MlpParams>(m, "MlpParams")
      .def_property_readonly("dim", &MlpParams::dim)
      .def_property_readonly("hidden", &MlpParams::hidden)
      .def("param_count", &MlpParams::param_count)
      .def_static("zeros", &MlpParams::zeros)
      .def_static("init", &MlpParams::init);

  m.def("mlp_forward", &mlp_forward, py::arg("params"), py::arg("x"), py::arg("theta_t"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("schedule", &TrainConfig::schedule)
      .def_readwrite("width_factor", &TrainConfig::width_factor)
      .def_readwrite("hidden_units", &TrainConfig::hidden_units);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("params", &TrainResult::params)
      .def_readonly("loss_history", &TrainResult::loss_history)
      .def_readonly("steps_run", &TrainResult::steps_run);

  m.def("train", &train, py::arg("patterns"), py::arg("cfg"));
  m.def("make_learned_score", &make_learned_score, py::arg("params"), py::arg("schedule"));
  m.def("save_mlp", [](const MlpParams& p, const std::string& bin, const std::string& manifest) {
    save_mlp(p, bin, manifest);
  });
  m.def("load_mlp", &load_mlp);

  py::class_<MemorySpec>(m, "MemorySpec");
  m.def("make_points_spec", [](const Eigen::MatrixXd& pts) {
    return MemorySpec::make_points(PatternSet::continuous(pts));
  });
  m.def("make_segment_spec", &make_segment_spec, py::arg("a"), py::arg("b"), py::arg("nodes") = 256);
  m.def("make_ring_spec", &make_ring_spec, py::arg("center"), py::arg("radius"), py::arg("atoms") = 256);
  m.def("u_dm", &u_dm);
  m.def("equivalence_residual",
        [](const PatternSet& ps, const std::vector<Eigen::VectorXd>& xs, double t, const NoiseSchedule& s) {
          ResidualStats r = equivalence_residual(ps, xs, t, s);
          return py::make_tuple(r.spread, r.offset);
        });
  m.def("raw_memory_energy", &raw_memory_energy);
  m.def("memory_energy", &memory_energy);
  m.def("memory_energy_gradient", &memory_energy_gradient);

  py::class_<GridBounds>(m, "GridBounds")
      .def(py::init<>())
      .def_readwrite("xmin", &GridBounds::xmin)
      .def_readwrite("xmax", &GridBounds::xmax)
      .def_readwrite("ymin", &GridBounds::ymin)
      .def_readwrite("ymax", &GridBounds::ymax);

  py::class_<EnergyGrid>(m, "EnergyGrid")
      .def_readonly("nx", &EnergyGrid::nx)
      .def_readonly("ny", &EnergyGrid::ny)
      .def_readonly("values", &EnergyGrid::values)
      .def_readonly("grad_x", &EnergyGrid::grad_x)
      .def_readonly("grad_y", &EnergyGrid::grad_y)
      .def_readonly("beta", &EnergyGrid::beta)
      .def_readonly("kind", &EnergyGrid::kind);

  m.def("emit_memory_grid", &emit_memory_grid, py::arg("spec"), py::arg("bounds"), py::arg("nx"),
        py::arg("ny"), py::arg("beta"), py::arg("workers") = 1);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("master_seed", &ExperimentConfig::master_seed)
      .def_readwrite("trials", &ExperimentConfig::trials)
      .def_readwrite("theta", &ExperimentConfig::theta)
      .def_readwrite("beta", &ExperimentConfig::beta)
      .def_readwrite("hopfield_iters", &ExperimentConfig::hopfield_iters)
      .def_readwrite("dims", &ExperimentConfig::dims)
      .def_readwrite("pattern_counts", &ExperimentConfig::pattern_counts)
      .def_readwrite("error_threshold", &ExperimentConfig::error_threshold)
      .def_readwrite("ode_steps", &ExperimentConfig::ode_steps)
      .def_readwrite("sde_steps", &ExperimentConfig::sde_steps)
      .def_readwrite("gamma", &ExperimentConfig::gamma)
      .def_readwrite("error_samples", &ExperimentConfig::error_samples)
      .def_readwrite("workers", &ExperimentConfig::workers)
      .def_readwrite("train_epochs", &ExperimentConfig::train_epochs)
      .def_readwrite("learned_reps", &ExperimentConfig::learned_reps);

  py::enum_<RecallModel>(m, "RecallModel")
      .value("classical", RecallModel::classical)
      .value("modern", RecallModel::modern)
      .value("diffusion", RecallModel::diffusion);

  py::class_<Table1Cell>(m, "Table1Cell")
      .def_readonly("task", &Table1Cell::task)
      .def_readonly("n", &Table1Cell::n)
      .def_readonly("r_diffusion", &Table1Cell::r_diffusion)
      .def_readonly("r_classical", &Table1Cell::r_classical)
      .def_readonly("r_truth", &Table1Cell::r_truth);

  py::class_<CorrelationTable>(m, "CorrelationTable")
      .def_readonly("cells", &CorrelationTable::cells)
      .def_readonly("trials", &CorrelationTable::trials)
      .def_readonly("config_hash", &CorrelationTable::config_hash);

  py::class_<CapacityPoint>(m, "CapacityPoint")
      .def_readonly("d", &CapacityPoint::d)
      .def_readonly("capacity", &CapacityPoint::capacity)
      .def_readonly("lo95", &CapacityPoint::lo95)
      .def_readonly("hi95", &CapacityPoint::hi95);

  py::class_<CapacityCurve>(m, "CapacityCurve")
      .def_readonly("model", &CapacityCurve::model)
      .def_readonly("points", &CapacityCurve::points)
      .def_readonly("smoothed", &CapacityCurve::smoothed);

  m.def("run_table1", &run_table1, py::call_guard<py::gil_scoped_release>());
  m.def("estimate_capacity", &estimate_capacity, py::call_guard<py::gil_scoped_release>());
  m.def("bootstrap_ci", [](const std::vector<double>& samples, double level, int resamples, uint64_t seed) {
    return bootstrap_ci(samples, level, resamples, seed);
  });
  m.def("gaussian_smooth", [](const std::vector<double>& series, double sigma) {
    return gaussian_smooth(series, sigma);
  });
}
