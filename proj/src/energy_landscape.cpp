#include "memdiff/energy_landscape.hpp"

#include <cmath>
#include <limits>
#include <thread>

#include "memdiff/hopfield.hpp"
#include "memdiff/io.hpp"

namespace memdiff {

namespace {

// Every raw taxonomy energy is a log-sum-exp over terms affine in x:
//   term_k = beta * x . dir_k + logw_k
// which covers point atoms, quadrature nodes, cloud atoms and linear cores
// (dir = P' xi). Gradients follow from the softmax over terms.
struct LinearTerms {
  Eigen::MatrixXd dirs;   // dim x K
  Eigen::VectorXd logw;   // K
};

void append_atom(std::vector<Eigen::VectorXd>& dirs, std::vector<double>& logw,
                 const Eigen::VectorXd& d, double w) {
  if (w <= 0.0) return;  // zero-weight atoms contribute nothing
  dirs.push_back(d);
  logw.push_back(std::log(w));
}

void append_subspace(std::vector<Eigen::VectorXd>& dirs, std::vector<double>& logw,
                     const Subspace& s, int dim) {
  if (s.nodes < 2) throw ParameterError("Subspace: at least 2 quadrature nodes required");
  if (s.kind == Subspace::Kind::segment) {
    if (s.a.size() != dim || s.b.size() != dim) throw ParameterError("Subspace: segment dimension mismatch");
    double len = (s.b - s.a).norm();
    if (len == 0.0) {
      // Degenerate segment: a single point atom with unit weight.
      append_atom(dirs, logw, s.a, 1.0);
      return;
    }
    double h = len / (s.nodes - 1);
    for (int j = 0; j < s.nodes; ++j) {
      double u = static_cast<double>(j) / (s.nodes - 1);
      double w = (j == 0 || j == s.nodes - 1) ? 0.5 * h : h;
      append_atom(dirs, logw, s.a + u * (s.b - s.a), w);
    }
  } else {
    if (dim != 2) throw ParameterError("Subspace: circles are 2-D only");
    if (s.center.size() != 2) throw ParameterError("Subspace: circle center must be 2-D");
    if (!(s.radius > 0.0)) throw ParameterError("Subspace: circle radius must be positive");
    double w = 2.0 * M_PI * s.radius / s.nodes;
    for (int j = 0; j < s.nodes; ++j) {
      double ang = 2.0 * M_PI * j / s.nodes;
      Eigen::VectorXd p(2);
      p << s.center[0] + s.radius * std::cos(ang), s.center[1] + s.radius * std::sin(ang);
      append_atom(dirs, logw, p, w);
    }
  }
}

LinearTerms build_terms(const MemorySpec& spec) {
  spec.validate();
  int dim = spec.dim();
  std::vector<Eigen::VectorXd> dirs;
  std::vector<double> logw;
  switch (spec.kind) {
    case MemorySpec::Kind::points:
      for (int n = 0; n < spec.points.count; ++n) append_atom(dirs, logw, spec.points.data.col(n), 1.0);
      break;
    case MemorySpec::Kind::extended:
      for (const Subspace& s : spec.subspaces) append_subspace(dirs, logw, s, dim);
      break;
    case MemorySpec::Kind::semantic: {
      double total = spec.cloud.weights.sum();
      for (int i = 0; i < spec.cloud.points.cols(); ++i)
        append_atom(dirs, logw, spec.cloud.points.col(i), spec.cloud.weights[i] / total);
      break;
    }
    case MemorySpec::Kind::mixture: {
      for (const MixtureCore& c : spec.cores) append_atom(dirs, logw, c.projection.transpose() * c.core, 1.0);
      if (spec.cloud.points.cols() > 0) {
        double total = spec.cloud.weights.sum();
        for (int i = 0; i < spec.cloud.points.cols(); ++i)
          append_atom(dirs, logw, spec.cloud.points.col(i), spec.cloud.weights[i] / total);
      }
      break;
    }
  }
  if (dirs.empty()) throw ParameterError("MemorySpec: no effective terms");
  LinearTerms t;
  t.dirs.resize(dim, static_cast<int>(dirs.size()));
  t.logw.resize(static_cast<int>(dirs.size()));
  for (size_t k = 0; k < dirs.size(); ++k) {
    t.dirs.col(static_cast<int>(k)) = dirs[k];
    t.logw[static_cast<int>(k)] = logw[k];
  }
  return t;
}

double terms_logsumexp(const LinearTerms& t, const Eigen::VectorXd& x, double beta,
                       Eigen::VectorXd* softmax_out = nullptr) {
  Eigen::VectorXd e = beta * (t.dirs.transpose() * x) + t.logw;
  double m = e.maxCoeff();
  Eigen::VectorXd w = (e.array() - m).exp();
  double s = w.sum();
  if (softmax_out) *softmax_out = w / s;
  return m + std::log(s);
}

void check_beta(double beta, const char* who) {
  if (!(beta > 0.0)) throw ParameterError(std::string(who) + ": beta must be positive");
}

void check_ve(const NoiseSchedule& s, double t, const char* who) {
  if (s.kind != NoiseSchedule::Kind::variance_exploding)
    throw ParameterError(std::string(who) + ": variance-exploding schedule required");
  if (!s.strictly_inside(t)) throw ParameterError(std::string(who) + ": zero variance at t");
}

}  // namespace

MemorySpec MemorySpec::make_points(PatternSet ps) {
  MemorySpec s;
  s.kind = Kind::points;
  s.points = std::move(ps);
  s.validate();
  return s;
}

MemorySpec MemorySpec::make_extended(int dim, std::vector<Subspace> subspaces) {
  MemorySpec s;
  s.kind = Kind::extended;
  s.points.dim = dim;  // carries the ambient dimension
  s.points.count = 1;
  s.points.data = Eigen::MatrixXd::Zero(dim, 1);
  s.points.kind = PatternKind::continuous;
  s.subspaces = std::move(subspaces);
  s.validate();
  return s;
}

MemorySpec MemorySpec::make_semantic(SemanticCloud cloud) {
  MemorySpec s;
  s.kind = Kind::semantic;
  int dim = static_cast<int>(cloud.points.rows());
  s.points.dim = dim;
  s.points.count = 1;
  s.points.data = Eigen::MatrixXd::Zero(dim, 1);
  s.points.kind = PatternKind::continuous;
  s.cloud = std::move(cloud);
  s.validate();
  return s;
}

MemorySpec MemorySpec::make_mixture(std::vector<MixtureCore> cores, SemanticCloud cloud) {
  MemorySpec s;
  s.kind = Kind::mixture;
  int dim = cores.empty() ? static_cast<int>(cloud.points.rows())
                          : static_cast<int>(cores.front().projection.cols());
  s.points.dim = dim;
  s.points.count = 1;
  s.points.data = Eigen::MatrixXd::Zero(dim, 1);
  s.points.kind = PatternKind::continuous;
  s.cores = std::move(cores);
  s.cloud = std::move(cloud);
  s.validate();
  return s;
}

int MemorySpec::dim() const { return points.dim; }

void MemorySpec::validate() const {
  int d = dim();
  if (d < 1) throw ParameterError("MemorySpec: dimension must be >= 1");
  switch (kind) {
    case Kind::points:
      points.validate();
      break;
    case Kind::extended:
      if (subspaces.empty()) throw ParameterError("MemorySpec: extended spec needs subspaces");
      break;
    case Kind::semantic:
    case Kind::mixture:
      if (kind == Kind::semantic || spec_has_cloud()) {
        if (cloud.points.cols() == 0 && kind == Kind::semantic)
          throw ParameterError("MemorySpec: empty semantic cloud");
        if (cloud.points.cols() > 0) {
          if (cloud.weights.size() != cloud.points.cols())
            throw ParameterError("MemorySpec: cloud weight count mismatch");
          if (cloud.points.rows() != d) throw ParameterError("MemorySpec: cloud dimension mismatch");
          if ((cloud.weights.array() < 0.0).any())
            throw ParameterError("MemorySpec: cloud weights must be nonnegative");
          if (!(cloud.weights.sum() > 0.0)) throw ParameterError("MemorySpec: cloud weights sum to zero");
        }
      }
      for (const MixtureCore& c : cores) {
        if (c.projection.cols() != d) throw ParameterError("MemorySpec: core projection dimension mismatch");
        if (c.projection.rows() != c.core.size())
          throw ParameterError("MemorySpec: core shape mismatch between projection and pattern");
        if (c.projection.rows() >= d)
          throw ParameterError("MemorySpec: core must encode into fewer than dim dimensions");
      }
      if (kind == Kind::mixture && cores.empty() && cloud.points.cols() == 0)
        throw ParameterError("MemorySpec: mixture needs cores or a cloud");
      break;
  }
}

bool MemorySpec::spec_has_cloud() const { return cloud.points.cols() > 0; }

double u_dm(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
            const NoiseSchedule& ve_schedule) {
  check_ve(ve_schedule, t, "u_dm");
  patterns.validate();
  if (x.size() != patterns.dim) throw ParameterError("u_dm: dimension mismatch");
  double s2 = ve_schedule.sigma * ve_schedule.sigma;
  double var = ve_schedule.var_of(t);
  Eigen::VectorXd e(patterns.count);
  for (int n = 0; n < patterns.count; ++n)
    e[n] = -(x - patterns.data.col(n)).squaredNorm() / (2.0 * var);
  double m = e.maxCoeff();
  double lse = m + std::log((e.array() - m).exp().sum());
  return -s2 * (lse - std::log(static_cast<double>(patterns.count)));
}

Eigen::VectorXd u_dm_gradient(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
                              const NoiseSchedule& ve_schedule) {
  check_ve(ve_schedule, t, "u_dm_gradient");
  double s2 = ve_schedule.sigma * ve_schedule.sigma;
  return -s2 * exact_score(patterns, x, t, ve_schedule);
}

ResidualStats equivalence_residual(const PatternSet& normalized_patterns,
                                   std::span<const Eigen::VectorXd> xs, double t,
                                   const NoiseSchedule& ve_schedule) {
  check_ve(ve_schedule, t, "equivalence_residual");
  normalized_patterns.validate();
  for (int n = 0; n < normalized_patterns.count; ++n) {
    if (std::abs(normalized_patterns.data.col(n).norm() - 1.0) > 1e-9)
      throw ParameterError("equivalence_residual: patterns must be unit-norm");
  }
  if (xs.empty()) throw ParameterError("equivalence_residual: no probe points");
  double beta = ve_schedule.beta_of(t);
  double s2 = ve_schedule.sigma * ve_schedule.sigma;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double sum = 0.0;
  for (const Eigen::VectorXd& x : xs) {
    double r = u_dm(normalized_patterns, x, t, ve_schedule) / (beta * s2) -
               modern_energy(normalized_patterns, x, beta);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    sum += r;
  }
  return ResidualStats{hi - lo, sum / static_cast<double>(xs.size())};
}

double raw_memory_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta) {
  check_beta(beta, "raw_memory_energy");
  if (x.size() != spec.dim()) throw ParameterError("raw_memory_energy: dimension mismatch");
  LinearTerms t = build_terms(spec);
  return terms_logsumexp(t, x, beta);
}

Eigen::VectorXd raw_memory_gradient(const MemorySpec& spec, const Eigen::VectorXd& x, double beta) {
  check_beta(beta, "raw_memory_gradient");
  if (x.size() != spec.dim()) throw ParameterError("raw_memory_gradient: dimension mismatch");
  LinearTerms t = build_terms(spec);
  Eigen::VectorXd p;
  terms_logsumexp(t, x, beta, &p);
  return beta * (t.dirs * p);
}

double extended_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta) {
  if (spec.kind != MemorySpec::Kind::extended) throw ParameterError("extended_energy: wrong spec kind");
  return raw_memory_energy(spec, x, beta);
}

double semantic_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta) {
  if (spec.kind != MemorySpec::Kind::semantic) throw ParameterError("semantic_energy: wrong spec kind");
  return raw_memory_energy(spec, x, beta);
}

double mixture_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta) {
  if (spec.kind != MemorySpec::Kind::mixture) throw ParameterError("mixture_energy: wrong spec kind");
  return raw_memory_energy(spec, x, beta);
}

double memory_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta) {
  return -raw_memory_energy(spec, x, beta) / beta + 0.5 * x.squaredNorm();
}

Eigen::VectorXd memory_energy_gradient(const MemorySpec& spec, const Eigen::VectorXd& x, double beta) {
  return x - raw_memory_gradient(spec, x, beta) / beta;
}

double EnergyGrid::x_at(int ix) const {
  return bounds.xmin + (bounds.xmax - bounds.xmin) * ix / (nx - 1);
}

double EnergyGrid::y_at(int iy) const {
  return bounds.ymin + (bounds.ymax - bounds.ymin) * iy / (ny - 1);
}

void EnergyGrid::validate() const {
  if (nx < 2 || ny < 2) throw ParameterError("EnergyGrid: resolution must be at least 2x2");
  if (values.rows() != ny || values.cols() != nx) throw ParameterError("EnergyGrid: values shape mismatch");
  if (grad_x.rows() != ny || grad_x.cols() != nx || grad_y.rows() != ny || grad_y.cols() != nx)
    throw ParameterError("EnergyGrid: gradient shape mismatch");
  if (!values.allFinite() || !grad_x.allFinite() || !grad_y.allFinite())
    throw NumericError("EnergyGrid: non-finite entries");
}

EnergyGrid emit_grid(const EnergyFn& energy, const GradientFn* gradient, GridBounds bounds,
                     int nx, int ny, double beta, const std::string& kind, int workers) {
  if (nx < 2 || ny < 2) throw ParameterError("emit_grid: resolution must be at least 2x2");
  if (!(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin))
    throw ParameterError("emit_grid: empty bounds");
  EnergyGrid g;
  g.bounds = bounds;
  g.nx = nx;
  g.ny = ny;
  g.beta = beta;
  g.kind = kind;
  g.values.resize(ny, nx);
  g.grad_x.resize(ny, nx);
  g.grad_y.resize(ny, nx);

  auto eval_row = [&](int iy) {
    Eigen::VectorXd p(2);
    for (int ix = 0; ix < nx; ++ix) {
      p << g.x_at(ix), g.y_at(iy);
      double v = energy(p);
      if (!std::isfinite(v))
        throw NumericError("emit_grid: non-finite energy at (" + io::fmt(p[0]) + ", " + io::fmt(p[1]) + ")");
      g.values(iy, ix) = v;
      if (gradient) {
        Eigen::VectorXd gr = (*gradient)(p);
        g.grad_x(iy, ix) = gr[0];
        g.grad_y(iy, ix) = gr[1];
      }
    }
  };

  int nworkers = std::max(1, std::min(workers, ny));
  if (nworkers == 1) {
    for (int iy = 0; iy < ny; ++iy) eval_row(iy);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nworkers);
    for (int w = 0; w < nworkers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int iy = w; iy < ny; iy += nworkers) eval_row(iy);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  if (!gradient) {
    // Central differences of the value grid at the grid spacing, one-sided
    // at the edges.
    double hx = (bounds.xmax - bounds.xmin) / (nx - 1);
    double hy = (bounds.ymax - bounds.ymin) / (ny - 1);
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        int xl = std::max(0, ix - 1), xr = std::min(nx - 1, ix + 1);
        int yl = std::max(0, iy - 1), yr = std::min(ny - 1, iy + 1);
        g.grad_x(iy, ix) = (g.values(iy, xr) - g.values(iy, xl)) / ((xr - xl) * hx);
        g.grad_y(iy, ix) = (g.values(yr, ix) - g.values(yl, ix)) / ((yr - yl) * hy);
      }
    }
  }
  g.validate();
  return g;
}

EnergyGrid emit_memory_grid(const MemorySpec& spec, GridBounds bounds, int nx, int ny,
                            double beta, int workers) {
  if (spec.dim() != 2) throw ParameterError("emit_memory_grid: 2-D specs only");
  EnergyFn e = [&spec, beta](const Eigen::VectorXd& x) { return memory_energy(spec, x, beta); };
  GradientFn gr = [&spec, beta](const Eigen::VectorXd& x) { return memory_energy_gradient(spec, x, beta); };
  const char* kind = "points";
  switch (spec.kind) {
    case MemorySpec::Kind::points: kind = "points"; break;
    case MemorySpec::Kind::extended: kind = "extended"; break;
    case MemorySpec::Kind::semantic: kind = "semantic"; break;
    case MemorySpec::Kind::mixture: kind = "mixture"; break;
  }
  return emit_grid(e, &gr, bounds, nx, ny, beta, kind, workers);
}

void save_grid_csv(const EnergyGrid& grid, const std::string& csv_path,
                   const std::string& json_path) {
  grid.validate();
  std::string out = io::join_csv({"x", "y", "u", "du_dx", "du_dy"});
  for (int iy = 0; iy < grid.ny; ++iy) {
    for (int ix = 0; ix < grid.nx; ++ix) {
      out += io::join_csv({io::fmt(grid.x_at(ix)), io::fmt(grid.y_at(iy)), io::fmt(grid.values(iy, ix)),
                           io::fmt(grid.grad_x(iy, ix)), io::fmt(grid.grad_y(iy, ix))});
    }
  }
  io::write_text(csv_path, out);
  nlohmann::json j;
  j["bounds"] = {{"xmin", grid.bounds.xmin}, {"xmax", grid.bounds.xmax}, {"ymin", grid.bounds.ymin}, {"ymax", grid.bounds.ymax}};
  j["nx"] = grid.nx;
  j["ny"] = grid.ny;
  j["beta"] = grid.beta;
  j["kind"] = grid.kind;
  io::write_json(json_path, j);
}

}  // namespace memdiff
