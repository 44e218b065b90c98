#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "memdiff/diffusion.hpp"
#include "memdiff/patterns.hpp"

namespace memdiff {

// A one-dimensional piece of memory subspace, discretized for quadrature.
struct Subspace {
  enum class Kind { segment, circle };
  Kind kind = Kind::segment;
  Eigen::VectorXd a, b;      // segment endpoints
  Eigen::VectorXd center;    // circle (2-D only)
  double radius = 1.0;
  int nodes = 64;            // quadrature node count, >= 2
};

struct SemanticCloud {
  Eigen::MatrixXd points;   // dim x atoms
  Eigen::VectorXd weights;  // nonnegative, renormalized to sum 1
};

// Low-dimensional core: a linear encoder P (rows < dim) with a stored
// pattern xi in the encoded space.
struct MixtureCore {
  Eigen::MatrixXd projection;  // W x D, W < D
  Eigen::VectorXd core;        // W
};

struct MemorySpec {
  enum class Kind { points, extended, semantic, mixture };
  Kind kind = Kind::points;
  PatternSet points;
  std::vector<Subspace> subspaces;
  SemanticCloud cloud;
  std::vector<MixtureCore> cores;

  static MemorySpec make_points(PatternSet ps);
  static MemorySpec make_extended(int dim, std::vector<Subspace> subspaces);
  static MemorySpec make_semantic(SemanticCloud cloud);
  static MemorySpec make_mixture(std::vector<MixtureCore> cores, SemanticCloud cloud);
  int dim() const;
  bool spec_has_cloud() const;
  void validate() const;
};

// Diffusion energy of a variance-exploding model over stored patterns:
// -sigma^2 log( (1/N) sum_n exp(-|x - y_n|^2 / (2 (T - t) sigma^2)) ).
double u_dm(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
            const NoiseSchedule& ve_schedule);
Eigen::VectorXd u_dm_gradient(const PatternSet& patterns, const Eigen::VectorXd& x, double t,
                              const NoiseSchedule& ve_schedule);

struct ResidualStats {
  double spread = 0.0;  // max - min of the residual over the probe points
  double offset = 0.0;  // mean residual
};

// Residual r(x) = beta(t)^-1 u_dm(x,t) / sigma^2 - modern_energy(x, beta(t))
// evaluated over probe points; for unit-norm patterns it is constant in x,
// so the spread is the numerical witness of the energy identity.
ResidualStats equivalence_residual(const PatternSet& normalized_patterns,
                                   std::span<const Eigen::VectorXd> xs, double t,
                                   const NoiseSchedule& ve_schedule);

// Raw log-sum energies for the memory taxonomy (maximized toward memories).
// Subspace integrals use fixed trapezoid quadrature along the parametrization.
double extended_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta);
double semantic_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta);
double mixture_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta);
double raw_memory_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta);
Eigen::VectorXd raw_memory_gradient(const MemorySpec& spec, const Eigen::VectorXd& x, double beta);

// Landscape form with minima at the memories:
// -beta^-1 * raw + |x|^2 / 2. For a points spec this equals modern_energy.
double memory_energy(const MemorySpec& spec, const Eigen::VectorXd& x, double beta);
Eigen::VectorXd memory_energy_gradient(const MemorySpec& spec, const Eigen::VectorXd& x, double beta);

struct GridBounds {
  double xmin = -2.0, xmax = 2.0, ymin = -2.0, ymax = 2.0;
};

struct EnergyGrid {
  GridBounds bounds;
  int nx = 0, ny = 0;
  Eigen::MatrixXd values;  // (ny, nx), row iy is constant y
  Eigen::MatrixXd grad_x, grad_y;
  double beta = 1.0;
  std::string kind;

  double x_at(int ix) const;
  double y_at(int iy) const;
  void validate() const;
};

using EnergyFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Evaluates the energy over a 2-D grid. When no analytic gradient is given,
// the gradient field is filled with central differences of the value grid at
// the grid spacing. Throws NumericError with the offending coordinates when
// a value is non-finite. Rows may be evaluated in parallel; assembly is
// deterministic.
EnergyGrid emit_grid(const EnergyFn& energy, const GradientFn* gradient, GridBounds bounds,
                     int nx, int ny, double beta, const std::string& kind, int workers = 1);

// emit_grid over memory_energy with its analytic gradient.
EnergyGrid emit_memory_grid(const MemorySpec& spec, GridBounds bounds, int nx, int ny,
                            double beta, int workers = 1);

// CSV rows x,y,u,du_dx,du_dy plus a JSON header (bounds, resolution, beta, kind).
void save_grid_csv(const EnergyGrid& grid, const std::string& csv_path,
                   const std::string& json_path);

}  // namespace memdiff
