#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "memdiff/patterns.hpp"

namespace memdiff {

// Symmetric synaptic couplings with a null diagonal.
struct CouplingMatrix {
  int dim = 0;
  Eigen::MatrixXd weights;  // dim x dim

  void validate() const;
};

enum class UpdateMode { synchronous, asynchronous };

struct ModernHopfieldConfig {
  double beta = 5.0;
  int max_iters = 150;
  double convergence_tol = 1e-6;  // L-inf change per iteration
};

// Separation function F and outer map h for the generalized energy
// h(sum_n F(x . y_n)).
struct SeparationSpec {
  enum class F { square, exponential, power };
  enum class H { identity, log, scaled };
  F f = F::square;
  H h = H::identity;
  int power_exponent = 2;  // for F::power, >= 2
  double scale = 1.0;      // for H::scaled, > 0
};

// Hebbian couplings W_jk = sum_n y_nj y_nk with the diagonal zeroed.
CouplingMatrix hebbian_weights(const PatternSet& patterns);

// One update of the sign dynamics. Synchronous applies sign(W x) to all
// components at once (can 2-cycle); asynchronous performs one full sweep of
// single-component updates in a seeded random order.
Eigen::VectorXd classical_update(const CouplingMatrix& w, const Eigen::VectorXd& x,
                                 UpdateMode mode, uint64_t seed = 0);

// -x' W x. The sign is chosen so the value is non-increasing under
// asynchronous sign updates, which is the testable descent statement.
double classical_energy(const CouplingMatrix& w, const Eigen::VectorXd& x);

struct ClassicalRecallResult {
  Eigen::VectorXd state;
  bool converged = false;
  int sweeps = 0;
};

// Asynchronous sweeps until a full sweep changes nothing or max_sweeps is
// reached. x0 may be real-valued (e.g. zero-masked); the first sweep maps
// every component through sign().
ClassicalRecallResult classical_recall(const CouplingMatrix& w, const Eigen::VectorXd& x0,
                                       int max_sweeps, uint64_t seed);

// -beta^-1 log sum_n exp(beta x . y_n) + |x|^2 / 2, max-shifted log-sum-exp.
double modern_energy(const PatternSet& patterns, const Eigen::VectorXd& x, double beta);

// h(sum_n F(x . y_n)) for the configured tags. Throws NumericError when the
// exponential separation overflows without a log outer map.
double modern_energy_general(const PatternSet& patterns, const Eigen::VectorXd& x,
                             const SeparationSpec& spec);

// softmax(beta Y' x), the convex weights of the modern update.
Eigen::VectorXd modern_softmax_weights(const PatternSet& patterns, const Eigen::VectorXd& x,
                                       double beta);

// One iteration x <- Y softmax(beta Y' x).
Eigen::VectorXd modern_update(const PatternSet& patterns, const Eigen::VectorXd& x, double beta);

// Iterates modern_update until the L-inf change drops below tol or max_iters
// is reached.
Eigen::VectorXd modern_recall(const PatternSet& patterns, const Eigen::VectorXd& x0,
                              const ModernHopfieldConfig& cfg);

// Full iterate sequence [x0, x1, ...] of modern_recall, without early stop.
std::vector<Eigen::VectorXd> modern_iterates(const PatternSet& patterns, const Eigen::VectorXd& x0,
                                             double beta, int iters);

}  // namespace memdiff
