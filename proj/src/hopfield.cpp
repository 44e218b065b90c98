#include "memdiff/hopfield.hpp"

#include <cmath>
#include <limits>

#include "memdiff/rng.hpp"

namespace memdiff {

namespace {
double sign_pos(double v) { return v >= 0.0 ? 1.0 : -1.0; }

// Max-shifted log sum exp.
double logsumexp(const Eigen::VectorXd& terms) {
  double m = terms.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((terms.array() - m).exp().sum());
}
}  // namespace

void CouplingMatrix::validate() const {
  if (weights.rows() != dim || weights.cols() != dim) throw ParameterError("CouplingMatrix: shape mismatch");
  if (!weights.isApprox(weights.transpose())) throw ParameterError("CouplingMatrix: not symmetric");
  if (weights.diagonal().cwiseAbs().maxCoeff() != 0.0) throw ParameterError("CouplingMatrix: nonzero diagonal");
}

CouplingMatrix hebbian_weights(const PatternSet& patterns) {
  patterns.validate();
  if (patterns.kind != PatternKind::binary) throw ParameterError("hebbian_weights: binary pattern set required");
  Eigen::MatrixXd w = patterns.data * patterns.data.transpose();
  w.diagonal().setZero();
  return CouplingMatrix{patterns.dim, std::move(w)};
}

Eigen::VectorXd classical_update(const CouplingMatrix& w, const Eigen::VectorXd& x,
                                 UpdateMode mode, uint64_t seed) {
  if (x.size() != w.dim) throw ParameterError("classical_update: dimension mismatch");
  if (mode == UpdateMode::synchronous) {
    return (w.weights * x).unaryExpr([](double v) { return sign_pos(v); });
  }
  RngStream rng(seed);
  Eigen::VectorXd state = x;
  for (int j : rng.permutation(w.dim)) {
    state[j] = sign_pos(w.weights.row(j).dot(state));
  }
  return state;
}

double classical_energy(const CouplingMatrix& w, const Eigen::VectorXd& x) {
  if (x.size() != w.dim) throw ParameterError("classical_energy: dimension mismatch");
  return -x.dot(w.weights * x);
}

ClassicalRecallResult classical_recall(const CouplingMatrix& w, const Eigen::VectorXd& x0,
                                       int max_sweeps, uint64_t seed) {
  if (max_sweeps < 1) throw ParameterError("classical_recall: max_sweeps must be >= 1");
  if (x0.size() != w.dim) throw ParameterError("classical_recall: dimension mismatch");
  RngStream rng(seed);
  ClassicalRecallResult res;
  res.state = x0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool changed = false;
    for (int j : rng.permutation(w.dim)) {
      double s = sign_pos(w.weights.row(j).dot(res.state));
      if (s != res.state[j]) {
        res.state[j] = s;
        changed = true;
      }
    }
    res.sweeps = sweep + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
  }
  return res;
}

double modern_energy(const PatternSet& patterns, const Eigen::VectorXd& x, double beta) {
  if (!(beta > 0.0)) throw ParameterError("modern_energy: beta must be positive");
  if (x.size() != patterns.dim) throw ParameterError("modern_energy: dimension mismatch");
  Eigen::VectorXd overlaps = beta * (patterns.data.transpose() * x);
  return -logsumexp(overlaps) / beta + 0.5 * x.squaredNorm();
}

double modern_energy_general(const PatternSet& patterns, const Eigen::VectorXd& x,
                             const SeparationSpec& spec) {
  if (x.size() != patterns.dim) throw ParameterError("modern_energy_general: dimension mismatch");
  if (spec.f == SeparationSpec::F::power && spec.power_exponent < 2)
    throw ParameterError("modern_energy_general: power exponent must be >= 2");
  if (spec.h == SeparationSpec::H::scaled && !(spec.scale > 0.0))
    throw ParameterError("modern_energy_general: scale must be positive");

  Eigen::VectorXd overlaps = patterns.data.transpose() * x;

  // exp separation with a log outer map stays in log space.
  if (spec.f == SeparationSpec::F::exponential && spec.h == SeparationSpec::H::log) {
    return logsumexp(overlaps);
  }

  double sum = 0.0;
  for (int n = 0; n < patterns.count; ++n) {
    double t = overlaps[n];
    double v = 0.0;
    switch (spec.f) {
      case SeparationSpec::F::square:
        v = t * t;
        break;
      case SeparationSpec::F::exponential:
        v = std::exp(t);
        break;
      case SeparationSpec::F::power:
        v = std::pow(t, spec.power_exponent);
        break;
    }
    sum += v;
  }
  if (!std::isfinite(sum)) throw NumericError("modern_energy_general: separation overflow");

  switch (spec.h) {
    case SeparationSpec::H::identity:
      return sum;
    case SeparationSpec::H::log:
      return std::log(sum);
    case SeparationSpec::H::scaled:
      return spec.scale * sum;
  }
  return sum;
}

Eigen::VectorXd modern_softmax_weights(const PatternSet& patterns, const Eigen::VectorXd& x,
                                       double beta) {
  if (!(beta > 0.0)) throw ParameterError("modern_softmax_weights: beta must be positive");
  if (x.size() != patterns.dim) throw ParameterError("modern_softmax_weights: dimension mismatch");
  Eigen::VectorXd s = beta * (patterns.data.transpose() * x);
  double m = s.maxCoeff();
  Eigen::VectorXd w = (s.array() - m).exp();
  return w / w.sum();
}

Eigen::VectorXd modern_update(const PatternSet& patterns, const Eigen::VectorXd& x, double beta) {
  return patterns.data * modern_softmax_weights(patterns, x, beta);
}

Eigen::VectorXd modern_recall(const PatternSet& patterns, const Eigen::VectorXd& x0,
                              const ModernHopfieldConfig& cfg) {
  if (cfg.max_iters < 1) throw ParameterError("modern_recall: max_iters must be >= 1");
  Eigen::VectorXd x = x0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    Eigen::VectorXd next = modern_update(patterns, x, cfg.beta);
    double change = (next - x).lpNorm<Eigen::Infinity>();
    x = std::move(next);
    if (change < cfg.convergence_tol) break;
  }
  return x;
}

std::vector<Eigen::VectorXd> modern_iterates(const PatternSet& patterns, const Eigen::VectorXd& x0,
                                             double beta, int iters) {
  if (iters < 0) throw ParameterError("modern_iterates: iters must be >= 0");
  std::vector<Eigen::VectorXd> seq;
  seq.reserve(iters + 1);
  seq.push_back(x0);
  for (int it = 0; it < iters; ++it) seq.push_back(modern_update(patterns, seq.back(), beta));
  return seq;
}

}  // namespace memdiff
