#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "memdiff/common.hpp"

namespace memdiff {

enum class PatternKind { binary, continuous };

// Shared memory substrate: columns of `data` are the stored patterns.
struct PatternSet {
  int dim = 0;
  int count = 0;
  Eigen::MatrixXd data;  // dim x count
  PatternKind kind = PatternKind::binary;

  Eigen::VectorXd pattern(int n) const { return data.col(n); }
  void validate() const;

  static PatternSet binary(Eigen::MatrixXd m);
  static PatternSet continuous(Eigen::MatrixXd m);
};

struct CorruptionSpec {
  enum class Mode { gaussian_blend, bernoulli_mask };
  Mode mode = Mode::gaussian_blend;
  double theta = 0.68;   // blend weight for gaussian_blend
  double mask_p = 0.5;   // zeroing probability for bernoulli_mask
  uint64_t seed = 0;
};

struct MaskedVector {
  Eigen::VectorXd x;
  std::vector<uint8_t> mask;  // 1 where the component was zeroed
};

// ±1 patterns from the sign of standard Gaussian draws; sign(0) = +1.
PatternSet gen_binary_patterns(int dim, int count, uint64_t seed);

// Raw Gaussian columns (continuous kind), mostly useful as input to
// normalize_columns for the unit-norm pattern sets some energies expect.
PatternSet gen_gaussian_patterns(int dim, int count, uint64_t seed);
PatternSet normalize_columns(const PatternSet& ps);

// theta * y + sqrt(1 - theta^2) * delta with delta standard normal.
Eigen::VectorXd corrupt_gaussian(const Eigen::VectorXd& y, double theta, uint64_t seed);

// Zeroes each component independently with probability p.
MaskedVector mask_bernoulli(const Eigen::VectorXd& y, double p, uint64_t seed);

// Componentwise sign with sign(0) = +1.
Eigen::VectorXd binarize(const Eigen::VectorXd& x);

// Fraction of disagreeing components between two ±1 vectors.
double hamming_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Sample Pearson correlation. Throws DegenerateInputError on zero variance
// rather than silently returning 0.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// CSV persistence: one pattern per row, shape and kind in a sidecar JSON.
void save_pattern_set(const PatternSet& ps, const std::string& csv_path,
                      const std::string& json_path);
PatternSet load_pattern_set(const std::string& csv_path, const std::string& json_path);

}  // namespace memdiff
