#include "memdiff/patterns.hpp"

#include <cmath>
#include <sstream>

#include "memdiff/io.hpp"
#include "memdiff/rng.hpp"

namespace memdiff {

namespace {
double sign_pos(double v) { return v >= 0.0 ? 1.0 : -1.0; }

void require_pm1(const Eigen::VectorXd& v, const char* who) {
  for (int i = 0; i < v.size(); ++i) {
    if (v[i] != 1.0 && v[i] != -1.0) throw ParameterError(std::string(who) + ": entries must be +-1");
  }
}
}  // namespace

void PatternSet::validate() const {
  if (dim < 1 || count < 1) throw ParameterError("PatternSet: dim and count must be >= 1");
  if (data.rows() != dim || data.cols() != count) throw ParameterError("PatternSet: data shape mismatch");
  if (kind == PatternKind::binary) {
    for (int n = 0; n < count; ++n) require_pm1(data.col(n), "PatternSet");
  }
}

PatternSet PatternSet::binary(Eigen::MatrixXd m) {
  PatternSet ps{static_cast<int>(m.rows()), static_cast<int>(m.cols()), std::move(m), PatternKind::binary};
  ps.validate();
  return ps;
}

PatternSet PatternSet::continuous(Eigen::MatrixXd m) {
  PatternSet ps{static_cast<int>(m.rows()), static_cast<int>(m.cols()), std::move(m), PatternKind::continuous};
  ps.validate();
  return ps;
}

PatternSet gen_binary_patterns(int dim, int count, uint64_t seed) {
  if (dim < 1 || count < 1) throw ParameterError("gen_binary_patterns: dim and count must be >= 1");
  RngStream rng(seed);
  Eigen::MatrixXd m(dim, count);
  for (int n = 0; n < count; ++n)
    for (int i = 0; i < dim; ++i) m(i, n) = sign_pos(rng.normal());
  return PatternSet{dim, count, std::move(m), PatternKind::binary};
}

PatternSet gen_gaussian_patterns(int dim, int count, uint64_t seed) {
  if (dim < 1 || count < 1) throw ParameterError("gen_gaussian_patterns: dim and count must be >= 1");
  RngStream rng(seed);
  Eigen::MatrixXd m(dim, count);
  for (int n = 0; n < count; ++n)
    for (int i = 0; i < dim; ++i) m(i, n) = rng.normal();
  return PatternSet{dim, count, std::move(m), PatternKind::continuous};
}

PatternSet normalize_columns(const PatternSet& ps) {
  ps.validate();
  Eigen::MatrixXd m = ps.data;
  for (int n = 0; n < ps.count; ++n) {
    double norm = m.col(n).norm();
    if (norm == 0.0) throw DegenerateInputError("normalize_columns: zero column");
    m.col(n) /= norm;
  }
  return PatternSet{ps.dim, ps.count, std::move(m), PatternKind::continuous};
}

Eigen::VectorXd corrupt_gaussian(const Eigen::VectorXd& y, double theta, uint64_t seed) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ParameterError("corrupt_gaussian: theta must be in [0,1]");
  RngStream rng(seed);
  Eigen::VectorXd delta = rng.normal_vector(static_cast<int>(y.size()));
  return theta * y + std::sqrt(1.0 - theta * theta) * delta;
}

MaskedVector mask_bernoulli(const Eigen::VectorXd& y, double p, uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("mask_bernoulli: p must be in [0,1]");
  RngStream rng(seed);
  MaskedVector out;
  out.x = y;
  out.mask.assign(y.size(), 0);
  for (int i = 0; i < y.size(); ++i) {
    if (rng.uniform() < p) {
      out.x[i] = 0.0;
      out.mask[i] = 1;
    }
  }
  return out;
}

Eigen::VectorXd binarize(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return sign_pos(v); });
}

double hamming_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ParameterError("hamming_error: dimension mismatch");
  require_pm1(a, "hamming_error");
  require_pm1(b, "hamming_error");
  int disagree = 0;
  for (int i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) ++disagree;
  return static_cast<double>(disagree) / static_cast<double>(a.size());
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ParameterError("pearson: dimension mismatch");
  if (a.size() < 2) throw ParameterError("pearson: need at least 2 components");
  Eigen::VectorXd ac = a.array() - a.mean();
  Eigen::VectorXd bc = b.array() - b.mean();
  double sa = ac.squaredNorm();
  double sb = bc.squaredNorm();
  if (sa <= 0.0 || sb <= 0.0) throw DegenerateInputError("pearson: zero-variance input");
  return ac.dot(bc) / std::sqrt(sa * sb);
}

void save_pattern_set(const PatternSet& ps, const std::string& csv_path, const std::string& json_path) {
  ps.validate();
  std::string out;
  for (int n = 0; n < ps.count; ++n) {
    std::vector<std::string> row;
    row.reserve(ps.dim);
    for (int i = 0; i < ps.dim; ++i) row.push_back(io::fmt(ps.data(i, n)));
    out += io::join_csv(row);
  }
  io::write_text(csv_path, out);
  nlohmann::json j;
  j["dim"] = ps.dim;
  j["count"] = ps.count;
  j["kind"] = ps.kind == PatternKind::binary ? "binary" : "continuous";
  io::write_json(json_path, j);
}

PatternSet load_pattern_set(const std::string& csv_path, const std::string& json_path) {
  nlohmann::json j = io::read_json(json_path);
  int dim = j.at("dim").get<int>();
  int count = j.at("count").get<int>();
  PatternKind kind = j.at("kind").get<std::string>() == "binary" ? PatternKind::binary : PatternKind::continuous;
  Eigen::MatrixXd m(dim, count);
  std::istringstream in(io::read_text(csv_path));
  std::string line;
  int n = 0;
  while (std::getline(in, line) && n < count) {
    std::istringstream ls(line);
    std::string field;
    int i = 0;
    while (std::getline(ls, field, ',') && i < dim) m(i++, n) = std::stod(field);
    if (i != dim) throw ParameterError("load_pattern_set: short row");
    ++n;
  }
  if (n != count) throw ParameterError("load_pattern_set: row count mismatch");
  PatternSet ps{dim, count, std::move(m), kind};
  ps.validate();
  return ps;
}

}  // namespace memdiff
