#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

namespace dmve {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Derives an independent seed from a base seed and a salt (splitmix64).
uint64_t mix_seed(uint64_t seed, uint64_t salt);

/// Salt from a short tag string, for naming RNG substreams.
uint64_t tag_salt(const std::string& tag);

/// Deterministic random stream: mt19937_64 plus an explicit Box-Muller
/// transform, so normal draws do not depend on the standard library's
/// distribution implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Uniform integer in [0, n).
  int uniform_int(int n);

  /// Standard normal draw.
  double normal();

  Vector normal_vector(int n);
  Matrix normal_matrix(int rows, int cols);

 private:
  std::mt19937_64 gen_;
};

/// Shortest round-trip decimal rendering of a double, locale independent.
/// Used everywhere a number is written to a file so reruns are byte-identical.
std::string format_double(double value);

/// Parses a double; throws std::invalid_argument on garbage.
double parse_double(const std::string& text);

}  // namespace dmve
