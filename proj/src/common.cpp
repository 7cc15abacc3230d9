#include "dmve/common.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <system_error>

namespace dmve {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt));
}

uint64_t tag_salt(const std::string& tag) {
  // FNV-1a
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

double Rng::uniform() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
  // modulo bias is negligible for the small n used here, but stay exact
  const uint64_t bound = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t v = gen_();
  while (v >= limit) v = gen_();
  return static_cast<int>(v % bound);
}

double Rng::normal() {
  // Box-Muller, one variate per pair of uniforms. u1 is kept away from zero.
  const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Vector Rng::normal_vector(int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Matrix Rng::normal_matrix(int rows, int cols) {
  Matrix m(rows, cols);
  // row-major fill order, independent of Eigen's storage order
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = normal();
  return m;
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  double out = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto res = std::from_chars(begin, end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw std::invalid_argument("not a number: '" + text + "'");
  }
  return out;
}

}  // namespace dmve
