#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xrisk {

using Vec = std::vector<double>;

// Raised when an optimizer state or oracle output goes non-finite.
// Training aborts with a diagnostic instead of silently corrupting state.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += a * x
inline void axpy(Vec& y, double a, std::span<const double> x) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scale(Vec& y, double a) {
  for (double& v : y) v *= a;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

// Worker cap for intra-step block evaluation, from XRISK_THREADS (default 1).
int worker_count();

// Evaluates fn(0..n-1), possibly on several workers. Each index writes its
// own result slot; the caller reduces in index order so results do not
// depend on the worker count.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace xrisk
