#pragma once

#include <string>

namespace xrisk {

// Pairwise surrogate losses shared by every objective builder. All exp/log
// paths are computed in overflow-safe form; temperatures down to 1e-3 are in
// normal use.
enum class SurrogateKind {
  SquaredHinge,  // ((z + c)_+)^2
  Logistic,      // scale * ln(1 + e^{z/scale})
  Sigmoid,       // 1 / (1 + e^{-z/temperature})
  Square,        // (z + c)^2; the one non-monotone loss, kept for the
                 // bilevel route which does not need monotonicity
  Indicator,     // I(z >= 0), derivative 0; exact-metric limit for tests
};

struct Surrogate {
  SurrogateKind kind = SurrogateKind::SquaredHinge;
  double param = 1.0;  // margin c, scale, or temperature

  bool non_decreasing() const { return kind != SurrogateKind::Square; }
  void validate() const;
};

struct LossEval {
  double value = 0.0;
  double deriv = 0.0;
};

LossEval pair_loss(const Surrogate& kind, double z);

// Smooth monotone gate standing in for I(z > 0): sigmoid(z / tau).
struct Gate {
  double tau = 0.1;
};

LossEval gate(const Gate& g, double z);

// tau1 * ln(1 + e^{z/tau1}); uniform smoothing of (z)_+ within tau1*ln 2
LossEval softplus_smooth(double z, double tau1);

// Convex conjugate l*(s); only the square loss (l(z) = z^2, l*(s) = s^2/4)
// is needed by the min-max builder.
double conjugate(const Surrogate& kind, double s);

const char* surrogate_kind_name(SurrogateKind k);
SurrogateKind surrogate_kind_from_name(const std::string& name);

}  // namespace xrisk
