#include "xrisk/surrogate.hpp"

#include <cmath>
#include <stdexcept>

namespace xrisk {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void Surrogate::validate() const {
  if (kind == SurrogateKind::Indicator) return;
  if (param <= 0.0)
    throw std::invalid_argument("surrogate parameter must be positive");
}

LossEval pair_loss(const Surrogate& s, double z) {
  switch (s.kind) {
    case SurrogateKind::SquaredHinge: {
      const double a = z + s.param;
      if (a <= 0.0) return {0.0, 0.0};
      return {a * a, 2.0 * a};
    }
    case SurrogateKind::Logistic: {
      const LossEval sp = softplus_smooth(z, s.param);
      return sp;
    }
    case SurrogateKind::Sigmoid: {
      const double v = sigmoid(z / s.param);
      return {v, v * (1.0 - v) / s.param};
    }
    case SurrogateKind::Square: {
      const double a = z + s.param;
      return {a * a, 2.0 * a};
    }
    case SurrogateKind::Indicator:
      return {z >= 0.0 ? 1.0 : 0.0, 0.0};
  }
  throw std::invalid_argument("pair_loss: unknown surrogate kind");
}

LossEval gate(const Gate& g, double z) {
  const double v = sigmoid(z / g.tau);
  return {v, v * (1.0 - v) / g.tau};
}

LossEval softplus_smooth(double z, double tau1) {
  const double u = z / tau1;
  double value;
  if (u > 30.0)
    value = z + tau1 * std::exp(-u);
  else if (u < -30.0)
    value = tau1 * std::exp(u);
  else
    value = tau1 * std::log1p(std::exp(u));
  return {value, sigmoid(u)};
}

double conjugate(const Surrogate& s, double v) {
  if (s.kind != SurrogateKind::Square)
    throw std::invalid_argument("conjugate: only the square loss is supported");
  return v * v / 4.0;
}

const char* surrogate_kind_name(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::SquaredHinge: return "squared_hinge";
    case SurrogateKind::Logistic: return "logistic";
    case SurrogateKind::Sigmoid: return "sigmoid";
    case SurrogateKind::Square: return "square";
    case SurrogateKind::Indicator: return "indicator";
  }
  return "?";
}

SurrogateKind surrogate_kind_from_name(const std::string& name) {
  if (name == "squared_hinge") return SurrogateKind::SquaredHinge;
  if (name == "logistic") return SurrogateKind::Logistic;
  if (name == "sigmoid") return SurrogateKind::Sigmoid;
  if (name == "square") return SurrogateKind::Square;
  if (name == "indicator") return SurrogateKind::Indicator;
  throw std::invalid_argument("unknown surrogate kind: " + name);
}

}  // namespace xrisk
