#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xrisk/common.hpp"

namespace xrisk {

enum class Activation { Tanh, Softplus };

enum class ModelKind { Linear, Mlp };

// Differentiable scorer/embedder specification. Restricted to linear maps
// and MLPs with at most two smooth hidden layers so every gradient here is
// analytic and checkable against finite differences.
struct ScoreModelSpec {
  ModelKind kind = ModelKind::Linear;
  int input_dim = 0;
  std::vector<int> hidden_dims;  // mlp only
  Activation activation = Activation::Tanh;
  int output_dim = 1;
  bool normalize_output = false;

  int param_count() const;
  void validate() const;  // throws std::invalid_argument
};

struct ScoreModel {
  ScoreModelSpec spec;
  Vec params;
};

// Deterministic init: linear weights zero; mlp weights and biases uniform in
// [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer.
ScoreModel init_model(const ScoreModelSpec& spec, std::uint64_t seed);

// h_w(x); length output_dim, unit L2 norm when normalize_output is set
// (epsilon guard 1e-12 on the norm).
Vec score(const ScoreModel& model, std::span<const double> x);

double score_scalar(const ScoreModel& model, std::span<const double> x);

// upstream^T * d h_w(x) / d w, length param_count. With output_dim = 1 and
// upstream = [1] this is the score gradient.
Vec vjp(const ScoreModel& model, std::span<const double> x,
        std::span<const double> upstream);

// params' = params - step * direction
ScoreModel apply_update(const ScoreModel& model, const Vec& direction,
                        double step);

// Text checkpoint: one spec header line, then one parameter per line with 17
// significant digits (round-trips bit-exactly).
void save_model(const ScoreModel& model, const std::string& path);
ScoreModel load_model(const std::string& path);

// One or two models optimized jointly; parameters are addressed as one flat
// vector (two-encoder contrastive objectives use two slices).
struct ModelBundle {
  std::vector<ScoreModel> models;

  int dim() const {
    int d = 0;
    for (const auto& m : models) d += static_cast<int>(m.params.size());
    return d;
  }
  int slice_offset(int model_idx) const {
    int d = 0;
    for (int i = 0; i < model_idx; ++i)
      d += static_cast<int>(models[i].params.size());
    return d;
  }
  Vec flat_params() const;
  void set_flat_params(std::span<const double> flat);
  // params -= step * direction over the concatenated vector
  void update(std::span<const double> direction, double step);
};

}  // namespace xrisk
