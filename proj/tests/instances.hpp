// Shared random problem instances for gradient-consistency checks.
#pragma once

#include <string>
#include <variant>

#include "oracles.hpp"
#include "xrisk/objective.hpp"

namespace instances {

using namespace xrisk;

inline ScoreModelSpec linear_spec(int d, int out = 1, bool norm = false) {
  ScoreModelSpec s;
  s.kind = ModelKind::Linear;
  s.input_dim = d;
  s.output_dim = out;
  s.normalize_output = norm;
  return s;
}

inline ScoreModelSpec mlp_spec(int d, int hidden, int out = 1, bool norm = false) {
  ScoreModelSpec s;
  s.kind = ModelKind::Mlp;
  s.input_dim = d;
  s.hidden_dims = {hidden};
  s.output_dim = out;
  s.normalize_output = norm;
  return s;
}

struct Instance {
  ObjectiveSpec spec;
  Dataset data;
  ModelBundle bundle;
  std::vector<ScoreModelSpec> model_specs;
};

// Small random instance per kind; mild smoothing keeps finite differences
// well conditioned and the sigmoids away from saturation.
inline Instance make_instance(ObjectiveKind kind, std::uint64_t seed, bool use_mlp) {
  Instance inst;
  inst.spec.kind = kind;
  inst.spec.tau1 = 0.1;
  inst.spec.tau2 = 0.1;
  inst.spec.gate_tau = 0.2;
  inst.spec.tau = 0.7;
  inst.spec.eps_gcl = 0.05;
  inst.spec.p = 2.5;
  inst.spec.k = 2;
  const int d = 4;
  const bool contrastive =
      kind == ObjectiveKind::GclOneWay || kind == ObjectiveKind::GclTwoWay ||
      kind == ObjectiveKind::SupconRatio || kind == ObjectiveKind::SupconLogRatio ||
      kind == ObjectiveKind::SupconPerPair;
  const bool ranking = kind == ObjectiveKind::Map || kind == ObjectiveKind::Ndcg ||
                       kind == ObjectiveKind::Listnet ||
                       kind == ObjectiveKind::TopkNdcg ||
                       kind == ObjectiveKind::TopkMap;
  switch (kind) {
    case ObjectiveKind::RecallKFcco:
      // mid-range K and mild temperatures: a saturated rank sigmoid has an
      // underflowing gradient and relative FD error loses meaning
      inst.spec.surrogate = {SurrogateKind::Sigmoid, 0.5};
      inst.spec.surrogate_outer = {SurrogateKind::Sigmoid, 0.5};
      inst.spec.surrogate_set = true;
      inst.spec.k = 5;
      break;
    case ObjectiveKind::PaucBilevelOneWay:
      inst.spec.alpha = 0.1;
      inst.spec.beta = 0.7;
      break;
    case ObjectiveKind::PaucBilevelTwoWay:
      inst.spec.alpha = 0.6;
      inst.spec.beta = 0.6;
      break;
    case ObjectiveKind::PaucCvarOneWay:
      inst.spec.beta = 0.55;
      break;
    case ObjectiveKind::AurocMinMax:
      inst.spec.tasks = 2;
      break;
    default:
      break;
  }
  if (ranking)
    inst.data = gen_ranking(3, 6, 3, 1.0, d, seed);
  else if (contrastive) {
    AugmentationSpec aug;
    aug.seed = seed + 11;
    aug.ops = {{AugmentKind::GaussNoise, 0.15, 0.0}};
    inst.data = gen_pool(6, d, 2, 1.0, seed, aug);
  } else {
    inst.data = gen_binary(4, 7, d, 0.8, seed);
  }
  const int n_models = required_models(kind);
  for (int i = 0; i < n_models; ++i) {
    ScoreModelSpec ms;
    if (contrastive)
      ms = use_mlp ? mlp_spec(d, 5, 3, true) : linear_spec(d, 3, true);
    else
      ms = use_mlp ? mlp_spec(d, 5) : linear_spec(d);
    inst.model_specs.push_back(ms);
    inst.bundle.models.push_back(
        oracles::random_model(ms, seed + 100 * static_cast<std::uint64_t>(i + 1)));
  }
  return inst;
}

inline const std::vector<ObjectiveKind>& all_kinds() {
  static const std::vector<ObjectiveKind> kinds = {
      ObjectiveKind::AurocPairwise, ObjectiveKind::Ap,
      ObjectiveKind::Map, ObjectiveKind::Ndcg,
      ObjectiveKind::Listnet, ObjectiveKind::PnormPush,
      ObjectiveKind::PaucKl, ObjectiveKind::RecallKFcco,
      ObjectiveKind::GclOneWay, ObjectiveKind::GclTwoWay,
      ObjectiveKind::SupconRatio, ObjectiveKind::SupconLogRatio,
      ObjectiveKind::SupconPerPair, ObjectiveKind::AurocMinMax,
      ObjectiveKind::PaucBilevelOneWay, ObjectiveKind::PaucBilevelTwoWay,
      ObjectiveKind::TopkNdcg, ObjectiveKind::TopkMap,
      ObjectiveKind::TopPush, ObjectiveKind::RecallKBilevel,
      ObjectiveKind::PrecAtRecall, ObjectiveKind::PapK,
      ObjectiveKind::PaucCvarOneWay,
  };
  return kinds;
}

// analytic-vs-finite-difference relative error; the bilevel kinds keep a
// larger step because each probe re-solves the lower level to 1e-12, the
// closed-form kinds use a smaller one so sharp-sigmoid truncation stays
// below tolerance
inline double gradient_gap(const Instance& inst) {
  const Problem problem = build_problem(inst.spec, inst.data, inst.model_specs);
  const double h = std::holds_alternative<BilevelProblem>(problem) ? 1e-5 : 1e-6;
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MinMaxProblem>) {
          Vec extras(static_cast<std::size_t>(2 * p.num_blocks()));
          Rng rng(99);
          for (auto& e : extras) e = 0.5 * (2.0 * rng.uniform() - 1.0);
          const Vec analytic = p.full_gradient(inst.bundle, extras);
          ModelBundle probe = inst.bundle;
          Vec joint = probe.flat_params();
          joint.insert(joint.end(), extras.begin(), extras.end());
          const int d = probe.dim();
          const Vec fd = oracles::fd_gradient(
              [&](const Vec& params) {
                probe.set_flat_params(std::span<const double>(params).subspan(
                    0, static_cast<std::size_t>(d)));
                const Vec ex(params.begin() + d, params.end());
                return p.eval_full(probe, ex);
              },
              joint, h);
          return oracles::rel_err(analytic, fd);
        } else {
          Vec analytic;
          if constexpr (std::is_same_v<T, BilevelProblem>)
            analytic = p.exact_hypergradient(inst.bundle);
          else
            analytic = p.full_gradient(inst.bundle);
          const Vec fd = oracles::fd_model_gradient(
              [&](const ModelBundle& b) { return p.eval_full(b); }, inst.bundle, h);
          return oracles::rel_err(analytic, fd);
        }
      },
      problem);
}

}  // namespace instances
