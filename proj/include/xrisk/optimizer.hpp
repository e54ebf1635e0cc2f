#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "xrisk/metrics.hpp"
#include "xrisk/objective.hpp"
#include "xrisk/sampler.hpp"

namespace xrisk {

enum class UpdateStyle { Momentum, Adam };

enum class SolverFamily { Fcco, MinMax, Bilevel };

struct ScheduleConfig {
  double gamma0 = 0.1;      // inner function-value averaging
  double gamma1 = 0.1;      // 1 - beta1 when theorem-generated
  double beta1 = 0.9;       // gradient momentum
  double gamma_hess = 0.1;  // Hessian estimator averaging (bilevel)
  double eta = 0.01;        // primal step (compositional solver)
  double eta0 = 0.01;       // dual / lambda / per-block coordinate step
  double eta1 = 0.01;       // primal step (bilevel solver)
  UpdateStyle update_style = UpdateStyle::Momentum;
  double beta2 = 0.999;     // Adam second-moment decay
  double adam_eps = 1e-8;
  int b1 = 1;
  int b2 = 32;
  long iters = 1000;

  void validate() const;
};

struct ScheduleConstants {
  double c_gamma0 = 1.0;
  double c_gamma1 = 1.0;
  double c_eta = 1.0;
  double c_eta0 = 1.0;
  double c_eta1 = 1.0;
  double c_T = 1.0;
};

// Accuracy-targeted hyperparameters:
//   gamma0 = c * B2 eps^2, gamma1 = c * min(B1,B2) eps^2, beta1 = 1 - gamma1,
//   eta = c * min(gamma1, gamma0 B1 / m),
//   T = ceil(c * max(m/(B1 B2 eps^4), 1/(min(B1,B2) eps^4))),
// with the dual/lower steps per family: eta0 = c * B2 eps^2 (min-max) or
// c * B1 gamma0 / m (bilevel), eta1 = c * min(B1 gamma0 / m, gamma1).
// Everything is clamped into valid ranges.
ScheduleConfig theorem_schedule(double eps, int b1, int b2, int m,
                                const ScheduleConstants& constants = {},
                                SolverFamily family = SolverFamily::Fcco);

struct TraceRecord {
  long iteration = 0;
  double wall_seconds = 0.0;
  double objective_estimate = 0.0;
  double exact_objective = std::numeric_limits<double>::quiet_NaN();
  std::map<std::string, double> metric_values;
  double grad_norm = 0.0;
};

// ---------------------------------------------------------------------------
// States. Per-block estimators touch only sampled blocks; the first visit to
// a block seeds its estimator with the fresh batch value instead of decaying
// from zero.
// ---------------------------------------------------------------------------

struct SoxFccoState {
  ModelBundle bundle;
  std::vector<std::array<double, 2>> u;
  std::vector<char> u_init;
  Vec v;
  Vec adam_m2;
  long step_count = 0;
};

struct MinMaxState {
  ModelBundle bundle;
  Vec extras;  // a_1, b_1, ..., a_K, b_K
  Vec s;       // dual scalar per block
  Vec v;       // momentum over [w, extras]
  Vec adam_m2;
  long step_count = 0;
};

struct BilevelState {
  ModelBundle bundle;
  std::vector<std::array<double, 2>> u;
  std::vector<char> u_init;
  Vec lambda;               // per lower problem
  Vec s_hess;               // Hessian estimator per lower problem
  std::vector<char> s_init;
  Vec v;
  Vec adam_m2;
  long step_count = 0;
};

struct CvarState {
  ModelBundle bundle;
  Vec s;  // per-positive threshold
  Vec v;
  Vec adam_m2;
  long step_count = 0;
};

struct NaiveState {
  ModelBundle bundle;
  Vec v;
  Vec adam_m2;
  long step_count = 0;
};

SoxFccoState init_fcco_state(const FccoProblem& problem, ModelBundle bundle);
MinMaxState init_minmax_state(const MinMaxProblem& problem, ModelBundle bundle);
BilevelState init_bilevel_state(const BilevelProblem& problem, ModelBundle bundle);
CvarState init_cvar_state(const CvarProblem& problem, ModelBundle bundle);
NaiveState init_naive_state(const FccoProblem& problem, ModelBundle bundle);

struct StepResult {
  double objective_estimate = 0.0;
};

StepResult sox_fcco_step(SoxFccoState& state, const FccoProblem& problem,
                         TwoLevelSampler& sampler, const ScheduleConfig& cfg);
StepResult sox_mbmmo_step(MinMaxState& state, const MinMaxProblem& problem,
                          TwoLevelSampler& sampler, const ScheduleConfig& cfg);
StepResult sox_mbbo_step(BilevelState& state, const BilevelProblem& problem,
                         TwoLevelSampler& sampler, const ScheduleConfig& cfg);
StepResult cvar_subgrad_step(CvarState& state, const CvarProblem& problem,
                             TwoLevelSampler& sampler, const ScheduleConfig& cfg);
// Biased baseline: evaluates f at the mini-batch inner estimate directly.
StepResult naive_sgd_step(NaiveState& state, const FccoProblem& problem,
                          TwoLevelSampler& sampler, const ScheduleConfig& cfg);

// ---------------------------------------------------------------------------

enum class SolverAlg { Sox, NaiveSgd };

struct RunHooks {
  long log_every = 100;
  long eval_every = 0;  // 0 disables periodic exact evaluation
  std::function<metrics::MetricReport(const ModelBundle&)> metric_fn;
};

struct RunResult {
  ModelBundle bundle;
  std::vector<TraceRecord> trace;
  Vec minmax_extras;  // final (a, b) per task when applicable
};

RunResult run(const Problem& problem, ModelBundle bundle,
              const ScheduleConfig& cfg, std::uint64_t sampler_seed,
              SolverAlg alg, const RunHooks& hooks);

// Exact objective at the current parameters (dual/lower level solved
// exactly); extras are only consulted by the min-max family.
double exact_objective(const Problem& problem, const ModelBundle& bundle,
                       const Vec& minmax_extras);

}  // namespace xrisk
