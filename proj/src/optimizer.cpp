#include "xrisk/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xrisk {

void ScheduleConfig::validate() const {
  auto in01 = [](double x) { return x > 0.0 && x <= 1.0; };
  if (!in01(gamma0)) throw std::invalid_argument("optimizer.gamma0 must be in (0, 1]");
  if (!in01(gamma1)) throw std::invalid_argument("optimizer.gamma1 must be in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    throw std::invalid_argument("optimizer.beta1 must be in [0, 1)");
  if (!in01(gamma_hess)) throw std::invalid_argument("optimizer.gamma_hess must be in (0, 1]");
  if (!(eta >= 0.0) || !std::isfinite(eta))
    throw std::invalid_argument("optimizer.eta must be finite and >= 0");
  if (!(eta0 >= 0.0) || !std::isfinite(eta0))
    throw std::invalid_argument("optimizer.eta0 must be finite and >= 0");
  if (!(eta1 >= 0.0) || !std::isfinite(eta1))
    throw std::invalid_argument("optimizer.eta1 must be finite and >= 0");
  if (!(beta2 > 0.0 && beta2 <= 1.0))
    throw std::invalid_argument("optimizer.beta2 must be in (0, 1]");
  if (adam_eps <= 0.0) throw std::invalid_argument("optimizer.adam_eps must be positive");
  if (b1 < 1) throw std::invalid_argument("optimizer.B1 must be >= 1");
  if (b2 < 1) throw std::invalid_argument("optimizer.B2 must be >= 1");
  if (iters < 0) throw std::invalid_argument("optimizer.T must be >= 0");
}

ScheduleConfig theorem_schedule(double eps, int b1, int b2, int m,
                                const ScheduleConstants& c, SolverFamily family) {
  if (!(eps > 0.0 && eps < 1.0))
    throw std::invalid_argument("theorem_schedule: eps must be in (0, 1)");
  if (b1 < 1 || b2 < 1 || m < 1 || b1 > m)
    throw std::invalid_argument("theorem_schedule: need 1 <= B1 <= m and B2 >= 1");
  auto clamp01 = [](double x) { return std::clamp(x, 1e-12, 1.0); };
  const double e2 = eps * eps;
  ScheduleConfig cfg;
  cfg.b1 = b1;
  cfg.b2 = b2;
  cfg.gamma0 = clamp01(c.c_gamma0 * b2 * e2);
  cfg.gamma1 = clamp01(c.c_gamma1 * std::min(b1, b2) * e2);
  cfg.gamma_hess = cfg.gamma0;
  cfg.beta1 = 1.0 - cfg.gamma1;
  const double block_rate = cfg.gamma0 * b1 / static_cast<double>(m);
  cfg.eta = c.c_eta * std::min(cfg.gamma1, block_rate);
  cfg.eta0 = family == SolverFamily::Bilevel ? c.c_eta0 * block_rate
                                             : clamp01(c.c_eta0 * b2 * e2);
  cfg.eta1 = c.c_eta1 * std::min(block_rate, cfg.gamma1);
  const double t1 = static_cast<double>(m) / (static_cast<double>(b1) * b2 * e2 * e2);
  const double t2 = 1.0 / (std::min(b1, b2) * e2 * e2);
  cfg.iters = static_cast<long>(std::ceil(c.c_T * std::max(t1, t2)));
  return cfg;
}

namespace {

void check_finite(const Vec& v, const char* what, long step) {
  if (!all_finite(v))
    throw numerical_error(std::string("non-finite ") + what + " at step " +
                          std::to_string(step) + "; aborting");
}

// v <- beta1 v + (1 - beta1) m ; params update by momentum or Adam style
// (m2 <- beta2 m2 + (1-beta2) m^2 elementwise, step v / (sqrt(m2) + eps)).
void primal_update(Vec& v, Vec& adam_m2, std::span<const double> m,
                   const ScheduleConfig& cfg, double step,
                   const std::function<void(std::span<const double>, double)>& apply) {
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = cfg.beta1 * v[i] + (1.0 - cfg.beta1) * m[i];
  if (cfg.update_style == UpdateStyle::Momentum) {
    apply(v, step);
    return;
  }
  Vec dir(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    adam_m2[i] = cfg.beta2 * adam_m2[i] + (1.0 - cfg.beta2) * m[i] * m[i];
    dir[i] = v[i] / (std::sqrt(adam_m2[i]) + cfg.adam_eps);
  }
  apply(dir, step);
}

}  // namespace

SoxFccoState init_fcco_state(const FccoProblem& problem, ModelBundle bundle) {
  SoxFccoState st;
  st.v.assign(static_cast<std::size_t>(bundle.dim()), 0.0);
  st.adam_m2.assign(static_cast<std::size_t>(bundle.dim()), 0.0);
  st.u.assign(static_cast<std::size_t>(problem.num_blocks()), {0.0, 0.0});
  st.u_init.assign(static_cast<std::size_t>(problem.num_blocks()), 0);
  st.bundle = std::move(bundle);
  return st;
}

MinMaxState init_minmax_state(const MinMaxProblem& problem, ModelBundle bundle) {
  MinMaxState st;
  const int k = problem.num_blocks();
  st.extras.assign(static_cast<std::size_t>(2 * k), 0.0);
  st.s.assign(static_cast<std::size_t>(k), 0.0);
  st.v.assign(static_cast<std::size_t>(bundle.dim() + 2 * k), 0.0);
  st.adam_m2.assign(st.v.size(), 0.0);
  st.bundle = std::move(bundle);
  return st;
}

BilevelState init_bilevel_state(const BilevelProblem& problem, ModelBundle bundle) {
  BilevelState st;
  st.v.assign(static_cast<std::size_t>(bundle.dim()), 0.0);
  st.adam_m2.assign(st.v.size(), 0.0);
  st.u.assign(static_cast<std::size_t>(problem.num_blocks()), {0.0, 0.0});
  st.u_init.assign(static_cast<std::size_t>(problem.num_blocks()), 0);
  st.lambda.assign(static_cast<std::size_t>(problem.num_lower()), 0.0);
  st.s_hess.assign(static_cast<std::size_t>(problem.num_lower()), 0.0);
  st.s_init.assign(static_cast<std::size_t>(problem.num_lower()), 0);
  st.bundle = std::move(bundle);
  return st;
}

CvarState init_cvar_state(const CvarProblem& problem, ModelBundle bundle) {
  CvarState st;
  st.s.assign(static_cast<std::size_t>(problem.num_blocks()), 0.0);
  st.v.assign(static_cast<std::size_t>(bundle.dim()), 0.0);
  st.adam_m2.assign(st.v.size(), 0.0);
  st.bundle = std::move(bundle);
  return st;
}

NaiveState init_naive_state(const FccoProblem& problem, ModelBundle bundle) {
  (void)problem;
  NaiveState st;
  st.v.assign(static_cast<std::size_t>(bundle.dim()), 0.0);
  st.adam_m2.assign(st.v.size(), 0.0);
  st.bundle = std::move(bundle);
  return st;
}

StepResult sox_fcco_step(SoxFccoState& state, const FccoProblem& problem,
                         TwoLevelSampler& sampler, const ScheduleConfig& cfg) {
  const int d = state.bundle.dim();
  const auto blocks = sampler.draw_blocks(problem.num_blocks());
  const int n_draws = static_cast<int>(blocks.size());
  std::vector<std::vector<int>> batches(static_cast<std::size_t>(n_draws));
  for (int p = 0; p < n_draws; ++p)
    batches[static_cast<std::size_t>(p)] =
        sampler.draw_inner(problem.inner_set_size(blocks[static_cast<std::size_t>(p)]));

  std::vector<InnerEval> inner(static_cast<std::size_t>(n_draws));
  std::vector<DirectEval> direct(static_cast<std::size_t>(n_draws));
  const bool has_direct = problem.has_direct();
  parallel_for(n_draws, [&](int p) {
    inner[static_cast<std::size_t>(p)] = problem.inner_eval(
        state.bundle, blocks[static_cast<std::size_t>(p)], batches[static_cast<std::size_t>(p)]);
    if (has_direct)
      direct[static_cast<std::size_t>(p)] =
          problem.direct_eval(state.bundle, blocks[static_cast<std::size_t>(p)]);
  });

  Vec acc(static_cast<std::size_t>(d), 0.0);
  double estimate = 0.0;
  const double inv_b1 = 1.0 / static_cast<double>(n_draws);
  for (int p = 0; p < n_draws; ++p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    const InnerEval& ev = inner[static_cast<std::size_t>(p)];
    auto& u = state.u[static_cast<std::size_t>(i)];
    std::array<double, 2> u_pre;
    if (!state.u_init[static_cast<std::size_t>(i)]) {
      u = ev.g;  // first visit: seed with the fresh estimate
      u_pre = ev.g;
      state.u_init[static_cast<std::size_t>(i)] = 1;
    } else {
      u_pre = u;
      for (int c = 0; c < problem.inner_dim(); ++c)
        u[static_cast<std::size_t>(c)] = (1.0 - cfg.gamma0) * u[static_cast<std::size_t>(c)] +
                                         cfg.gamma0 * ev.g[static_cast<std::size_t>(c)];
    }
    const OuterEval f_pre = problem.outer_eval(i, u_pre);
    Vec contrib(static_cast<std::size_t>(d), 0.0);
    for (int c = 0; c < problem.inner_dim(); ++c)
      axpy(contrib, f_pre.df[static_cast<std::size_t>(c)], ev.grad[static_cast<std::size_t>(c)]);
    if (has_direct) axpy(contrib, 1.0, direct[static_cast<std::size_t>(p)].grad);
    axpy(acc, 1.0, contrib);
    estimate += inv_b1 * (problem.outer_eval(i, u).f +
                          (has_direct ? direct[static_cast<std::size_t>(p)].value : 0.0));
  }
  scale(acc, inv_b1);

  primal_update(state.v, state.adam_m2, acc, cfg, cfg.eta,
                [&](std::span<const double> dir, double step) {
                  state.bundle.update(dir, step);
                });
  ++state.step_count;
  check_finite(state.v, "gradient estimator", state.step_count);
  for (const auto& mdl : state.bundle.models)
    check_finite(mdl.params, "model parameters", state.step_count);
  return {estimate};
}

StepResult sox_mbmmo_step(MinMaxState& state, const MinMaxProblem& problem,
                          TwoLevelSampler& sampler, const ScheduleConfig& cfg) {
  const int d = state.bundle.dim();
  const int k = problem.num_blocks();
  const auto blocks = sampler.draw_blocks(k);
  const int n_draws = static_cast<int>(blocks.size());
  std::vector<std::vector<int>> pos_batches(static_cast<std::size_t>(n_draws));
  std::vector<std::vector<int>> neg_batches(static_cast<std::size_t>(n_draws));
  for (int p = 0; p < n_draws; ++p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    pos_batches[static_cast<std::size_t>(p)] = sampler.draw_inner(problem.pos_count(i));
    neg_batches[static_cast<std::size_t>(p)] = sampler.draw_inner(problem.neg_count(i));
  }

  // batch pieces depend on (w, a, b) only, all fixed within the step
  std::vector<MinMaxProblem::Grads> grads(static_cast<std::size_t>(n_draws));
  parallel_for(n_draws, [&](int p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    grads[static_cast<std::size_t>(p)] = problem.partial_grads(
        state.bundle, i, state.extras[static_cast<std::size_t>(2 * i)],
        state.extras[static_cast<std::size_t>(2 * i + 1)],
        pos_batches[static_cast<std::size_t>(p)], neg_batches[static_cast<std::size_t>(p)]);
  });

  Vec m(static_cast<std::size_t>(d + 2 * k), 0.0);
  double estimate = 0.0;
  const double inv_b1 = 1.0 / static_cast<double>(n_draws);
  for (int p = 0; p < n_draws; ++p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    const auto& g = grads[static_cast<std::size_t>(p)];
    const double s_pre = state.s[static_cast<std::size_t>(i)];
    // dual ascent at the pre-update value, then the w-gradient uses s_pre
    const double ds = g.mean_gap_c - s_pre / 2.0;
    state.s[static_cast<std::size_t>(i)] =
        problem.project_dual(s_pre + cfg.eta0 * ds);
    for (int t = 0; t < d; ++t)
      m[static_cast<std::size_t>(t)] +=
          inv_b1 * (g.w_quad[static_cast<std::size_t>(t)] +
                    s_pre * g.w_coupling[static_cast<std::size_t>(t)]);
    m[static_cast<std::size_t>(d + 2 * i)] += inv_b1 * g.da;
    m[static_cast<std::size_t>(d + 2 * i + 1)] += inv_b1 * g.db;
    estimate += inv_b1 * problem.batch_value(
                             state.bundle, i, state.extras[static_cast<std::size_t>(2 * i)],
                             state.extras[static_cast<std::size_t>(2 * i + 1)], s_pre,
                             pos_batches[static_cast<std::size_t>(p)],
                             neg_batches[static_cast<std::size_t>(p)]);
  }

  primal_update(state.v, state.adam_m2, m, cfg, cfg.eta,
                [&](std::span<const double> dir, double step) {
                  state.bundle.update(dir.subspan(0, static_cast<std::size_t>(d)), step);
                  for (int t = 0; t < 2 * k; ++t)
                    state.extras[static_cast<std::size_t>(t)] -=
                        step * dir[static_cast<std::size_t>(d + t)];
                });
  ++state.step_count;
  check_finite(state.v, "gradient estimator", state.step_count);
  check_finite(state.s, "dual variables", state.step_count);
  for (const auto& mdl : state.bundle.models)
    check_finite(mdl.params, "model parameters", state.step_count);
  return {estimate};
}

StepResult sox_mbbo_step(BilevelState& state, const BilevelProblem& problem,
                         TwoLevelSampler& sampler, const ScheduleConfig& cfg) {
  const int d = state.bundle.dim();
  const auto blocks = sampler.draw_blocks(problem.num_blocks());
  const int n_draws = static_cast<int>(blocks.size());
  const bool has_inner = problem.has_inner();

  std::vector<std::vector<int>> g_batches(static_cast<std::size_t>(n_draws));
  std::vector<std::vector<int>> phi_batches(static_cast<std::size_t>(n_draws));
  for (int p = 0; p < n_draws; ++p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    if (has_inner)
      g_batches[static_cast<std::size_t>(p)] =
          sampler.draw_inner(problem.inner().inner_set_size(i));
    const int phi_n = problem.phi_set_size(i);
    if (phi_n > 0) phi_batches[static_cast<std::size_t>(p)] = sampler.draw_inner(phi_n);
  }
  // lower problems touched this step, deduplicated in first-occurrence order
  std::vector<int> lowers;
  for (int p = 0; p < n_draws; ++p)
    for (int r : problem.block_lowers(blocks[static_cast<std::size_t>(p)]))
      if (std::find(lowers.begin(), lowers.end(), r) == lowers.end())
        lowers.push_back(r);
  std::vector<std::vector<int>> lower_batches(lowers.size());
  for (std::size_t li = 0; li < lowers.size(); ++li)
    lower_batches[li] = sampler.draw_inner(
        static_cast<int>(problem.lower(lowers[li]).set.size()));

  // lower-level pass: Hessian estimate, cross term and lambda step, all at
  // the pre-update lambda
  std::vector<double> hess_pre(static_cast<std::size_t>(problem.num_lower()), 0.0);
  std::vector<Vec> cross(static_cast<std::size_t>(problem.num_lower()));
  struct LowerOut {
    double grad, hess;
    Vec cross;
  };
  std::vector<LowerOut> lower_out(lowers.size());
  parallel_for(static_cast<int>(lowers.size()), [&](int li) {
    const int r = lowers[static_cast<std::size_t>(li)];
    const double lam = state.lambda[static_cast<std::size_t>(r)];
    const auto& batch = lower_batches[static_cast<std::size_t>(li)];
    lower_out[static_cast<std::size_t>(li)] = {
        problem.lower_grad(state.bundle, r, lam, batch),
        problem.lower_hess(state.bundle, r, lam, batch),
        problem.lower_cross(state.bundle, r, lam, batch)};
  });
  Vec lambda_pre = state.lambda;
  for (std::size_t li = 0; li < lowers.size(); ++li) {
    const int r = lowers[li];
    const auto& lo = lower_out[li];
    auto& sh = state.s_hess[static_cast<std::size_t>(r)];
    if (!state.s_init[static_cast<std::size_t>(r)]) {
      sh = lo.hess;
      state.s_init[static_cast<std::size_t>(r)] = 1;
    } else {
      sh = (1.0 - cfg.gamma_hess) * sh + cfg.gamma_hess * lo.hess;
    }
    const double floor = problem.lower(r).tau2 / 2.0;
    if (sh < floor) sh = floor;  // exact Hessian is >= tau2; guard the inverse
    hess_pre[static_cast<std::size_t>(r)] = sh;
    cross[static_cast<std::size_t>(r)] = lo.cross;
    state.lambda[static_cast<std::size_t>(r)] -= cfg.eta0 * lo.grad;
  }

  std::vector<InnerEval> inner(static_cast<std::size_t>(n_draws));
  std::vector<PhiEval> phi(static_cast<std::size_t>(n_draws));
  parallel_for(n_draws, [&](int p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    if (has_inner)
      inner[static_cast<std::size_t>(p)] = problem.inner().inner_eval(
          state.bundle, i, g_batches[static_cast<std::size_t>(p)]);
    Vec block_lam;
    for (int r : problem.block_lowers(i))
      block_lam.push_back(lambda_pre[static_cast<std::size_t>(r)]);
    phi[static_cast<std::size_t>(p)] = problem.phi_eval(
        state.bundle, i, block_lam, phi_batches[static_cast<std::size_t>(p)]);
  });

  Vec acc(static_cast<std::size_t>(d), 0.0);
  double estimate = 0.0;
  const double inv_b1 = 1.0 / static_cast<double>(n_draws);
  for (int p = 0; p < n_draws; ++p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    std::array<double, 2> u_pre{0.0, 0.0};
    double f_pre = 1.0;
    std::array<double, 2> df_pre{0.0, 0.0};
    if (has_inner) {
      const InnerEval& ev = inner[static_cast<std::size_t>(p)];
      auto& u = state.u[static_cast<std::size_t>(i)];
      if (!state.u_init[static_cast<std::size_t>(i)]) {
        u = ev.g;
        u_pre = ev.g;
        state.u_init[static_cast<std::size_t>(i)] = 1;
      } else {
        u_pre = u;
        for (int c = 0; c < problem.inner().inner_dim(); ++c)
          u[static_cast<std::size_t>(c)] =
              (1.0 - cfg.gamma0) * u[static_cast<std::size_t>(c)] +
              cfg.gamma0 * ev.g[static_cast<std::size_t>(c)];
      }
      const OuterEval fe = problem.inner().outer_eval(i, u_pre);
      f_pre = fe.f;
      df_pre = fe.df;
    }
    const PhiEval& ph = phi[static_cast<std::size_t>(p)];
    Vec contrib(static_cast<std::size_t>(d), 0.0);
    axpy(contrib, f_pre, ph.w_grad);
    int slot = 0;
    for (int r : problem.block_lowers(i)) {
      const double w = -f_pre * ph.dlambda[static_cast<std::size_t>(slot)] /
                       hess_pre[static_cast<std::size_t>(r)];
      axpy(contrib, w, cross[static_cast<std::size_t>(r)]);
      ++slot;
    }
    if (has_inner) {
      const InnerEval& ev = inner[static_cast<std::size_t>(p)];
      for (int c = 0; c < problem.inner().inner_dim(); ++c)
        axpy(contrib, ph.value * df_pre[static_cast<std::size_t>(c)],
             ev.grad[static_cast<std::size_t>(c)]);
    }
    axpy(acc, 1.0, contrib);
    const double f_post =
        has_inner
            ? problem.inner().outer_eval(i, state.u[static_cast<std::size_t>(i)]).f
            : 1.0;
    estimate += inv_b1 * f_post * ph.value;
  }
  scale(acc, inv_b1);

  primal_update(state.v, state.adam_m2, acc, cfg, cfg.eta1,
                [&](std::span<const double> dir, double step) {
                  state.bundle.update(dir, step);
                });
  ++state.step_count;
  check_finite(state.v, "gradient estimator", state.step_count);
  check_finite(state.lambda, "lower-level thresholds", state.step_count);
  for (const auto& mdl : state.bundle.models)
    check_finite(mdl.params, "model parameters", state.step_count);
  return {estimate};
}

StepResult cvar_subgrad_step(CvarState& state, const CvarProblem& problem,
                             TwoLevelSampler& sampler, const ScheduleConfig& cfg) {
  const int d = state.bundle.dim();
  const auto blocks = sampler.draw_blocks(problem.num_blocks());
  const int n_draws = static_cast<int>(blocks.size());
  Vec m(static_cast<std::size_t>(d), 0.0);
  double estimate = 0.0;
  const double inv_b1 = 1.0 / static_cast<double>(n_draws);
  for (int p = 0; p < n_draws; ++p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    const auto batch = sampler.draw_inner(problem.neg_count());
    const double s_pre = state.s[static_cast<std::size_t>(i)];
    const Vec wg = problem.w_subgrad(state.bundle, i, s_pre, batch);
    const double sg = problem.s_subgrad(state.bundle, i, s_pre, batch);
    state.s[static_cast<std::size_t>(i)] = s_pre - cfg.eta0 * sg;
    axpy(m, inv_b1, wg);
    double psi = 0.0;
    for (int j : batch) {
      const double l = problem.pair_loss_value(state.bundle, i, j);
      if (l > s_pre) psi += (l - s_pre);
    }
    estimate += inv_b1 * (s_pre + psi / (problem.beta() *
                                         static_cast<double>(batch.size())));
  }

  primal_update(state.v, state.adam_m2, m, cfg, cfg.eta,
                [&](std::span<const double> dir, double step) {
                  state.bundle.update(dir, step);
                });
  ++state.step_count;
  check_finite(state.v, "gradient estimator", state.step_count);
  check_finite(state.s, "per-block thresholds", state.step_count);
  for (const auto& mdl : state.bundle.models)
    check_finite(mdl.params, "model parameters", state.step_count);
  return {estimate};
}

StepResult naive_sgd_step(NaiveState& state, const FccoProblem& problem,
                          TwoLevelSampler& sampler, const ScheduleConfig& cfg) {
  const int d = state.bundle.dim();
  const auto blocks = sampler.draw_blocks(problem.num_blocks());
  const int n_draws = static_cast<int>(blocks.size());
  std::vector<std::vector<int>> batches(static_cast<std::size_t>(n_draws));
  for (int p = 0; p < n_draws; ++p)
    batches[static_cast<std::size_t>(p)] =
        sampler.draw_inner(problem.inner_set_size(blocks[static_cast<std::size_t>(p)]));
  std::vector<Vec> contribs(static_cast<std::size_t>(n_draws));
  Vec estimates(static_cast<std::size_t>(n_draws), 0.0);
  const bool has_direct = problem.has_direct();
  parallel_for(n_draws, [&](int p) {
    const int i = blocks[static_cast<std::size_t>(p)];
    const InnerEval ev =
        problem.inner_eval(state.bundle, i, batches[static_cast<std::size_t>(p)]);
    const OuterEval fe = problem.outer_eval(i, ev.g);  // f at the batch value
    Vec contrib(static_cast<std::size_t>(d), 0.0);
    for (int c = 0; c < problem.inner_dim(); ++c)
      axpy(contrib, fe.df[static_cast<std::size_t>(c)], ev.grad[static_cast<std::size_t>(c)]);
    double est = fe.f;
    if (has_direct) {
      const DirectEval de = problem.direct_eval(state.bundle, i);
      axpy(contrib, 1.0, de.grad);
      est += de.value;
    }
    contribs[static_cast<std::size_t>(p)] = std::move(contrib);
    estimates[static_cast<std::size_t>(p)] = est;
  });
  Vec m(static_cast<std::size_t>(d), 0.0);
  double estimate = 0.0;
  const double inv_b1 = 1.0 / static_cast<double>(n_draws);
  for (int p = 0; p < n_draws; ++p) {
    axpy(m, inv_b1, contribs[static_cast<std::size_t>(p)]);
    estimate += inv_b1 * estimates[static_cast<std::size_t>(p)];
  }
  primal_update(state.v, state.adam_m2, m, cfg, cfg.eta,
                [&](std::span<const double> dir, double step) {
                  state.bundle.update(dir, step);
                });
  ++state.step_count;
  check_finite(state.v, "gradient estimator", state.step_count);
  for (const auto& mdl : state.bundle.models)
    check_finite(mdl.params, "model parameters", state.step_count);
  return {estimate};
}

double exact_objective(const Problem& problem, const ModelBundle& bundle,
                       const Vec& minmax_extras) {
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MinMaxProblem>)
          return p.eval_full(bundle, minmax_extras);
        else
          return p.eval_full(bundle);
      },
      problem);
}

RunResult run(const Problem& problem, ModelBundle bundle,
              const ScheduleConfig& cfg, std::uint64_t sampler_seed,
              SolverAlg alg, const RunHooks& hooks) {
  cfg.validate();
  TwoLevelSampler sampler(cfg.b1, cfg.b2, sampler_seed);
  RunResult result;
  const auto t_start = std::chrono::steady_clock::now();

  auto loop = [&](auto& state, auto step_fn, const Vec* extras) {
    for (long t = 0; t < cfg.iters; ++t) {
      const StepResult sr = step_fn(state);
      const long it = t + 1;
      if (hooks.log_every > 0 && it % hooks.log_every == 0) {
        TraceRecord rec;
        rec.iteration = it;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                .count();
        rec.objective_estimate = sr.objective_estimate;
        rec.grad_norm = norm2(state.v);
        if (hooks.eval_every > 0 && it % hooks.eval_every == 0) {
          rec.exact_objective = exact_objective(problem, state.bundle,
                                                extras ? *extras : Vec{});
          if (hooks.metric_fn) rec.metric_values = hooks.metric_fn(state.bundle);
        }
        result.trace.push_back(std::move(rec));
      }
    }
    result.bundle = state.bundle;
  };

  if (alg == SolverAlg::NaiveSgd) {
    const auto* fcco = std::get_if<FccoProblem>(&problem);
    if (!fcco)
      throw std::invalid_argument(
          "optimizer.algorithm: naive_sgd only supports compositional objectives");
    NaiveState st = init_naive_state(*fcco, std::move(bundle));
    loop(st, [&](NaiveState& s) { return naive_sgd_step(s, *fcco, sampler, cfg); },
         nullptr);
    return result;
  }

  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FccoProblem>) {
          SoxFccoState st = init_fcco_state(p, std::move(bundle));
          loop(st, [&](SoxFccoState& s) { return sox_fcco_step(s, p, sampler, cfg); },
               nullptr);
        } else if constexpr (std::is_same_v<T, MinMaxProblem>) {
          MinMaxState st = init_minmax_state(p, std::move(bundle));
          loop(st,
               [&](MinMaxState& s) { return sox_mbmmo_step(s, p, sampler, cfg); },
               &st.extras);
          result.minmax_extras = st.extras;
        } else if constexpr (std::is_same_v<T, BilevelProblem>) {
          BilevelState st = init_bilevel_state(p, std::move(bundle));
          loop(st,
               [&](BilevelState& s) { return sox_mbbo_step(s, p, sampler, cfg); },
               nullptr);
        } else {
          CvarState st = init_cvar_state(p, std::move(bundle));
          loop(st,
               [&](CvarState& s) { return cvar_subgrad_step(s, p, sampler, cfg); },
               nullptr);
        }
      },
      problem);
  return result;
}

}  // namespace xrisk
