// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failures. argv[1] (optional) is the CLI binary used by the determinism
// criterion.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "instances.hpp"
#include "oracles.hpp"
#include "xrisk/metrics.hpp"
#include "xrisk/optimizer.hpp"
#include "xrisk/train.hpp"

using namespace xrisk;

namespace {

namespace fs = std::filesystem;

struct Harness {
  int failures = 0;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void criterion(const std::string& name, bool pass, const std::string& detail) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %-52s %s (%.1fs)\n", pass ? "PASS" : "FAIL", name.c_str(),
                detail.c_str(), secs);
    std::fflush(stdout);
    failures += pass ? 0 : 1;
    t0 = std::chrono::steady_clock::now();
  }
};

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

Vec scores_of(const ModelBundle& b, const Dataset& ds, int label) {
  Vec out;
  for (std::size_t i = 0; i < ds.binary.x.size(); ++i)
    if (ds.binary.y[i] == label)
      out.push_back(score_scalar(b.models[0], ds.binary.x[i]));
  return out;
}

// ---- criterion 1: gradient consistency, every kind -------------------------

void criterion_gradients(Harness& h) {
  double worst = 0.0;
  std::string worst_kind;
  for (const ObjectiveKind kind : instances::all_kinds()) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto inst = instances::make_instance(
          kind, 211 + 13 * static_cast<std::uint64_t>(rep), rep % 2 == 1);
      const double gap = instances::gradient_gap(inst);
      if (gap > worst) {
        worst = gap;
        worst_kind = objective_kind_name(kind);
      }
    }
  }
  h.criterion("1 gradient consistency (23 kinds x 5 instances)", worst <= 1e-5,
              fmt("worst rel err %.2e (%s), tol 1e-5", worst, worst_kind.c_str()));
}

// ---- criterion 2: Lemma-1-style variational identity ------------------------

void criterion_lemma1(Harness& h) {
  Rng rng(2024);
  int bad = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 3 + static_cast<int>(rng.below(40));
    const Vec s = oracles::random_vec(n, rng, 5.0);
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(n - 1)));
    const double eps = 0.02 + 0.96 * rng.uniform();
    if (oracles::lemma1_argmin_brute(s, k, eps) != metrics::kth_largest(s, k + 1))
      ++bad;
  }
  h.criterion("2 top-k threshold variational identity (200 triples)", bad == 0,
              fmt("%d mismatches", bad));
}

// ---- criterion 3: smoothed threshold gap ------------------------------------

void criterion_lemma4(Harness& h) {
  Rng rng(31337);
  double fitted_c = 0.0;
  bool monotone = true;
  for (int rep = 0; rep < 20; ++rep) {
    const Vec s = oracles::random_vec(50, rng, 2.0);
    const int k = 1 + static_cast<int>(rng.below(10));
    const double target = metrics::kth_largest(s, k + 1);
    double prev_gap = 1e100;
    for (const double eps : {0.1, 0.05, 0.025, 0.0125}) {
      const double hat = metrics::lower_level_solve_exact(s, k, 0.5, eps, eps);
      const double gap = std::abs(hat - target);
      fitted_c = std::max(fitted_c, gap / eps);
      if (gap > prev_gap + 1e-10) monotone = false;
      prev_gap = gap;
    }
  }
  h.criterion("3 smoothed threshold gap <= C*eps with C <= 10",
              fitted_c <= 10.0 && monotone,
              fmt("fitted C %.3f, monotone %s", fitted_c, monotone ? "yes" : "no"));
}

// ---- criterion 4: special-case identities -----------------------------------

void criterion_special_cases(Harness& h) {
  Rng rng(4004);
  double worst = 0.0;
  bool pr_ok = true;
  for (int rep = 0; rep < 25; ++rep) {
    const int n_pos = 3 + static_cast<int>(rng.below(10));
    const int n_neg = 3 + static_cast<int>(rng.below(10));
    const Vec pos = oracles::random_vec(n_pos, rng);
    const Vec neg = oracles::random_vec(n_neg, rng);
    const Surrogate sh{SurrogateKind::SquaredHinge, 1.0};

    // (a) full-band one-way pAUC surrogate == pairwise surrogate mean
    double pairwise = 0.0;
    for (double p : pos)
      for (double n : neg) pairwise += pair_loss(sh, n - p).value;
    pairwise /= static_cast<double>(n_pos) * static_cast<double>(n_neg);
    worst = std::max(worst,
                     std::abs(metrics::pauc_surrogate_hard(pos, neg, 0.0, 1.0, false,
                                                           sh, metrics::PaucNorm::Band) -
                              pairwise));

    // (b) top push == hard pAUC with k1 = 0, k2 = 1 (band normalization)
    double max_neg = neg[0];
    for (double n : neg) max_neg = std::max(max_neg, n);
    double tp = 0.0;
    for (double p : pos) tp += pair_loss(sh, max_neg - p).value;
    tp /= static_cast<double>(n_pos);
    worst = std::max(worst,
                     std::abs(metrics::pauc_surrogate_hard(pos, neg, 0.0, 1.0 / n_neg,
                                                           false, sh,
                                                           metrics::PaucNorm::Band) -
                              tp));

    // (d) P@K = R@K n+ / K on tie-free labels
    Vec scores;
    std::vector<int> labels;
    for (double p : pos) {
      scores.push_back(p);
      labels.push_back(+1);
    }
    for (double n : neg) {
      scores.push_back(n);
      labels.push_back(-1);
    }
    const int k = 1 + static_cast<int>(rng.below(scores.size()));
    const auto prk = metrics::precision_recall_at_k(scores, labels, k);
    pr_ok = pr_ok && std::abs(prk.precision - prk.recall * n_pos / k) <= 1e-15;
  }

  // (c) p-norm push with p = 1 equals the pairwise auroc objective
  const Dataset ds = gen_binary(6, 9, 3, 0.7, 404);
  const auto ms = instances::linear_spec(3);
  const ModelBundle b{{oracles::random_model(ms, 405)}};
  ObjectiveSpec push;
  push.kind = ObjectiveKind::PnormPush;
  push.p = 1.0;
  ObjectiveSpec auc;
  auc.kind = ObjectiveKind::AurocPairwise;
  worst = std::max(worst, std::abs(build_fcco(push, ds, {ms}).eval_full(b) -
                                   build_fcco(auc, ds, {ms}).eval_full(b)));

  h.criterion("4 special-case identities (pAUC/top-push/p-norm/P@K)",
              worst <= 1e-12 && pr_ok, fmt("worst abs gap %.2e", worst));
}

// ---- criterion 5: solver reduction identities -------------------------------

void criterion_reductions(Harness& h) {
  // (a) trivial gates: the bilevel stepper reproduces the compositional one
  const Dataset ds = gen_binary(5, 9, 3, 0.7, 500);
  ObjectiveSpec ap;
  ap.kind = ObjectiveKind::Ap;
  const auto ms = instances::linear_spec(3);
  const FccoProblem fcco = build_fcco(ap, ds, {ms});
  const BilevelProblem wrapped = as_bilevel(fcco);
  ScheduleConfig cfg;
  cfg.gamma0 = 0.4;
  cfg.beta1 = 0.8;
  cfg.eta = 0.02;
  cfg.eta1 = 0.02;
  cfg.eta0 = 0.1;
  cfg.b1 = 2;
  cfg.b2 = 3;
  const ModelBundle b0{{oracles::random_model(ms, 501)}};
  TwoLevelSampler s1(cfg.b1, cfg.b2, 502), s2(cfg.b1, cfg.b2, 502);
  SoxFccoState fs = init_fcco_state(fcco, b0);
  BilevelState bs = init_bilevel_state(wrapped, b0);
  bool exact_a = true;
  for (int t = 0; t < 100; ++t) {
    sox_fcco_step(fs, fcco, s1, cfg);
    sox_mbbo_step(bs, wrapped, s2, cfg);
    exact_a = exact_a && fs.bundle.models[0].params == bs.bundle.models[0].params &&
              fs.v == bs.v && fs.u == bs.u;
  }

  // (b) trivial f and g: the bilevel stepper is the min-max-shaped update
  ObjectiveSpec rk;
  rk.kind = ObjectiveKind::RecallKBilevel;
  rk.k = 3;
  rk.tau1 = 0.05;
  rk.tau2 = 0.05;
  const Dataset ds2 = gen_binary(6, 10, 2, 0.8, 503);
  const auto ms2 = instances::linear_spec(2);
  const BilevelProblem p2 = build_bilevel(rk, ds2, {ms2});
  ScheduleConfig cfg2;
  cfg2.beta1 = 0.7;
  cfg2.eta1 = 0.03;
  cfg2.eta0 = 0.2;
  cfg2.gamma_hess = 0.5;
  cfg2.b1 = 1;
  cfg2.b2 = 4;
  const ModelBundle c0{{oracles::random_model(ms2, 504)}};
  TwoLevelSampler s3(cfg2.b1, cfg2.b2, 505), s4(cfg2.b1, cfg2.b2, 505);
  BilevelState st = init_bilevel_state(p2, c0);
  ModelBundle ref_b = c0;
  double ref_lambda = 0.0, ref_hess = 0.0;
  bool ref_init = false;
  Vec ref_v(2, 0.0);
  bool exact_b = true;
  for (int t = 0; t < 100; ++t) {
    sox_mbbo_step(st, p2, s3, cfg2);
    (void)s4.draw_blocks(1);
    const auto phi_batch = s4.draw_inner(p2.phi_set_size(0));
    const auto low_batch = s4.draw_inner(static_cast<int>(p2.lower(0).set.size()));
    const double g = p2.lower_grad(ref_b, 0, ref_lambda, low_batch);
    const double hs = p2.lower_hess(ref_b, 0, ref_lambda, low_batch);
    const Vec cross = p2.lower_cross(ref_b, 0, ref_lambda, low_batch);
    if (!ref_init) {
      ref_hess = hs;
      ref_init = true;
    } else {
      ref_hess = (1.0 - cfg2.gamma_hess) * ref_hess + cfg2.gamma_hess * hs;
    }
    if (ref_hess < p2.lower(0).tau2 / 2.0) ref_hess = p2.lower(0).tau2 / 2.0;
    const double lambda_pre = ref_lambda;
    ref_lambda -= cfg2.eta0 * g;
    const Vec lam{lambda_pre};
    const PhiEval phi = p2.phi_eval(ref_b, 0, lam, phi_batch);
    Vec contrib(2, 0.0);
    axpy(contrib, 1.0, phi.w_grad);
    axpy(contrib, -1.0 * phi.dlambda[0] / ref_hess, cross);
    for (std::size_t i = 0; i < ref_v.size(); ++i)
      ref_v[i] = cfg2.beta1 * ref_v[i] + (1.0 - cfg2.beta1) * contrib[i];
    ref_b.update(ref_v, cfg2.eta1);
    exact_b = exact_b && st.bundle.models[0].params == ref_b.models[0].params &&
              st.v == ref_v && st.lambda[0] == ref_lambda;
  }
  h.criterion("5 solver reduction identities (bit-exact, 100 steps)",
              exact_a && exact_b,
              fmt("phi==1: %s; f==g==1: %s", exact_a ? "exact" : "diverged",
                  exact_b ? "exact" : "diverged"));
}

// ---- criterion 6a: min-max AUROC ---------------------------------------------

void criterion_auroc_minmax(Harness& h) {
  const Dataset ds = gen_binary(50, 950, 2, 2.0, 660);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::AurocMinMax;
  const auto ms = instances::linear_spec(2);
  const Problem p = build_problem(spec, ds, {ms});
  ScheduleConfig cfg;
  cfg.b1 = 1;
  cfg.b2 = 32;
  cfg.eta = 0.05;
  cfg.eta0 = 0.05;
  cfg.beta1 = 0.9;
  cfg.iters = 5000;
  RunHooks hooks;
  hooks.log_every = 100000;
  const RunResult rr =
      run(p, ModelBundle{{init_model(ms, 0)}}, cfg, 661, SolverAlg::Sox, hooks);
  const double auroc = metrics::auroc_exact(scores_of(rr.bundle, ds, +1),
                                            scores_of(rr.bundle, ds, -1));
  h.criterion("6a min-max AUROC on imbalanced Gaussians", auroc >= 0.95,
              fmt("final exact AUROC %.4f (>= 0.95)", auroc));
}

// ---- criterion 6b: AP parity with full-batch descent ---------------------------

void criterion_ap_parity(Harness& h) {
  const Dataset ds = gen_binary(25, 475, 5, 2.0, 662);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::Ap;
  spec.surrogate = {SurrogateKind::Sigmoid, 0.5};
  spec.surrogate_set = true;
  const auto ms = instances::linear_spec(5);
  const FccoProblem p = build_fcco(spec, ds, {ms});
  const ModelBundle b0{{init_model(ms, 0)}};
  const int epochs = 400;

  auto final_ap = [&](const ModelBundle& b) {
    return metrics::average_precision(scores_of(b, ds, +1), scores_of(b, ds, -1));
  };

  // full-batch gradient descent, one step per epoch
  ModelBundle gd = b0;
  for (int t = 0; t < epochs; ++t) gd.update(p.full_gradient(gd), 2.0);
  const double ap_gd = final_ap(gd);

  // SOX at B1 = 5 of m = 25 blocks: five steps per epoch of block visits
  ScheduleConfig cfg;
  cfg.b1 = 5;
  cfg.b2 = 8;
  cfg.gamma0 = 0.5;
  cfg.beta1 = 0.9;
  cfg.eta = 2.0;
  cfg.iters = epochs * 5;
  RunHooks hooks;
  hooks.log_every = 100000;
  const RunResult sox = run(p, b0, cfg, 663, SolverAlg::Sox, hooks);
  const double ap_sox = final_ap(sox.bundle);

  // naive mini-batch baseline at the same budget
  const RunResult naive = run(p, b0, cfg, 664, SolverAlg::NaiveSgd, hooks);
  const double ap_naive = final_ap(naive.bundle);

  const bool pass = std::abs(ap_sox - ap_gd) <= 0.02 && ap_naive <= ap_sox + 0.005;
  h.criterion("6b AP: sox vs full-batch descent and naive baseline", pass,
              fmt("AP sox %.4f, gd %.4f, naive %.4f", ap_sox, ap_gd, ap_naive));
}

// ---- criterion 6c: top-K NDCG ---------------------------------------------------

void criterion_topk_ndcg(Harness& h) {
  const Dataset ds = gen_ranking(20, 50, 3, 2.0, 5, 665);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::TopkNdcg;
  spec.k = 5;
  spec.tau1 = 0.1;
  spec.tau2 = 0.1;
  spec.gate_tau = 0.2;
  const auto ms = instances::linear_spec(5);
  const BilevelProblem p = build_bilevel(spec, ds, {ms});
  const ModelBundle b0{{init_model(ms, 0)}};

  auto ndcg5 = [&](const ModelBundle& b) {
    double total = 0.0;
    for (const auto& q : ds.ranking.queries) {
      Vec scores;
      for (const auto& x : q.x) scores.push_back(score_scalar(b.models[0], x));
      total += metrics::ndcg_exact(scores, q.rel, 5);
    }
    return total / static_cast<double>(ds.ranking.queries.size());
  };
  const double before = ndcg5(b0);

  ScheduleConfig cfg;
  cfg.b1 = 40;
  cfg.b2 = 64;  // full inner and lower batches
  cfg.gamma0 = 0.5;
  cfg.gamma_hess = 0.5;
  cfg.beta1 = 0.9;
  cfg.eta0 = 1.0;
  cfg.eta1 = 0.5;
  cfg.iters = 2000;
  TwoLevelSampler sampler(cfg.b1, cfg.b2, 666);
  BilevelState st = init_bilevel_state(p, b0);
  for (long t = 0; t < cfg.iters; ++t) sox_mbbo_step(st, p, sampler, cfg);
  const double after = ndcg5(st.bundle);

  double lambda_err = 0.0;
  for (int r = 0; r < p.num_lower(); ++r)
    lambda_err = std::max(lambda_err,
                          std::abs(st.lambda[static_cast<std::size_t>(r)] -
                                   p.lower_solve_exact(st.bundle, r)));
  const bool pass = after - before >= 0.1 && lambda_err <= 1e-2;
  h.criterion("6c top-5 NDCG improvement and lambda tracking", pass,
              fmt("ndcg@5 %.4f -> %.4f, max |lambda-exact| %.2e", before, after,
                  lambda_err));
}

// ---- criterion 6d: one-way pAUC via the bilevel solver ---------------------------

void criterion_pauc_bilevel(Harness& h) {
  const Dataset ds = gen_binary(50, 950, 2, 2.0, 660);  // the 6a dataset
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::PaucBilevelOneWay;
  spec.alpha = 0.0;
  spec.beta = 0.1;
  spec.tau1 = 0.1;
  spec.tau2 = 0.1;
  spec.gate_tau = 0.1;
  const auto ms = instances::linear_spec(2);
  const BilevelProblem p = build_bilevel(spec, ds, {ms});
  ScheduleConfig cfg;
  cfg.b1 = 1;
  cfg.b2 = 64;
  cfg.gamma0 = 0.5;
  cfg.gamma_hess = 0.5;
  cfg.beta1 = 0.9;
  cfg.eta0 = 1.0;
  cfg.eta1 = 0.1;
  cfg.iters = 5000;
  TwoLevelSampler sampler(cfg.b1, cfg.b2, 667);
  BilevelState st = init_bilevel_state(p, ModelBundle{{init_model(ms, 0)}});
  for (long t = 0; t < cfg.iters; ++t) sox_mbbo_step(st, p, sampler, cfg);
  const double pauc = metrics::pauc_exact(scores_of(st.bundle, ds, +1),
                                          scores_of(st.bundle, ds, -1), 0.0, 0.1,
                                          false, metrics::PaucNorm::Band);
  h.criterion("6d one-way pAUC (FPR <= 0.1) via the bilevel solver", pauc >= 0.90,
              fmt("final band pAUC %.4f (>= 0.90)", pauc));
}

// ---- criterion 6e: global contrastive loss ---------------------------------------

void criterion_gcl(Harness& h) {
  AugmentationSpec aug;
  aug.seed = 668;
  aug.ops = {{AugmentKind::GaussNoise, 0.3, 0.0}};
  const Dataset ds = gen_pool(100, 4, 2, 3.0, 669, aug);
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::GclOneWay;
  spec.tau = 0.5;
  const auto ms = instances::mlp_spec(4, 8, 2, true);
  const FccoProblem p = build_fcco(spec, ds, {ms});
  const ModelBundle b0{{init_model(ms, 1)}};

  auto class_cos = [&](const ModelBundle& b) {
    Vec m0(2, 0.0), m1(2, 0.0);
    int n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < ds.pool.x.size(); ++i) {
      const Vec e = score(b.models[0], ds.pool.x[i]);
      if (ds.pool.label[i] == 0) {
        axpy(m0, 1.0, e);
        ++n0;
      } else {
        axpy(m1, 1.0, e);
        ++n1;
      }
    }
    scale(m0, 1.0 / n0);
    scale(m1, 1.0 / n1);
    return dot(m0, m1) / (norm2(m0) * norm2(m1));
  };

  const double loss0 = p.eval_full(b0);
  const double cos0 = class_cos(b0);
  ScheduleConfig cfg;
  cfg.b1 = 10;
  cfg.b2 = 32;
  cfg.gamma0 = 0.5;
  cfg.beta1 = 0.9;
  cfg.eta = 0.5;
  cfg.iters = 2000;
  RunHooks hooks;
  hooks.log_every = 100000;
  const RunResult rr = run(Problem{p}, b0, cfg, 670, SolverAlg::Sox, hooks);
  const double loss1 = p.eval_full(rr.bundle);
  const double cos1 = class_cos(rr.bundle);
  const bool pass = loss1 <= loss0 - 0.5 && cos1 < cos0;
  h.criterion("6e one-way GCL training on a two-class pool", pass,
              fmt("gcl %.3f -> %.3f, class-mean cos %.3f -> %.3f", loss0, loss1,
                  cos0, cos1));
}

// ---- criterion 7: estimator bias ---------------------------------------------

void criterion_estimator_bias(Harness& h) {
  const Dataset ds = gen_binary(25, 475, 5, 2.0, 662);  // the 6b dataset
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::Ap;
  spec.surrogate = {SurrogateKind::Sigmoid, 0.5};
  spec.surrogate_set = true;
  const auto ms = instances::linear_spec(5);
  const FccoProblem p = build_fcco(spec, ds, {ms});
  const ModelBundle b{{oracles::random_model(ms, 671, 0.3)}};
  const Vec exact = p.full_gradient(b);
  const int steps = 10000;

  // frozen model, beta1 = 0: the state's v is the per-step estimator itself
  ScheduleConfig cfg;
  cfg.b1 = 25;  // every block each step
  cfg.b2 = 2;
  cfg.gamma0 = 0.5;
  cfg.beta1 = 0.0;
  cfg.eta = 0.0;

  TwoLevelSampler s_raw(cfg.b1, cfg.b2, 673);
  NaiveState raw = init_naive_state(p, b);
  Vec naive_mean(static_cast<std::size_t>(b.dim()), 0.0);
  for (int t = 0; t < steps; ++t) {
    naive_sgd_step(raw, p, s_raw, cfg);
    axpy(naive_mean, 1.0 / steps, raw.v);
  }
  Vec naive_bias(naive_mean);
  axpy(naive_bias, -1.0, exact);

  TwoLevelSampler s_sox(cfg.b1, cfg.b2, 674);
  SoxFccoState sox = init_fcco_state(p, b);
  Vec sox_mean(static_cast<std::size_t>(b.dim()), 0.0);
  for (int t = 0; t < steps; ++t) {
    sox_fcco_step(sox, p, s_sox, cfg);
    axpy(sox_mean, 1.0 / steps, sox.v);
  }
  Vec sox_bias(sox_mean);
  axpy(sox_bias, -1.0, exact);

  const double ratio = norm2(naive_bias) / std::max(norm2(sox_bias), 1e-300);
  h.criterion("7 estimator bias: naive vs sox at B2 = 2", ratio >= 2.0,
              fmt("bias naive %.3e, sox %.3e, ratio %.1fx (>= 2 required)",
                  norm2(naive_bias), norm2(sox_bias), ratio));
}

// ---- criterion 8: metric oracle equivalence ------------------------------------

void criterion_oracles(Harness& h) {
  Rng rng(808);
  double worst = 0.0;
  bool exact_ok = true;
  for (int rep = 0; rep < 100; ++rep) {
    const int n_pos = 2 + static_cast<int>(rng.below(24));
    const int n_neg = 2 + static_cast<int>(rng.below(24));
    const Vec pos = oracles::random_vec(n_pos, rng);
    const Vec neg = oracles::random_vec(n_neg, rng);
    worst = std::max(worst, std::abs(metrics::auroc_exact(pos, neg) -
                                     oracles::auroc_brute(pos, neg)));
    worst = std::max(worst, std::abs(metrics::average_precision(pos, neg) -
                                     oracles::ap_brute(pos, neg)));
    Vec all(pos);
    all.insert(all.end(), neg.begin(), neg.end());
    const int k = 1 + static_cast<int>(rng.below(all.size()));
    exact_ok =
        exact_ok && metrics::kth_largest(all, k) == oracles::kth_largest_brute(all, k);
    Vec losses = oracles::random_vec(n_neg, rng);
    for (double& l : losses) l = std::abs(l);
    const double beta = 0.1 + 0.9 * rng.uniform();
    worst = std::max(worst, std::abs(metrics::cvar_exact(losses, beta).value -
                                     oracles::cvar_value_brute(losses, beta)));
  }
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 3 + static_cast<int>(rng.below(40));
    const Vec scores = oracles::random_vec(n, rng);
    std::vector<int> rel;
    bool any = false;
    for (int i = 0; i < n; ++i) {
      rel.push_back(static_cast<int>(rng.below(3)));
      any = any || rel.back() > 0;
    }
    if (!any) rel[0] = 1;
    worst = std::max(worst, std::abs(metrics::ndcg_exact(scores, rel) -
                                     oracles::ndcg_brute(scores, rel, 0)));
  }
  h.criterion("8 metric oracles vs brute force (100 instances)",
              worst <= 1e-12 && exact_ok, fmt("worst abs gap %.2e", worst));
}

// ---- criterion 9: end-to-end determinism ----------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_determinism(Harness& h, const std::string& cli) {
  if (cli.empty()) {
    h.criterion("9 byte-identical traces across runs and workers", false,
                "CLI binary path missing (pass as argv[1])");
    return;
  }
  const fs::path dir = fs::temp_directory_path() / "xrisk_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string out_dir = (dir / "out").string();
  const std::string cfg = R"({
  "objective": {"kind": "auroc_minmax"},
  "model": {"kind": "linear", "input_dim": 2},
  "data": {"source": "gen_binary", "n_pos": 20, "n_neg": 60, "dim": 2,
           "delta": 1.5, "seed": 5},
  "optimizer": {"B1": 1, "B2": 8, "eta": 0.03, "eta0": 0.1, "beta1": 0.9},
  "run": {"T": 300, "seed": 9, "log_every": 50, "eval_every": 150,
          "output_dir": ")" + out_dir + R"(", "metrics": ["auroc", "ap"]}
})";
  const fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream out(cfg_path);
    out << cfg;
  }
  const fs::path trace = fs::path(out_dir) / "auroc_minmax_sox_seed9" / "trace.csv";
  auto run_cli = [&](const std::string& env) {
    const std::string cmd =
        env + " '" + cli + "' train '" + cfg_path.string() + "' > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  bool ok = run_cli("XRISK_THREADS=1") == 0;
  const std::string first = ok ? slurp(trace) : "";
  ok = ok && run_cli("XRISK_THREADS=1") == 0 && slurp(trace) == first;
  ok = ok && run_cli("XRISK_THREADS=4") == 0 && slurp(trace) == first;
  h.criterion("9 byte-identical traces across runs and workers",
              ok && !first.empty(),
              fmt("%zu trace bytes compared across 3 runs", first.size()));
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  Harness h;
  criterion_gradients(h);
  criterion_lemma1(h);
  criterion_lemma4(h);
  criterion_special_cases(h);
  criterion_reductions(h);
  criterion_auroc_minmax(h);
  criterion_ap_parity(h);
  criterion_topk_ndcg(h);
  criterion_pauc_bilevel(h);
  criterion_gcl(h);
  criterion_estimator_bias(h);
  criterion_oracles(h);
  criterion_determinism(h, cli);
  std::printf("%d criterion(s) failed\n", h.failures);
  return h.failures;
}
