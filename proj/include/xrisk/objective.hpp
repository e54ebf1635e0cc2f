#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "xrisk/common.hpp"
#include "xrisk/data.hpp"
#include "xrisk/model.hpp"
#include "xrisk/surrogate.hpp"

namespace xrisk {

enum class ObjectiveKind {
  AurocPairwise,
  Ap,
  Map,
  Ndcg,
  Listnet,
  PnormPush,
  PaucKl,
  RecallKFcco,
  GclOneWay,
  GclTwoWay,
  SupconRatio,
  SupconLogRatio,
  SupconPerPair,
  AurocMinMax,
  PaucBilevelOneWay,
  PaucBilevelTwoWay,
  TopkNdcg,
  TopkMap,
  TopPush,
  RecallKBilevel,
  PrecAtRecall,
  PapK,
  PaucCvarOneWay,
};

const char* objective_kind_name(ObjectiveKind k);
ObjectiveKind objective_kind_from_name(const std::string& name);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::AurocPairwise;
  Surrogate surrogate;       // pairwise loss l (default depends on kind)
  Surrogate surrogate_outer; // l1 of the recall FCCO form
  double gate_tau = 0.1;     // temperature of the selection gate phi
  double alpha = 0.0;        // pAUC band
  double beta = 1.0;
  double tau = 0.5;          // contrastive temperature
  double tau1 = 0.01;        // lower-level softplus smoothing
  double tau2 = 0.01;        // lower-level quadratic regularizer
  double eps_sel = 0.5;      // lower-level epsilon in (0,1)
  double eps_gcl = 0.0;      // denominator constant of the one-way GCL
  double p = 2.0;            // p-norm push exponent
  double lambda_dro = 1.0;   // KL-DRO temperature
  double margin_c = 1.0;     // min-max margin
  int k = 1;                 // top-K parameter
  int tasks = 1;             // min-max task count
  bool include_positive = true;  // two-way GCL denominator convention
  bool surrogate_set = false;    // when false, a per-kind default applies

  void validate() const;  // throws std::invalid_argument naming the field
};

// Fill in the per-kind default surrogate unless the caller set one.
ObjectiveSpec with_defaults(ObjectiveSpec spec);

// ---------------------------------------------------------------------------
// FCCO: F(w) = (1/m) sum_i f_i(g_i(w; S_i)) [+ direct_i(w)]
//
// g_i over the full set equals the exact inner mean; over a uniform batch it
// is an unbiased estimator of it. The optional direct term carries per-block
// parts that are plain (non-compositional) functions of w, e.g. the positive
// pair similarity in the contrastive numerators.
// ---------------------------------------------------------------------------

struct InnerEval {
  std::array<double, 2> g{0.0, 0.0};
  std::array<Vec, 2> grad;
};

struct OuterEval {
  double f = 0.0;
  std::array<double, 2> df{0.0, 0.0};
};

struct DirectEval {
  double value = 0.0;
  Vec grad;
};

class FccoProblem {
 public:
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  int inner_dim() const { return inner_dim_; }
  int inner_set_size(int block) const {
    return static_cast<int>(blocks_[static_cast<std::size_t>(block)].ref.size());
  }

  InnerEval inner_eval(const ModelBundle& bundle, int block,
                       std::span<const int> batch) const;
  OuterEval outer_eval(int block, const std::array<double, 2>& u) const;
  bool has_direct() const;
  DirectEval direct_eval(const ModelBundle& bundle, int block) const;

  double eval_full(const ModelBundle& bundle) const;
  Vec full_gradient(const ModelBundle& bundle) const;

  const ObjectiveSpec& spec() const { return spec_; }
  int model_count() const { return model_count_; }

 private:
  friend FccoProblem build_fcco(const ObjectiveSpec&, const Dataset&,
                                const std::vector<ScoreModelSpec>&);
  struct Block {
    int anchor = -1;            // item index (meaning depends on kind)
    int anchor_view = -1;       // contrastive view id
    int positive_view = -1;     // contrastive positive view id
    int group = -1;             // query index for ranking kinds
    std::vector<int> ref;       // reference set S_i
    std::vector<char> sel;      // membership flags for two-part inner sums
    double sel_scale = 0.0;     // |S_i| / #selected importance weight
    double weight = 1.0;        // folded block weight m * omega_i
    double aux0 = 0.0;          // per-kind constant (gain, P(y), 1/Z_q, ...)
    double aux1 = 0.0;
  };

  // contrastive view table: views_[sample * views_per_sample + v]
  Vec view_features(int view) const;
  const Vec& item_features(const Block& b, int ref_pos) const;
  double item_score(const ModelBundle& bundle, const Block& b, int idx) const;

  ObjectiveSpec spec_;
  std::shared_ptr<const Dataset> data_;
  std::vector<Block> blocks_;
  std::vector<Vec> views_;  // realized augmented views (contrastive kinds)
  int inner_dim_ = 1;
  int model_count_ = 1;
};

FccoProblem build_fcco(const ObjectiveSpec& spec, const Dataset& data,
                       const std::vector<ScoreModelSpec>& models);

// ---------------------------------------------------------------------------
// Min-max: per task k,
//   F_k = E_{S+}(h - a_k)^2 + E_{S-}(h - b_k)^2
//       + s_k (E_{S-} h - E_{S+} h + c) - s_k^2 / 4
// with (a_k, b_k) primal and s_k dual over Omega = R.
// ---------------------------------------------------------------------------

class MinMaxProblem {
 public:
  int num_blocks() const { return static_cast<int>(tasks_.size()); }
  int pos_count(int block) const {
    return static_cast<int>(tasks_[static_cast<std::size_t>(block)].pos.size());
  }
  int neg_count(int block) const {
    return static_cast<int>(tasks_[static_cast<std::size_t>(block)].neg.size());
  }

  struct Grads {
    Vec w_grad;                  // s-independent part + s * coupling
    Vec w_quad;                  // quadratic part of the w gradient
    Vec w_coupling;              // multiplies s in the w gradient
    double da = 0.0, db = 0.0;
    double mean_gap_c = 0.0;     // E_B- h - E_B+ h + c  (ds = this - s/2)
  };

  // Batch sums over pos_batch/neg_batch index lists into the task's subsets.
  Grads partial_grads(const ModelBundle& bundle, int block, double a, double b,
                      std::span<const int> pos_batch,
                      std::span<const int> neg_batch) const;

  double project_dual(double s) const { return s; }  // Omega = R

  // Batch objective value at given (a, b, s).
  double batch_value(const ModelBundle& bundle, int block, double a, double b,
                     double s, std::span<const int> pos_batch,
                     std::span<const int> neg_batch) const;

  // Closed-form dual optimum per block: s* = 2 (E- h - E+ h + c).
  double dual_opt(const ModelBundle& bundle, int block) const;

  // Primal objective (dual maximized exactly), mean over tasks.
  double eval_full(const ModelBundle& bundle,
                   std::span<const double> extras) const;
  // Gradient of eval_full w.r.t. [w, a_1, b_1, ..., a_K, b_K].
  Vec full_gradient(const ModelBundle& bundle,
                    std::span<const double> extras) const;

  const ObjectiveSpec& spec() const { return spec_; }

 private:
  friend MinMaxProblem build_minmax(const ObjectiveSpec&, const Dataset&,
                                    const std::vector<ScoreModelSpec>&);
  struct Task {
    std::vector<int> pos;
    std::vector<int> neg;
  };
  ObjectiveSpec spec_;
  std::shared_ptr<const Dataset> data_;
  std::vector<Task> tasks_;
};

MinMaxProblem build_minmax(const ObjectiveSpec& spec, const Dataset& data,
                           const std::vector<ScoreModelSpec>& models);

// ---------------------------------------------------------------------------
// Bilevel: F(w) = (1/m) sum_i f_i(g_i(w; S_i)) * phi_i(w, lambda(w))
// with each lambda_r the minimizer of the smoothed top-K threshold problem
//   L_r(lambda, w) = (K+eps)/|S| lambda + tau2/2 lambda^2
//                  + (1/|S|) sum tau1 ln(1 + exp((h - lambda)/tau1)).
// phi_i is either a per-block gate (top-K ranking) or an average over its own
// reference set (pAUC pair bands, recall/precision threshold sums).
// ---------------------------------------------------------------------------

struct LowerProblem {
  std::vector<int> set;   // items whose scores enter L
  double k_sel = 0.0;     // the K of (K + eps)
  double eps_sel = 0.5;
  double tau1 = 0.01;
  double tau2 = 0.01;
};

struct PhiEval {
  double value = 1.0;
  Vec w_grad;
  std::array<double, 2> dlambda{0.0, 0.0};
};

class BilevelProblem {
 public:
  int num_blocks() const;
  bool has_inner() const { return inner_.has_value(); }
  const FccoProblem& inner() const { return *inner_; }

  int num_lower() const { return static_cast<int>(lowers_.size()); }
  const LowerProblem& lower(int lp) const {
    return lowers_[static_cast<std::size_t>(lp)];
  }
  std::span<const int> block_lowers(int block) const;

  // 0 when phi needs no batch (per-block gate); otherwise the size of the
  // phi reference set (pairs are indexed as i * n_neg + j).
  int phi_set_size(int block) const;
  PhiEval phi_eval(const ModelBundle& bundle, int block,
                   std::span<const double> lambdas,
                   std::span<const int> phi_batch) const;
  bool phi_trivial() const { return phi_kind_ == PhiKind::None; }

  double lower_grad(const ModelBundle& bundle, int lp, double lambda,
                    std::span<const int> batch) const;
  double lower_hess(const ModelBundle& bundle, int lp, double lambda,
                    std::span<const int> batch) const;
  Vec lower_cross(const ModelBundle& bundle, int lp, double lambda,
                  std::span<const int> batch) const;

  double lower_solve_exact(const ModelBundle& bundle, int lp) const;

  double eval_full(const ModelBundle& bundle) const;
  // Implicit-function hypergradient at the exact lambda and exact Hessians.
  Vec exact_hypergradient(const ModelBundle& bundle) const;

  const ObjectiveSpec& spec() const { return spec_; }

 private:
  friend BilevelProblem build_bilevel(const ObjectiveSpec&, const Dataset&,
                                      const std::vector<ScoreModelSpec>&);
  friend BilevelProblem as_bilevel(FccoProblem fcco);

  enum class PhiKind {
    None,        // phi = 1 (plain FCCO wrapped in the bilevel solver)
    TopkGate,    // gate(h_anchor - lambda_q)
    PaucOneWay,  // pair mean of gate(h- - l2) [gate(l1 - h-)] l(h- - h+)
    PaucTwoWay,  // pair mean of gate(h- - l2) gate(l1 - h+) l(h- - h+)
    RecallSet,   // mean over S+ of l(lambda - h+)
    PrecAtRSet,  // mean over S- of l(h- - lambda)
    PapPair,     // scaled pair mean of gate(h+-lP) gate(h--lN) l(h- - h+)
  };

  double block_score(const ModelBundle& bundle, int item) const;

  ObjectiveSpec spec_;
  std::shared_ptr<const Dataset> data_;
  std::optional<FccoProblem> inner_;
  std::vector<LowerProblem> lowers_;
  std::vector<std::vector<int>> block_lowers_;
  PhiKind phi_kind_ = PhiKind::None;
  std::vector<int> pos_items_;  // binary kinds
  std::vector<int> neg_items_;
  std::vector<int> gate_anchor_;  // TopkGate: per-block gated item
  int num_blocks_ = 1;
  double phi_scale_ = 1.0;  // pAp@K band normalization
};

BilevelProblem build_bilevel(const ObjectiveSpec& spec, const Dataset& data,
                             const std::vector<ScoreModelSpec>& models);

// Wraps an FCCO problem as a bilevel problem with phi = 1 and no lower level;
// the bilevel solver then coincides with the compositional one.
BilevelProblem as_bilevel(FccoProblem fcco);

// ---------------------------------------------------------------------------
// CVaR form of the one-way pAUC with FPR in (0, beta]:
//   F(w, s) = (1/n+) sum_i [ s_i + (1/beta) (1/n-) sum_j (l_ij - s_i)_+ ]
// Subgradients take the 0 element at kinks.
// ---------------------------------------------------------------------------

class CvarProblem {
 public:
  int num_blocks() const { return static_cast<int>(pos_.size()); }
  int neg_count() const { return static_cast<int>(neg_.size()); }
  double beta() const { return spec_.beta; }

  double pair_loss_value(const ModelBundle& bundle, int block, int neg_pos) const;
  // d/ds of the block term s + psi(w, s)/beta, over a batch of negatives
  double s_subgrad(const ModelBundle& bundle, int block, double s,
                   std::span<const int> batch) const;
  Vec w_subgrad(const ModelBundle& bundle, int block, double s,
                std::span<const int> batch) const;

  double eval_full(const ModelBundle& bundle) const;
  // Exact gradient of eval_full on tie-free instances (top-quantile aware).
  Vec full_gradient(const ModelBundle& bundle) const;

  const ObjectiveSpec& spec() const { return spec_; }

 private:
  friend CvarProblem build_cvar(const ObjectiveSpec&, const Dataset&,
                                const std::vector<ScoreModelSpec>&);
  ObjectiveSpec spec_;
  std::shared_ptr<const Dataset> data_;
  std::vector<int> pos_;
  std::vector<int> neg_;
};

CvarProblem build_cvar(const ObjectiveSpec& spec, const Dataset& data,
                       const std::vector<ScoreModelSpec>& models);

// ---------------------------------------------------------------------------

using Problem = std::variant<FccoProblem, MinMaxProblem, BilevelProblem,
                             CvarProblem>;

Problem build_problem(const ObjectiveSpec& spec, const Dataset& data,
                      const std::vector<ScoreModelSpec>& models);

// Number of encoder models the objective expects (2 for two-way GCL).
int required_models(ObjectiveKind kind);

}  // namespace xrisk
