#pragma once

#include <map>
#include <string>
#include <vector>

#include "xrisk/common.hpp"
#include "xrisk/surrogate.hpp"

namespace xrisk {
namespace metrics {

using MetricReport = std::map<std::string, double>;

// Empirical AUROC; ties between a positive and a negative count 1/2.
double auroc_exact(const Vec& pos_scores, const Vec& neg_scores);

// Average precision with >= comparisons (the self term counts).
double average_precision(const Vec& pos_scores, const Vec& neg_scores);

enum class PaucNorm { Paper, Band };  // 1/(n+ n-) vs 1/#selected pairs

// Indicator partial AUC. One-way selects negatives with descending rank in
// (k1, k2] where k1 = ceil(n- * alpha), k2 = floor(n- * beta); two-way pairs
// the k1 lowest positives (k1 = floor(n+ * alpha)) with the k2 top negatives
// (k2 = floor(n- * beta)). Hard selection breaks ties by input order.
double pauc_exact(const Vec& pos_scores, const Vec& neg_scores, double alpha,
                  double beta, bool two_way, PaucNorm norm = PaucNorm::Paper);

// Same selection, surrogate-valued sum l(s_neg - s_pos).
double pauc_surrogate_hard(const Vec& pos_scores, const Vec& neg_scores,
                           double alpha, double beta, bool two_way,
                           const Surrogate& surrogate,
                           PaucNorm norm = PaucNorm::Paper);

// NDCG with gains 2^y - 1 and discounts 1/log2(rank+1); ranks from a stable
// descending sort of the scores. k <= 0 means the full list.
double ndcg_exact(const Vec& scores, const std::vector<int>& relevance,
                  int top_k = 0);

struct QueryScores {
  Vec scores;
  std::vector<int> relevance;
};

// Mean over queries of the rank-ratio average precision
//   (1/n_q^+) sum_{i relevant} r(i, relevant items) / r(i, all items)
// with r counting >= comparisons (self included).
double map_exact(const std::vector<QueryScores>& queries);

struct PrecRec {
  double precision = 0.0;
  double recall = 0.0;
};

PrecRec precision_recall_at_k(const Vec& scores, const std::vector<int>& labels,
                              int k);

// Precision at the recall level K/n+: K / (K + #negatives strictly above the
// K-th largest positive score).
double precision_at_recall(const Vec& scores, const std::vector<int>& labels,
                           int k);

// Mean of I(s+ > s-) over the top-min(K,n+) positives x top-min(K,n-)
// negatives.
double pap_at_k_exact(const Vec& scores, const std::vector<int>& labels, int k);

// Exact k-th largest element (selection, not full sort).
double kth_largest(const Vec& values, int k);

// Unique root of
//   (K + eps)/|S| + tau2*lambda - (1/|S|) sum sigmoid((s_i - lambda)/tau1) = 0
// found by safeguarded bisection + Newton to |grad| <= 1e-12.
double lower_level_solve_exact(const Vec& scores, double k_sel, double eps_sel,
                               double tau1, double tau2);

struct CvarResult {
  double s_star = 0.0;
  double value = 0.0;
};

// Exact minimizer over s of s + (1/(beta n)) sum (l_j - s)_+ by scanning the
// breakpoints; with beta*n integral the value is the mean of the top beta*n
// losses.
CvarResult cvar_exact(const Vec& losses, double beta);

enum class ContrastiveKind {
  GclOneWay,
  GclTwoWay,
  SupconRatio,
  SupconLogRatio,
  SupconPerPair,
};

// One contrastive term: an anchor embedding, its positive, and the reference
// embeddings its denominator sums over.
struct ContrastiveTerm {
  Vec anchor;
  Vec positive;                 // unused by the supcon kinds
  std::vector<Vec> references;  // S_i (gcl) or all of S (supcon)
  std::vector<char> same_class; // supcon kinds: marks S(x) within references
};

double contrastive_loss_exact(const std::vector<ContrastiveTerm>& terms,
                              double tau, double eps, ContrastiveKind kind);

}  // namespace metrics
}  // namespace xrisk
