#include "xrisk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace xrisk {
namespace metrics {

namespace {

// descending-score order, ties kept in input order
std::vector<int> rank_order_desc(const Vec& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return idx;
}

std::vector<int> rank_order_asc(const Vec& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
  });
  return idx;
}

// rank-count boundaries with a small guard against 0.1*950-style roundoff
long ceil_count(double x) { return static_cast<long>(std::ceil(x - 1e-9)); }
long floor_count(double x) { return static_cast<long>(std::floor(x + 1e-9)); }

double log_sum_exp(const Vec& vals, double extra_log_term) {
  // ln(e^{extra_log_term} + sum e^{v}); extra_log_term = -inf drops the term
  double m = extra_log_term;
  for (double v : vals) m = std::max(m, v);
  if (!std::isfinite(m)) throw std::invalid_argument("log_sum_exp: empty input");
  double s = 0.0;
  if (std::isfinite(extra_log_term)) s += std::exp(extra_log_term - m);
  for (double v : vals) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

double auroc_exact(const Vec& pos, const Vec& neg) {
  if (pos.empty() || neg.empty())
    throw std::invalid_argument("auroc_exact: both classes must be nonempty");
  double s = 0.0;
  for (double p : pos)
    for (double n : neg) s += (p > n) ? 1.0 : (p == n ? 0.5 : 0.0);
  return s / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double average_precision(const Vec& pos, const Vec& neg) {
  if (pos.empty())
    throw std::invalid_argument("average_precision: no positive examples");
  double ap = 0.0;
  for (double pi : pos) {
    double num = 0.0, den = 0.0;
    for (double pj : pos) num += (pj >= pi) ? 1.0 : 0.0;
    den = num;
    for (double nj : neg) den += (nj >= pi) ? 1.0 : 0.0;
    ap += num / den;
  }
  return ap / static_cast<double>(pos.size());
}

namespace {

struct PaucSelection {
  std::vector<int> pos;  // selected positive indices
  std::vector<int> neg;  // selected negative indices
};

PaucSelection pauc_select(const Vec& pos, const Vec& neg, double alpha,
                          double beta, bool two_way) {
  if (pos.empty() || neg.empty())
    throw std::invalid_argument("pauc: both classes must be nonempty");
  if (!(alpha >= 0.0 && alpha < beta && beta <= 1.0) && !two_way)
    throw std::invalid_argument("pauc: require 0 <= alpha < beta <= 1");
  if (two_way && !(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta <= 1.0))
    throw std::invalid_argument("pauc: two-way requires alpha, beta in (0, 1]");
  const long n_pos = static_cast<long>(pos.size());
  const long n_neg = static_cast<long>(neg.size());
  PaucSelection sel;
  if (!two_way) {
    const long k1 = ceil_count(alpha * static_cast<double>(n_neg));
    const long k2 = floor_count(beta * static_cast<double>(n_neg));
    if (k1 >= k2) throw std::invalid_argument("pauc: empty FPR band (k1 >= k2)");
    const auto order = rank_order_desc(neg);
    for (long r = k1; r < k2; ++r) sel.neg.push_back(order[static_cast<std::size_t>(r)]);
    sel.pos.resize(pos.size());
    std::iota(sel.pos.begin(), sel.pos.end(), 0);
  } else {
    const long k1 = floor_count(alpha * static_cast<double>(n_pos));
    const long k2 = floor_count(beta * static_cast<double>(n_neg));
    if (k1 < 1 || k2 < 1)
      throw std::invalid_argument("pauc: two-way selection is empty");
    const auto pos_asc = rank_order_asc(pos);
    const auto neg_desc = rank_order_desc(neg);
    for (long r = 0; r < k1; ++r) sel.pos.push_back(pos_asc[static_cast<std::size_t>(r)]);
    for (long r = 0; r < k2; ++r) sel.neg.push_back(neg_desc[static_cast<std::size_t>(r)]);
  }
  return sel;
}

}  // namespace

double pauc_exact(const Vec& pos, const Vec& neg, double alpha, double beta,
                  bool two_way, PaucNorm norm) {
  const auto sel = pauc_select(pos, neg, alpha, beta, two_way);
  double s = 0.0;
  for (int i : sel.pos)
    for (int j : sel.neg)
      s += (pos[static_cast<std::size_t>(i)] > neg[static_cast<std::size_t>(j)]) ? 1.0 : 0.0;
  const double denom =
      norm == PaucNorm::Paper
          ? static_cast<double>(pos.size()) * static_cast<double>(neg.size())
          : static_cast<double>(sel.pos.size()) * static_cast<double>(sel.neg.size());
  return s / denom;
}

double pauc_surrogate_hard(const Vec& pos, const Vec& neg, double alpha,
                           double beta, bool two_way, const Surrogate& surrogate,
                           PaucNorm norm) {
  const auto sel = pauc_select(pos, neg, alpha, beta, two_way);
  double s = 0.0;
  for (int i : sel.pos)
    for (int j : sel.neg)
      s += pair_loss(surrogate, neg[static_cast<std::size_t>(j)] -
                                    pos[static_cast<std::size_t>(i)])
               .value;
  const double denom =
      norm == PaucNorm::Paper
          ? static_cast<double>(pos.size()) * static_cast<double>(neg.size())
          : static_cast<double>(sel.pos.size()) * static_cast<double>(sel.neg.size());
  return s / denom;
}

double ndcg_exact(const Vec& scores, const std::vector<int>& relevance,
                  int top_k) {
  if (scores.size() != relevance.size())
    throw std::invalid_argument("ndcg_exact: shape mismatch");
  const int n = static_cast<int>(scores.size());
  bool any_rel = false;
  for (int r : relevance) {
    if (r < 0) throw std::invalid_argument("ndcg_exact: negative relevance");
    any_rel = any_rel || (r > 0);
  }
  if (!any_rel) throw std::invalid_argument("ndcg_exact: all-zero relevance");
  const int k = (top_k <= 0 || top_k > n) ? n : top_k;

  const auto order = rank_order_desc(scores);
  double dcg = 0.0;
  for (int r = 0; r < k; ++r) {
    const int item = order[static_cast<std::size_t>(r)];
    const double gain = std::pow(2.0, relevance[static_cast<std::size_t>(item)]) - 1.0;
    dcg += gain / std::log2(static_cast<double>(r) + 2.0);
  }
  std::vector<int> rel_sorted(relevance);
  std::sort(rel_sorted.begin(), rel_sorted.end(), std::greater<int>());
  double ideal = 0.0;
  for (int r = 0; r < k; ++r) {
    const double gain = std::pow(2.0, rel_sorted[static_cast<std::size_t>(r)]) - 1.0;
    ideal += gain / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / ideal;
}

double map_exact(const std::vector<QueryScores>& queries) {
  if (queries.empty()) throw std::invalid_argument("map_exact: no queries");
  double total = 0.0;
  for (const auto& q : queries) {
    const int n = static_cast<int>(q.scores.size());
    double ap = 0.0;
    int n_rel = 0;
    for (int i = 0; i < n; ++i) {
      if (q.relevance[static_cast<std::size_t>(i)] <= 0) continue;
      ++n_rel;
      double rank_rel = 0.0, rank_all = 0.0;
      for (int j = 0; j < n; ++j) {
        const bool geq = q.scores[static_cast<std::size_t>(j)] >=
                         q.scores[static_cast<std::size_t>(i)];
        if (!geq) continue;
        rank_all += 1.0;
        if (q.relevance[static_cast<std::size_t>(j)] > 0) rank_rel += 1.0;
      }
      ap += rank_rel / rank_all;
    }
    if (n_rel == 0) throw std::invalid_argument("map_exact: query with no relevant item");
    total += ap / n_rel;
  }
  return total / static_cast<double>(queries.size());
}

PrecRec precision_recall_at_k(const Vec& scores, const std::vector<int>& labels,
                              int k) {
  const int n = static_cast<int>(scores.size());
  if (k < 1 || k > n) throw std::invalid_argument("precision_recall_at_k: K out of range");
  int n_pos = 0;
  for (int y : labels) n_pos += (y > 0);
  if (n_pos == 0) throw std::invalid_argument("precision_recall_at_k: no positives");
  const auto order = rank_order_desc(scores);
  int hits = 0;
  for (int r = 0; r < k; ++r)
    hits += (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] > 0);
  return {static_cast<double>(hits) / k, static_cast<double>(hits) / n_pos};
}

double precision_at_recall(const Vec& scores, const std::vector<int>& labels,
                           int k) {
  Vec pos;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i] > 0) pos.push_back(scores[i]);
  if (k < 1 || k > static_cast<int>(pos.size()))
    throw std::invalid_argument("precision_at_recall: K out of range");
  const double threshold = kth_largest(pos, k);
  long fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i] <= 0 && scores[i] > threshold) ++fp;
  return static_cast<double>(k) / (static_cast<double>(k) + static_cast<double>(fp));
}

double pap_at_k_exact(const Vec& scores, const std::vector<int>& labels, int k) {
  if (k < 1) throw std::invalid_argument("pap_at_k_exact: K out of range");
  Vec pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (labels[i] > 0 ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty())
    throw std::invalid_argument("pap_at_k_exact: both classes must be nonempty");
  const int k1 = std::min<int>(k, static_cast<int>(pos.size()));
  const int k2 = std::min<int>(k, static_cast<int>(neg.size()));
  const auto pos_order = rank_order_desc(pos);
  const auto neg_order = rank_order_desc(neg);
  double s = 0.0;
  for (int i = 0; i < k1; ++i)
    for (int j = 0; j < k2; ++j)
      s += (pos[static_cast<std::size_t>(pos_order[static_cast<std::size_t>(i)])] >
            neg[static_cast<std::size_t>(neg_order[static_cast<std::size_t>(j)])])
               ? 1.0
               : 0.0;
  return s / (static_cast<double>(k1) * static_cast<double>(k2));
}

double kth_largest(const Vec& values, int k) {
  if (k < 1 || k > static_cast<int>(values.size()))
    throw std::invalid_argument("kth_largest: k out of range");
  Vec copy(values);
  std::nth_element(copy.begin(), copy.begin() + (k - 1), copy.end(),
                   std::greater<double>());
  return copy[static_cast<std::size_t>(k - 1)];
}

double lower_level_solve_exact(const Vec& scores, double k_sel, double eps_sel,
                               double tau1, double tau2) {
  if (scores.empty()) throw std::invalid_argument("lower_level_solve_exact: empty set");
  if (tau1 <= 0.0 || tau2 <= 0.0)
    throw std::invalid_argument("lower_level_solve_exact: tau1, tau2 must be positive");
  const double n = static_cast<double>(scores.size());
  const double a = (k_sel + eps_sel) / n;
  auto grad = [&](double lam) {
    double s = 0.0;
    for (double h : scores) {
      const double u = (h - lam) / tau1;
      s += (u >= 0.0) ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
    }
    return a + tau2 * lam - s / n;
  };
  auto hess = [&](double lam) {
    double s = 0.0;
    for (double h : scores) {
      const double u = (h - lam) / tau1;
      const double sg = (u >= 0.0) ? 1.0 / (1.0 + std::exp(-u))
                                   : std::exp(u) / (1.0 + std::exp(u));
      s += sg * (1.0 - sg);
    }
    return tau2 + s / (n * tau1);
  };

  double lo = *std::min_element(scores.begin(), scores.end()) - 1.0;
  double hi = *std::max_element(scores.begin(), scores.end()) + 1.0;
  double step = 1.0;
  while (grad(lo) > 0.0) { lo -= step; step *= 2.0; }
  step = 1.0;
  while (grad(hi) < 0.0) { hi += step; step *= 2.0; }

  double lam = 0.5 * (lo + hi);
  for (int it = 0; it < 500; ++it) {
    const double g = grad(lam);
    if (std::abs(g) <= 1e-12) return lam;
    if (g > 0.0) hi = lam; else lo = lam;
    double next = lam - g / hess(lam);  // Newton, bisection safeguard
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    lam = next;
  }
  return lam;
}

CvarResult cvar_exact(const Vec& losses, double beta) {
  if (losses.empty()) throw std::invalid_argument("cvar_exact: empty losses");
  if (!(beta > 0.0 && beta <= 1.0))
    throw std::invalid_argument("cvar_exact: beta must be in (0, 1]");
  const double n = static_cast<double>(losses.size());
  const int k = static_cast<int>(ceil_count(beta * n));
  const double s_star = kth_largest(losses, k);
  double value = s_star;
  for (double l : losses)
    if (l > s_star) value += (l - s_star) / (beta * n);
  return {s_star, value};
}

double contrastive_loss_exact(const std::vector<ContrastiveTerm>& terms,
                              double tau, double eps, ContrastiveKind kind) {
  if (terms.empty()) throw std::invalid_argument("contrastive_loss_exact: no terms");
  double total = 0.0;
  for (const auto& t : terms) {
    switch (kind) {
      case ContrastiveKind::GclOneWay:
      case ContrastiveKind::GclTwoWay: {
        if (t.references.empty() || t.positive.size() != t.anchor.size())
          throw std::invalid_argument("contrastive_loss_exact: shape mismatch");
        Vec sims;
        sims.reserve(t.references.size());
        for (const auto& r : t.references) {
          if (r.size() != t.anchor.size())
            throw std::invalid_argument("contrastive_loss_exact: shape mismatch");
          sims.push_back(dot(t.anchor, r) / tau);
        }
        const double extra =
            (kind == ContrastiveKind::GclOneWay && eps > 0.0)
                ? std::log(eps)
                : -std::numeric_limits<double>::infinity();
        total += -dot(t.anchor, t.positive) + tau * log_sum_exp(sims, extra);
        break;
      }
      case ContrastiveKind::SupconRatio:
      case ContrastiveKind::SupconLogRatio:
      case ContrastiveKind::SupconPerPair: {
        if (t.references.size() != t.same_class.size())
          throw std::invalid_argument("contrastive_loss_exact: shape mismatch");
        double num = 0.0, den = 0.0, same_d2 = 0.0;
        int n_same = 0;
        for (std::size_t j = 0; j < t.references.size(); ++j) {
          const auto& r = t.references[j];
          if (r.size() != t.anchor.size())
            throw std::invalid_argument("contrastive_loss_exact: shape mismatch");
          double d2 = 0.0;
          for (std::size_t c = 0; c < r.size(); ++c) {
            const double d = t.anchor[c] - r[c];
            d2 += d * d;
          }
          const double e = std::exp(-d2);
          den += e;
          if (t.same_class[j]) {
            num += e;
            same_d2 += d2;
            ++n_same;
          }
        }
        if (kind == ContrastiveKind::SupconRatio)
          total += -num / den;
        else if (kind == ContrastiveKind::SupconLogRatio)
          total += -std::log(num / den);
        else
          total += same_d2 + n_same * std::log(den);
        break;
      }
    }
  }
  return total / static_cast<double>(terms.size());
}

}  // namespace metrics
}  // namespace xrisk
