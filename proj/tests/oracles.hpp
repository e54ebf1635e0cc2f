// Test-only oracles: finite differences and independent brute-force
// implementations the library is checked against.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "xrisk/common.hpp"
#include "xrisk/model.hpp"
#include "xrisk/rng.hpp"

namespace oracles {

using xrisk::Vec;

// central finite differences of a scalar function of a parameter vector
template <typename F>
Vec fd_gradient(const F& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Vec& got, const Vec& want) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    diff += (got[i] - want[i]) * (got[i] - want[i]);
    ref += want[i] * want[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-10);
}

// FD of a model-parameterized scalar objective
template <typename F>
Vec fd_model_gradient(const F& eval, const xrisk::ModelBundle& bundle,
                      double h = 1e-5) {
  xrisk::ModelBundle probe = bundle;
  Vec flat = probe.flat_params();
  return fd_gradient(
      [&](const Vec& params) {
        probe.set_flat_params(params);
        return eval(probe);
      },
      flat, h);
}

inline xrisk::ScoreModel random_model(const xrisk::ScoreModelSpec& spec,
                                      std::uint64_t seed, double scale = 0.7) {
  xrisk::ScoreModel m = xrisk::init_model(spec, seed);
  xrisk::Rng rng(xrisk::mix64(seed, 0x7e57ULL));
  for (auto& p : m.params) p = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

inline Vec random_vec(int n, xrisk::Rng& rng, double scale = 1.0) {
  Vec v(static_cast<std::size_t>(n));
  for (auto& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

// ----- independent metric implementations (plain double loops) -----

inline double auroc_brute(const Vec& pos, const Vec& neg) {
  double s = 0.0;
  for (double p : pos)
    for (double n : neg) {
      if (p > n) s += 1.0;
      else if (p == n) s += 0.5;
    }
  return s / (pos.size() * neg.size());
}

inline double ap_brute(const Vec& pos, const Vec& neg) {
  double total = 0.0;
  for (double pi : pos) {
    double tp = 0.0, all = 0.0;
    for (double pj : pos)
      if (pj >= pi) tp += 1.0;
    all = tp;
    for (double nj : neg)
      if (nj >= pi) all += 1.0;
    total += tp / all;
  }
  return total / pos.size();
}

// descending ranks with ties by input order, via repeated max scans
inline std::vector<int> order_desc_brute(const Vec& scores) {
  std::vector<int> order;
  std::vector<char> used(scores.size(), 0);
  for (std::size_t r = 0; r < scores.size(); ++r) {
    int best = -1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (used[i]) continue;
      if (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    used[static_cast<std::size_t>(best)] = 1;
    order.push_back(best);
  }
  return order;
}

inline double ndcg_brute(const Vec& scores, const std::vector<int>& rel, int k) {
  const auto order = order_desc_brute(scores);
  const int n = static_cast<int>(scores.size());
  const int kk = (k <= 0 || k > n) ? n : k;
  double dcg = 0.0;
  for (int r = 0; r < kk; ++r)
    dcg += (std::pow(2.0, rel[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]) - 1.0) /
           std::log2(r + 2.0);
  std::vector<int> sorted(rel);
  std::sort(sorted.begin(), sorted.end());
  std::reverse(sorted.begin(), sorted.end());
  double ideal = 0.0;
  for (int r = 0; r < kk; ++r)
    ideal += (std::pow(2.0, sorted[static_cast<std::size_t>(r)]) - 1.0) / std::log2(r + 2.0);
  return dcg / ideal;
}

inline double kth_largest_brute(Vec v, int k) {
  std::sort(v.begin(), v.end());
  std::reverse(v.begin(), v.end());
  return v[static_cast<std::size_t>(k - 1)];
}

// 1-D minimization of (k+eps) lambda + sum (s_i - lambda)_+ over breakpoints
inline double lemma1_argmin_brute(const Vec& s, double k, double eps) {
  auto value = [&](double lam) {
    double v = (k + eps) * lam;
    for (double si : s)
      if (si > lam) v += si - lam;
    return v;
  };
  double best_lam = s[0];
  double best = value(s[0]);
  for (double cand : s) {
    const double v = value(cand);
    if (v < best - 1e-15) {
      best = v;
      best_lam = cand;
    }
  }
  return best_lam;
}

inline double cvar_value_brute(const Vec& losses, double beta) {
  // scan breakpoints plus a coarse grid as a safety net
  auto value = [&](double s) {
    double v = s;
    for (double l : losses)
      if (l > s) v += (l - s) / (beta * losses.size());
    return v;
  };
  double best = value(losses[0]);
  for (double l : losses) best = std::min(best, value(l));
  best = std::min(best, value(0.0));
  return best;
}

}  // namespace oracles
