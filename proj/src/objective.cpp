#include "xrisk/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "xrisk/metrics.hpp"

namespace xrisk {

namespace {

constexpr double kExpClamp = 700.0;  // exp() overflow guard

double safe_exp(double z) { return std::exp(std::clamp(z, -kExpClamp, kExpClamp)); }

struct NamedKind {
  ObjectiveKind kind;
  const char* name;
};

constexpr NamedKind kKindNames[] = {
    {ObjectiveKind::AurocPairwise, "auroc_pairwise"},
    {ObjectiveKind::Ap, "ap"},
    {ObjectiveKind::Map, "map"},
    {ObjectiveKind::Ndcg, "ndcg"},
    {ObjectiveKind::Listnet, "listnet"},
    {ObjectiveKind::PnormPush, "pnorm_push"},
    {ObjectiveKind::PaucKl, "pauc_kl"},
    {ObjectiveKind::RecallKFcco, "recall_k_fcco"},
    {ObjectiveKind::GclOneWay, "gcl_oneway"},
    {ObjectiveKind::GclTwoWay, "gcl_twoway"},
    {ObjectiveKind::SupconRatio, "supcon_ratio"},
    {ObjectiveKind::SupconLogRatio, "supcon_log_ratio"},
    {ObjectiveKind::SupconPerPair, "supcon_per_pair"},
    {ObjectiveKind::AurocMinMax, "auroc_minmax"},
    {ObjectiveKind::PaucBilevelOneWay, "pauc_bilevel_oneway"},
    {ObjectiveKind::PaucBilevelTwoWay, "pauc_bilevel_twoway"},
    {ObjectiveKind::TopkNdcg, "topk_ndcg"},
    {ObjectiveKind::TopkMap, "topk_map"},
    {ObjectiveKind::TopPush, "top_push"},
    {ObjectiveKind::RecallKBilevel, "recall_k_bilevel"},
    {ObjectiveKind::PrecAtRecall, "prec_at_recall"},
    {ObjectiveKind::PapK, "pap_k"},
    {ObjectiveKind::PaucCvarOneWay, "pauc_cvar_oneway"},
};

bool is_fcco_kind(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::AurocPairwise:
    case ObjectiveKind::Ap:
    case ObjectiveKind::Map:
    case ObjectiveKind::Ndcg:
    case ObjectiveKind::Listnet:
    case ObjectiveKind::PnormPush:
    case ObjectiveKind::PaucKl:
    case ObjectiveKind::RecallKFcco:
    case ObjectiveKind::GclOneWay:
    case ObjectiveKind::GclTwoWay:
    case ObjectiveKind::SupconRatio:
    case ObjectiveKind::SupconLogRatio:
    case ObjectiveKind::SupconPerPair:
      return true;
    default:
      return false;
  }
}

bool is_bilevel_kind(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::PaucBilevelOneWay:
    case ObjectiveKind::PaucBilevelTwoWay:
    case ObjectiveKind::TopkNdcg:
    case ObjectiveKind::TopkMap:
    case ObjectiveKind::TopPush:
    case ObjectiveKind::RecallKBilevel:
    case ObjectiveKind::PrecAtRecall:
    case ObjectiveKind::PapK:
      return true;
    default:
      return false;
  }
}

long ceil_count(double x) { return static_cast<long>(std::ceil(x - 1e-9)); }
long floor_count(double x) { return static_cast<long>(std::floor(x + 1e-9)); }

// grad[slice(model_idx)] += coeff * vjp(model, x, upstream)
void add_vjp(Vec& grad, const ModelBundle& bundle, int model_idx,
             std::span<const double> x, std::span<const double> upstream,
             double coeff) {
  if (coeff == 0.0) return;
  const Vec g = vjp(bundle.models[static_cast<std::size_t>(model_idx)], x, upstream);
  const int off = bundle.slice_offset(model_idx);
  for (std::size_t i = 0; i < g.size(); ++i)
    grad[static_cast<std::size_t>(off) + i] += coeff * g[i];
}

const double kOne[1] = {1.0};

}  // namespace

const char* objective_kind_name(ObjectiveKind k) {
  for (const auto& nk : kKindNames)
    if (nk.kind == k) return nk.name;
  return "?";
}

ObjectiveKind objective_kind_from_name(const std::string& name) {
  for (const auto& nk : kKindNames)
    if (name == nk.name) return nk.kind;
  throw std::invalid_argument("unknown objective kind: " + name);
}

void ObjectiveSpec::validate() const {
  surrogate.validate();
  if (gate_tau <= 0.0) throw std::invalid_argument("objective.gate.tau_phi must be positive");
  if (k < 1) throw std::invalid_argument("objective.K must be >= 1");
  if (tasks < 1) throw std::invalid_argument("objective.tasks must be >= 1");
  if (tau <= 0.0) throw std::invalid_argument("objective.tau must be positive");
  if (tau1 <= 0.0) throw std::invalid_argument("objective.tau1 must be positive");
  if (tau2 <= 0.0) throw std::invalid_argument("objective.tau2 must be positive");
  if (!(eps_sel > 0.0 && eps_sel < 1.0))
    throw std::invalid_argument("objective.eps_sel must be in (0, 1)");
  if (eps_gcl < 0.0) throw std::invalid_argument("objective.eps_gcl must be >= 0");
  if (lambda_dro <= 0.0) throw std::invalid_argument("objective.lambda_dro must be positive");
  if (margin_c <= 0.0) throw std::invalid_argument("objective.c must be positive");
  if (p < 1.0) throw std::invalid_argument("objective.p must be >= 1");
  switch (kind) {
    case ObjectiveKind::PaucBilevelOneWay:
      if (!(alpha >= 0.0 && alpha < beta && beta <= 1.0))
        throw std::invalid_argument("objective.alpha/beta must satisfy 0 <= alpha < beta <= 1");
      break;
    case ObjectiveKind::PaucBilevelTwoWay:
      if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("objective.alpha must be in (0, 1] for the two-way band");
      if (!(beta > 0.0 && beta <= 1.0))
        throw std::invalid_argument("objective.beta must be in (0, 1]");
      break;
    case ObjectiveKind::PaucCvarOneWay:
      if (!(beta > 0.0 && beta <= 1.0))
        throw std::invalid_argument("objective.beta must be in (0, 1]");
      if (!surrogate.non_decreasing())
        throw std::invalid_argument(
            "objective.surrogate: the CVaR transform needs a non-decreasing "
            "loss; the square loss is not");
      break;
    default:
      break;
  }
}

ObjectiveSpec with_defaults(ObjectiveSpec spec) {
  if (!spec.surrogate_set) {
    switch (spec.kind) {
      case ObjectiveKind::Ap:
      case ObjectiveKind::Map:
      case ObjectiveKind::TopkMap:
      case ObjectiveKind::RecallKFcco:
        spec.surrogate = {SurrogateKind::Sigmoid, 0.1};
        break;
      case ObjectiveKind::Ndcg:
      case ObjectiveKind::TopkNdcg:
        spec.surrogate = {SurrogateKind::Logistic, 1.0};
        break;
      default:
        spec.surrogate = {SurrogateKind::SquaredHinge, 1.0};
        break;
    }
    spec.surrogate_outer = spec.kind == ObjectiveKind::RecallKFcco
                               ? Surrogate{SurrogateKind::Sigmoid, 0.1}
                               : spec.surrogate;
  }
  return spec;
}

int required_models(ObjectiveKind kind) {
  return kind == ObjectiveKind::GclTwoWay ? 2 : 1;
}

// ---------------------------------------------------------------------------
// FCCO
// ---------------------------------------------------------------------------

namespace {

struct BinarySplit {
  std::vector<int> pos;
  std::vector<int> neg;
};

BinarySplit split_binary(const Dataset& data, const char* who) {
  if (data.kind != DatasetKind::Binary)
    throw std::invalid_argument(std::string(who) + ": needs a binary dataset");
  BinarySplit s;
  for (std::size_t i = 0; i < data.binary.y.size(); ++i)
    (data.binary.y[i] > 0 ? s.pos : s.neg).push_back(static_cast<int>(i));
  if (s.pos.empty() || s.neg.empty())
    throw std::invalid_argument(std::string(who) +
                                ": dataset needs at least one example of each class");
  return s;
}

double ideal_dcg(const std::vector<int>& rel, int top_k) {
  std::vector<int> sorted(rel);
  std::sort(sorted.begin(), sorted.end(), std::greater<int>());
  const int k = (top_k <= 0 || top_k > static_cast<int>(sorted.size()))
                    ? static_cast<int>(sorted.size())
                    : top_k;
  double z = 0.0;
  for (int r = 0; r < k; ++r)
    z += (std::pow(2.0, sorted[static_cast<std::size_t>(r)]) - 1.0) /
         std::log2(static_cast<double>(r) + 2.0);
  return z;
}

constexpr int kViewsPerSample = 2;

}  // namespace

FccoProblem build_fcco(const ObjectiveSpec& raw_spec, const Dataset& data,
                       const std::vector<ScoreModelSpec>& models) {
  ObjectiveSpec spec = with_defaults(raw_spec);
  spec.validate();
  const ObjectiveKind kind = spec.kind;
  if (!is_fcco_kind(kind) && kind != ObjectiveKind::TopkNdcg &&
      kind != ObjectiveKind::TopkMap)
    throw std::invalid_argument("build_fcco: not a compositional objective kind");
  if (static_cast<int>(models.size()) != required_models(kind))
    throw std::invalid_argument("build_fcco: objective needs " +
                                std::to_string(required_models(kind)) + " model(s)");

  FccoProblem p;
  p.spec_ = spec;
  p.data_ = std::make_shared<Dataset>(data);
  p.model_count_ = static_cast<int>(models.size());

  switch (kind) {
    case ObjectiveKind::AurocPairwise:
    case ObjectiveKind::PnormPush:
    case ObjectiveKind::PaucKl: {
      const auto s = split_binary(data, "build_fcco");
      for (int i : s.pos) {
        FccoProblem::Block b;
        b.anchor = i;
        b.ref = s.neg;
        p.blocks_.push_back(std::move(b));
      }
      p.inner_dim_ = 1;
      break;
    }
    case ObjectiveKind::Ap: {
      const auto s = split_binary(data, "build_fcco");
      const int n = static_cast<int>(data.binary.x.size());
      const int n_pos = static_cast<int>(s.pos.size());
      for (int i : s.pos) {
        FccoProblem::Block b;
        b.anchor = i;
        b.ref.resize(static_cast<std::size_t>(n));
        std::iota(b.ref.begin(), b.ref.end(), 0);
        b.sel.resize(static_cast<std::size_t>(n), 0);
        for (int j = 0; j < n; ++j)
          b.sel[static_cast<std::size_t>(j)] = data.binary.y[static_cast<std::size_t>(j)] > 0;
        b.sel_scale = static_cast<double>(n) / n_pos;
        b.aux0 = n_pos;
        b.aux1 = n;
        p.blocks_.push_back(std::move(b));
      }
      p.inner_dim_ = 2;
      break;
    }
    case ObjectiveKind::RecallKFcco: {
      const auto s = split_binary(data, "build_fcco");
      const int n = static_cast<int>(data.binary.x.size());
      if (spec.k > n) throw std::invalid_argument("objective.K exceeds the dataset size");
      for (int i : s.pos) {
        FccoProblem::Block b;
        b.anchor = i;
        for (int j = 0; j < n; ++j)
          if (j != i) b.ref.push_back(j);
        b.aux1 = static_cast<double>(n - 1);
        p.blocks_.push_back(std::move(b));
      }
      p.inner_dim_ = 1;
      break;
    }
    case ObjectiveKind::Map:
    case ObjectiveKind::TopkMap:
    case ObjectiveKind::Ndcg:
    case ObjectiveKind::TopkNdcg:
    case ObjectiveKind::Listnet: {
      if (data.kind != DatasetKind::Ranking)
        throw std::invalid_argument("build_fcco: needs a ranking dataset");
      const auto& queries = data.ranking.queries;
      const int n_queries = static_cast<int>(queries.size());
      // count blocks first so per-block weights can fold 1/m away
      int m = 0;
      for (const auto& q : queries) {
        if (q.relevant_count() == 0)
          throw std::invalid_argument("build_fcco: query with zero relevant items");
        m += q.relevant_count();
      }
      const bool topk = kind == ObjectiveKind::TopkNdcg || kind == ObjectiveKind::TopkMap;
      for (int qi = 0; qi < n_queries; ++qi) {
        const auto& q = queries[static_cast<std::size_t>(qi)];
        const int nq = static_cast<int>(q.x.size());
        if (topk && spec.k > nq)
          throw std::invalid_argument("objective.K exceeds a query's item count");
        double rel_sum = 0.0;
        for (int r : q.rel) rel_sum += r;
        const double zq =
            (kind == ObjectiveKind::Ndcg)       ? ideal_dcg(q.rel, 0)
            : (kind == ObjectiveKind::TopkNdcg) ? ideal_dcg(q.rel, spec.k)
                                                : 1.0;
        const int n_rel = q.relevant_count();
        for (int i = 0; i < nq; ++i) {
          if (q.rel[static_cast<std::size_t>(i)] <= 0) continue;
          FccoProblem::Block b;
          b.anchor = i;
          b.group = qi;
          if (kind == ObjectiveKind::Listnet) {
            for (int j = 0; j < nq; ++j) b.ref.push_back(j);
            b.aux0 = static_cast<double>(q.rel[static_cast<std::size_t>(i)]) / rel_sum;
            b.aux1 = static_cast<double>(nq);
            b.weight = static_cast<double>(m) / n_queries;
          } else {
            for (int j = 0; j < nq; ++j)
              if (j != i) b.ref.push_back(j);
            b.aux1 = static_cast<double>(nq - 1);
            if (kind == ObjectiveKind::Ndcg || kind == ObjectiveKind::TopkNdcg) {
              b.aux0 = std::pow(2.0, q.rel[static_cast<std::size_t>(i)]) - 1.0;
              b.weight = static_cast<double>(m) / (n_queries * zq);
            } else {  // map variants
              int n_rel_other = 0;
              b.sel.resize(b.ref.size(), 0);
              for (std::size_t rpos = 0; rpos < b.ref.size(); ++rpos) {
                const bool rel = q.rel[static_cast<std::size_t>(b.ref[rpos])] > 0;
                b.sel[rpos] = rel;
                n_rel_other += rel;
              }
              b.aux0 = static_cast<double>(n_rel_other);
              b.sel_scale = n_rel_other > 0
                                ? static_cast<double>(b.ref.size()) / n_rel_other
                                : 0.0;
              b.weight = static_cast<double>(m) / (n_queries * n_rel);
            }
          }
          p.blocks_.push_back(std::move(b));
        }
      }
      p.inner_dim_ =
          (kind == ObjectiveKind::Map || kind == ObjectiveKind::TopkMap) ? 2 : 1;
      break;
    }
    case ObjectiveKind::GclOneWay: {
      if (data.kind != DatasetKind::ContrastivePool)
        throw std::invalid_argument("build_fcco: needs a contrastive pool");
      const int n = static_cast<int>(data.pool.x.size());
      if (n < 2) throw std::invalid_argument("build_fcco: contrastive pool needs >= 2 samples");
      for (int i = 0; i < n; ++i)
        for (int v = 0; v < kViewsPerSample; ++v)
          p.views_.push_back(augment(data.pool, i, v, data.pool.aug));
      for (int i = 0; i < n; ++i) {
        for (int a = 0; a < kViewsPerSample; ++a) {
          FccoProblem::Block b;
          b.anchor = i;
          b.anchor_view = i * kViewsPerSample + a;
          b.positive_view = i * kViewsPerSample + (1 - a);
          b.group = 0;
          for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            for (int v = 0; v < kViewsPerSample; ++v)
              b.ref.push_back(j * kViewsPerSample + v);
          }
          p.blocks_.push_back(std::move(b));
        }
      }
      p.inner_dim_ = 1;
      break;
    }
    case ObjectiveKind::GclTwoWay: {
      if (data.kind != DatasetKind::ContrastivePool)
        throw std::invalid_argument("build_fcco: needs a contrastive pool");
      const int n = static_cast<int>(data.pool.x.size());
      if (n < 2) throw std::invalid_argument("build_fcco: contrastive pool needs >= 2 samples");
      // view v = 0 plays the image role (encoder 0), v = 1 the text role
      for (int i = 0; i < n; ++i)
        for (int v = 0; v < kViewsPerSample; ++v)
          p.views_.push_back(augment(data.pool, i, v, data.pool.aug));
      for (int side = 0; side < 2; ++side) {
        for (int i = 0; i < n; ++i) {
          FccoProblem::Block b;
          b.anchor = i;
          b.group = side;  // anchor encoder
          b.anchor_view = i * kViewsPerSample + side;
          b.positive_view = i * kViewsPerSample + (1 - side);
          for (int j = 0; j < n; ++j) {
            if (!spec.include_positive && j == i) continue;
            b.ref.push_back(j * kViewsPerSample + (1 - side));
          }
          b.weight = 2.0;
          p.blocks_.push_back(std::move(b));
        }
      }
      p.inner_dim_ = 1;
      break;
    }
    case ObjectiveKind::SupconRatio:
    case ObjectiveKind::SupconLogRatio:
    case ObjectiveKind::SupconPerPair: {
      if (data.kind != DatasetKind::ContrastivePool)
        throw std::invalid_argument("build_fcco: needs a contrastive pool");
      const int n = static_cast<int>(data.pool.x.size());
      if (n < 2) throw std::invalid_argument("build_fcco: contrastive pool needs >= 2 samples");
      for (int lbl : data.pool.label)
        if (lbl < 0)
          throw std::invalid_argument("build_fcco: supervised contrastive needs class labels");
      for (int i = 0; i < n; ++i) {
        FccoProblem::Block b;
        b.anchor = i;
        b.ref.resize(static_cast<std::size_t>(n));
        std::iota(b.ref.begin(), b.ref.end(), 0);
        b.sel.resize(static_cast<std::size_t>(n), 0);
        int n_same = 0;
        for (int j = 0; j < n; ++j) {
          const bool same = data.pool.label[static_cast<std::size_t>(j)] ==
                            data.pool.label[static_cast<std::size_t>(i)];
          b.sel[static_cast<std::size_t>(j)] = same;
          n_same += same;
        }
        b.aux0 = n_same;
        b.aux1 = n;
        b.sel_scale = static_cast<double>(n) / n_same;
        p.blocks_.push_back(std::move(b));
      }
      p.inner_dim_ = 2;
      break;
    }
    default:
      throw std::invalid_argument("build_fcco: unhandled kind");
  }
  return p;
}

Vec FccoProblem::view_features(int view) const {
  return views_[static_cast<std::size_t>(view)];
}

const Vec& FccoProblem::item_features(const Block& b, int ref_pos) const {
  const int idx = b.ref[static_cast<std::size_t>(ref_pos)];
  switch (data_->kind) {
    case DatasetKind::Binary:
      return data_->binary.x[static_cast<std::size_t>(idx)];
    case DatasetKind::Ranking:
      return data_->ranking.queries[static_cast<std::size_t>(b.group)]
          .x[static_cast<std::size_t>(idx)];
    case DatasetKind::ContrastivePool:
      return spec_.kind == ObjectiveKind::SupconRatio ||
                     spec_.kind == ObjectiveKind::SupconLogRatio ||
                     spec_.kind == ObjectiveKind::SupconPerPair
                 ? data_->pool.x[static_cast<std::size_t>(idx)]
                 : views_[static_cast<std::size_t>(idx)];
  }
  throw std::logic_error("item_features: bad dataset kind");
}

bool FccoProblem::has_direct() const {
  return spec_.kind == ObjectiveKind::GclOneWay ||
         spec_.kind == ObjectiveKind::GclTwoWay;
}

InnerEval FccoProblem::inner_eval(const ModelBundle& bundle, int block,
                                  std::span<const int> batch) const {
  const Block& b = blocks_[static_cast<std::size_t>(block)];
  if (batch.empty()) throw std::invalid_argument("inner_eval: empty batch");
  const int d = bundle.dim();
  InnerEval out;
  for (int c = 0; c < inner_dim_; ++c) out.grad[static_cast<std::size_t>(c)].assign(
      static_cast<std::size_t>(d), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const ObjectiveKind kind = spec_.kind;

  if (kind == ObjectiveKind::GclOneWay || kind == ObjectiveKind::GclTwoWay) {
    const int a_model = (kind == ObjectiveKind::GclTwoWay) ? b.group : 0;
    const int r_model = (kind == ObjectiveKind::GclTwoWay) ? 1 - b.group : 0;
    const Vec ax = view_features(b.anchor_view);
    const Vec a_emb = score(bundle.models[static_cast<std::size_t>(a_model)], ax);
    Vec upstream_acc(a_emb.size(), 0.0);
    double sum = 0.0;
    for (int pos : batch) {
      const Vec& rx = item_features(b, pos);
      const Vec r_emb = score(bundle.models[static_cast<std::size_t>(r_model)], rx);
      const double term = safe_exp(dot(a_emb, r_emb) / spec_.tau);
      const double coeff = inv_b * term / spec_.tau;
      sum += term;
      add_vjp(out.grad[0], bundle, r_model, rx, a_emb, coeff);
      axpy(upstream_acc, coeff, r_emb);
    }
    add_vjp(out.grad[0], bundle, a_model, ax, upstream_acc, 1.0);
    out.g[0] = sum * inv_b;
    return out;
  }

  if (kind == ObjectiveKind::SupconRatio || kind == ObjectiveKind::SupconLogRatio ||
      kind == ObjectiveKind::SupconPerPair) {
    const Vec& ax = data_->pool.x[static_cast<std::size_t>(b.anchor)];
    const Vec a_emb = score(bundle.models[0], ax);
    std::array<Vec, 2> upstream_acc{Vec(a_emb.size(), 0.0), Vec(a_emb.size(), 0.0)};
    for (int pos : batch) {
      const Vec& rx = item_features(b, pos);
      const Vec r_emb = score(bundle.models[0], rx);
      Vec diff(a_emb.size());
      double d2 = 0.0;
      for (std::size_t c = 0; c < a_emb.size(); ++c) {
        diff[c] = a_emb[c] - r_emb[c];
        d2 += diff[c] * diff[c];
      }
      const double e = safe_exp(-d2);
      const bool same = b.sel[static_cast<std::size_t>(pos)] != 0;
      // component values and their derivatives w.r.t. d2
      double val[2], dv[2];
      if (kind == ObjectiveKind::SupconPerPair) {
        val[0] = same ? b.sel_scale * d2 : 0.0;
        dv[0] = same ? b.sel_scale : 0.0;
      } else {
        val[0] = same ? b.sel_scale * e : 0.0;
        dv[0] = same ? -b.sel_scale * e : 0.0;
      }
      val[1] = e;
      dv[1] = -e;
      for (int c = 0; c < 2; ++c) {
        out.g[static_cast<std::size_t>(c)] += inv_b * val[c];
        const double q = inv_b * dv[c];
        if (q == 0.0) continue;
        Vec up(diff.size());
        for (std::size_t t = 0; t < diff.size(); ++t) up[t] = -2.0 * q * diff[t];
        add_vjp(out.grad[static_cast<std::size_t>(c)], bundle, 0, rx, up, 1.0);
        axpy(upstream_acc[static_cast<std::size_t>(c)], 2.0 * q, diff);
      }
    }
    for (int c = 0; c < 2; ++c)
      add_vjp(out.grad[static_cast<std::size_t>(c)], bundle, 0, ax,
              upstream_acc[static_cast<std::size_t>(c)], 1.0);
    return out;
  }

  // scalar pairwise family: terms of z = h(x_j) - h(x_anchor)
  const Vec* axp = nullptr;
  switch (data_->kind) {
    case DatasetKind::Binary:
      axp = &data_->binary.x[static_cast<std::size_t>(b.anchor)];
      break;
    case DatasetKind::Ranking:
      axp = &data_->ranking.queries[static_cast<std::size_t>(b.group)]
                 .x[static_cast<std::size_t>(b.anchor)];
      break;
    default:
      throw std::logic_error("inner_eval: unexpected dataset kind");
  }
  const double h_anchor = score_scalar(bundle.models[0], *axp);
  std::array<double, 2> anchor_coeff{0.0, 0.0};
  for (int pos : batch) {
    const Vec& rx = item_features(b, pos);
    const double h_j = score_scalar(bundle.models[0], rx);
    const double z = h_j - h_anchor;
    double term = 0.0, dterm = 0.0;
    switch (kind) {
      case ObjectiveKind::Listnet:
        term = safe_exp(z);
        dterm = term;
        break;
      case ObjectiveKind::PaucKl: {
        const LossEval le = pair_loss(spec_.surrogate, z);
        term = safe_exp(le.value / spec_.lambda_dro);
        dterm = term * le.deriv / spec_.lambda_dro;
        break;
      }
      default: {
        const LossEval le = pair_loss(spec_.surrogate, z);
        term = le.value;
        dterm = le.deriv;
        break;
      }
    }
    double cval[2] = {term, 0.0};
    double cder[2] = {dterm, 0.0};
    if (inner_dim_ == 2) {
      const bool in_sel = !b.sel.empty() && b.sel[static_cast<std::size_t>(pos)] != 0;
      cval[0] = in_sel ? b.sel_scale * term : 0.0;
      cder[0] = in_sel ? b.sel_scale * dterm : 0.0;
      cval[1] = term;
      cder[1] = dterm;
    }
    for (int c = 0; c < inner_dim_; ++c) {
      out.g[static_cast<std::size_t>(c)] += inv_b * cval[c];
      const double q = inv_b * cder[c];
      if (q != 0.0)
        add_vjp(out.grad[static_cast<std::size_t>(c)], bundle, 0, rx, kOne, q);
      anchor_coeff[static_cast<std::size_t>(c)] -= inv_b * cder[c];
    }
  }
  for (int c = 0; c < inner_dim_; ++c)
    add_vjp(out.grad[static_cast<std::size_t>(c)], bundle, 0, *axp, kOne,
            anchor_coeff[static_cast<std::size_t>(c)]);
  return out;
}

OuterEval FccoProblem::outer_eval(int block, const std::array<double, 2>& u) const {
  const Block& b = blocks_[static_cast<std::size_t>(block)];
  OuterEval out;
  switch (spec_.kind) {
    case ObjectiveKind::AurocPairwise: {
      out.f = u[0];
      out.df[0] = 1.0;
      break;
    }
    case ObjectiveKind::PnormPush: {
      out.f = std::pow(u[0], spec_.p);
      out.df[0] = spec_.p * std::pow(u[0], spec_.p - 1.0);
      break;
    }
    case ObjectiveKind::PaucKl: {
      out.f = spec_.lambda_dro * std::log(u[0]);
      out.df[0] = spec_.lambda_dro / u[0];
      break;
    }
    case ObjectiveKind::Ap: {
      // f = -(n+ u1) / (n u2)
      const double num = b.aux0 * u[0];
      const double den = b.aux1 * u[1];
      out.f = -num / den;
      out.df[0] = -b.aux0 / den;
      out.df[1] = num * b.aux1 / (den * den);
      break;
    }
    case ObjectiveKind::Map:
    case ObjectiveKind::TopkMap: {
      // rank surrogate with the self term fixed at 1
      const double g1 = 1.0 + b.aux0 * u[0];
      const double g2 = 1.0 + b.aux1 * u[1];
      out.f = -b.weight * g1 / g2;
      out.df[0] = -b.weight * b.aux0 / g2;
      out.df[1] = b.weight * g1 * b.aux1 / (g2 * g2);
      break;
    }
    case ObjectiveKind::Ndcg:
    case ObjectiveKind::TopkNdcg: {
      const double g = 1.0 + b.aux1 * u[0];
      const double l2 = std::log2(g + 1.0);
      out.f = -b.weight * b.aux0 / l2;
      // d/du of -c/log2(g+1) = c * aux1 / ((g+1) ln2 log2^2)
      out.df[0] = b.weight * b.aux0 * b.aux1 /
                  ((g + 1.0) * std::log(2.0) * l2 * l2);
      break;
    }
    case ObjectiveKind::Listnet: {
      out.f = b.weight * b.aux0 * std::log(b.aux1 * u[0]);
      out.df[0] = b.weight * b.aux0 / u[0];
      break;
    }
    case ObjectiveKind::RecallKFcco: {
      const double rank = 1.0 + b.aux1 * u[0];
      const LossEval le = pair_loss(spec_.surrogate_outer, rank - spec_.k);
      out.f = le.value;
      out.df[0] = le.deriv * b.aux1;
      break;
    }
    case ObjectiveKind::GclOneWay: {
      const double den = spec_.eps_gcl + static_cast<double>(b.ref.size()) * u[0];
      out.f = b.weight * spec_.tau * std::log(den);
      out.df[0] = b.weight * spec_.tau * static_cast<double>(b.ref.size()) / den;
      break;
    }
    case ObjectiveKind::GclTwoWay: {
      const double den = static_cast<double>(b.ref.size()) * u[0];
      out.f = b.weight * spec_.tau * std::log(den);
      out.df[0] = b.weight * spec_.tau * static_cast<double>(b.ref.size()) / den;
      break;
    }
    case ObjectiveKind::SupconRatio: {
      const double num = b.aux0 * u[0];
      const double den = b.aux1 * u[1];
      out.f = -num / den;
      out.df[0] = -b.aux0 / den;
      out.df[1] = num * b.aux1 / (den * den);
      break;
    }
    case ObjectiveKind::SupconLogRatio: {
      out.f = -std::log(b.aux0 * u[0]) + std::log(b.aux1 * u[1]);
      out.df[0] = -1.0 / u[0];
      out.df[1] = 1.0 / u[1];
      break;
    }
    case ObjectiveKind::SupconPerPair: {
      out.f = b.aux0 * u[0] + b.aux0 * std::log(b.aux1 * u[1]);
      out.df[0] = b.aux0;
      out.df[1] = b.aux0 / u[1];
      break;
    }
    default:
      throw std::logic_error("outer_eval: unhandled kind");
  }
  return out;
}

DirectEval FccoProblem::direct_eval(const ModelBundle& bundle, int block) const {
  DirectEval out;
  out.grad.assign(static_cast<std::size_t>(bundle.dim()), 0.0);
  if (!has_direct()) return out;
  const Block& b = blocks_[static_cast<std::size_t>(block)];
  const int a_model = (spec_.kind == ObjectiveKind::GclTwoWay) ? b.group : 0;
  const int p_model = (spec_.kind == ObjectiveKind::GclTwoWay) ? 1 - b.group : 0;
  const Vec ax = view_features(b.anchor_view);
  const Vec px = view_features(b.positive_view);
  const Vec a_emb = score(bundle.models[static_cast<std::size_t>(a_model)], ax);
  const Vec p_emb = score(bundle.models[static_cast<std::size_t>(p_model)], px);
  out.value = -b.weight * dot(a_emb, p_emb);
  add_vjp(out.grad, bundle, a_model, ax, p_emb, -b.weight);
  add_vjp(out.grad, bundle, p_model, px, a_emb, -b.weight);
  return out;
}

double FccoProblem::eval_full(const ModelBundle& bundle) const {
  const int m = num_blocks();
  Vec vals(static_cast<std::size_t>(m), 0.0);
  parallel_for(m, [&](int i) {
    std::vector<int> full(static_cast<std::size_t>(inner_set_size(i)));
    std::iota(full.begin(), full.end(), 0);
    const InnerEval in = inner_eval(bundle, i, full);
    double v = outer_eval(i, in.g).f;
    if (has_direct()) v += direct_eval(bundle, i).value;
    vals[static_cast<std::size_t>(i)] = v;
  });
  double total = 0.0;
  for (double v : vals) total += v;
  return total / static_cast<double>(m);
}

Vec FccoProblem::full_gradient(const ModelBundle& bundle) const {
  const int m = num_blocks();
  const int d = bundle.dim();
  std::vector<Vec> grads(static_cast<std::size_t>(m));
  parallel_for(m, [&](int i) {
    std::vector<int> full(static_cast<std::size_t>(inner_set_size(i)));
    std::iota(full.begin(), full.end(), 0);
    const InnerEval in = inner_eval(bundle, i, full);
    const OuterEval f = outer_eval(i, in.g);
    Vec g(static_cast<std::size_t>(d), 0.0);
    for (int c = 0; c < inner_dim_; ++c)
      axpy(g, f.df[static_cast<std::size_t>(c)], in.grad[static_cast<std::size_t>(c)]);
    if (has_direct()) {
      const DirectEval de = direct_eval(bundle, i);
      axpy(g, 1.0, de.grad);
    }
    grads[static_cast<std::size_t>(i)] = std::move(g);
  });
  Vec total(static_cast<std::size_t>(d), 0.0);
  for (const auto& g : grads) axpy(total, 1.0 / static_cast<double>(m), g);
  return total;
}

// ---------------------------------------------------------------------------
// Min-max
// ---------------------------------------------------------------------------

MinMaxProblem build_minmax(const ObjectiveSpec& raw_spec, const Dataset& data,
                           const std::vector<ScoreModelSpec>& models) {
  ObjectiveSpec spec = with_defaults(raw_spec);
  spec.validate();
  if (spec.kind != ObjectiveKind::AurocMinMax)
    throw std::invalid_argument("build_minmax: kind must be auroc_minmax");
  if (models.size() != 1)
    throw std::invalid_argument("build_minmax: objective needs 1 model");
  const auto s = split_binary(data, "build_minmax");
  MinMaxProblem p;
  p.spec_ = spec;
  p.data_ = std::make_shared<Dataset>(data);
  // tasks partition both classes round-robin so each keeps both labels
  p.tasks_.resize(static_cast<std::size_t>(spec.tasks));
  for (std::size_t i = 0; i < s.pos.size(); ++i)
    p.tasks_[i % static_cast<std::size_t>(spec.tasks)].pos.push_back(s.pos[i]);
  for (std::size_t i = 0; i < s.neg.size(); ++i)
    p.tasks_[i % static_cast<std::size_t>(spec.tasks)].neg.push_back(s.neg[i]);
  for (const auto& t : p.tasks_)
    if (t.pos.empty() || t.neg.empty())
      throw std::invalid_argument(
          "build_minmax: a task ended up with an empty class; reduce objective.tasks");
  return p;
}

MinMaxProblem::Grads MinMaxProblem::partial_grads(
    const ModelBundle& bundle, int block, double a, double b,
    std::span<const int> pos_batch, std::span<const int> neg_batch) const {
  const Task& t = tasks_[static_cast<std::size_t>(block)];
  if (pos_batch.empty() || neg_batch.empty())
    throw std::invalid_argument("minmax: empty batch");
  const int d = bundle.dim();
  Grads g;
  g.w_quad.assign(static_cast<std::size_t>(d), 0.0);
  g.w_coupling.assign(static_cast<std::size_t>(d), 0.0);
  const double inv_p = 1.0 / static_cast<double>(pos_batch.size());
  const double inv_n = 1.0 / static_cast<double>(neg_batch.size());
  double mean_hp = 0.0, mean_hn = 0.0;
  for (int pos : pos_batch) {
    const Vec& x = data_->binary.x[static_cast<std::size_t>(t.pos[static_cast<std::size_t>(pos)])];
    const double h = score_scalar(bundle.models[0], x);
    mean_hp += inv_p * h;
    add_vjp(g.w_quad, bundle, 0, x, kOne, inv_p * 2.0 * (h - a));
    add_vjp(g.w_coupling, bundle, 0, x, kOne, -inv_p);
  }
  for (int pos : neg_batch) {
    const Vec& x = data_->binary.x[static_cast<std::size_t>(t.neg[static_cast<std::size_t>(pos)])];
    const double h = score_scalar(bundle.models[0], x);
    mean_hn += inv_n * h;
    add_vjp(g.w_quad, bundle, 0, x, kOne, inv_n * 2.0 * (h - b));
    add_vjp(g.w_coupling, bundle, 0, x, kOne, inv_n);
  }
  g.da = -2.0 * (mean_hp - a);
  g.db = -2.0 * (mean_hn - b);
  g.mean_gap_c = mean_hn - mean_hp + spec_.margin_c;
  return g;
}

double MinMaxProblem::batch_value(const ModelBundle& bundle, int block,
                                  double a, double b, double s,
                                  std::span<const int> pos_batch,
                                  std::span<const int> neg_batch) const {
  const Task& t = tasks_[static_cast<std::size_t>(block)];
  const double inv_p = 1.0 / static_cast<double>(pos_batch.size());
  const double inv_n = 1.0 / static_cast<double>(neg_batch.size());
  double quad = 0.0, mean_hp = 0.0, mean_hn = 0.0;
  for (int pos : pos_batch) {
    const double h = score_scalar(
        bundle.models[0],
        data_->binary.x[static_cast<std::size_t>(t.pos[static_cast<std::size_t>(pos)])]);
    quad += inv_p * (h - a) * (h - a);
    mean_hp += inv_p * h;
  }
  for (int pos : neg_batch) {
    const double h = score_scalar(
        bundle.models[0],
        data_->binary.x[static_cast<std::size_t>(t.neg[static_cast<std::size_t>(pos)])]);
    quad += inv_n * (h - b) * (h - b);
    mean_hn += inv_n * h;
  }
  return quad + s * (mean_hn - mean_hp + spec_.margin_c) - s * s / 4.0;
}

double MinMaxProblem::dual_opt(const ModelBundle& bundle, int block) const {
  const Task& t = tasks_[static_cast<std::size_t>(block)];
  double mean_hp = 0.0, mean_hn = 0.0;
  for (int i : t.pos)
    mean_hp += score_scalar(bundle.models[0], data_->binary.x[static_cast<std::size_t>(i)]) /
               static_cast<double>(t.pos.size());
  for (int j : t.neg)
    mean_hn += score_scalar(bundle.models[0], data_->binary.x[static_cast<std::size_t>(j)]) /
               static_cast<double>(t.neg.size());
  return 2.0 * (mean_hn - mean_hp + spec_.margin_c);
}

double MinMaxProblem::eval_full(const ModelBundle& bundle,
                                std::span<const double> extras) const {
  const int k = num_blocks();
  double total = 0.0;
  for (int block = 0; block < k; ++block) {
    const Task& t = tasks_[static_cast<std::size_t>(block)];
    const double a = extras[static_cast<std::size_t>(2 * block)];
    const double b = extras[static_cast<std::size_t>(2 * block + 1)];
    std::vector<int> full_pos(t.pos.size()), full_neg(t.neg.size());
    std::iota(full_pos.begin(), full_pos.end(), 0);
    std::iota(full_neg.begin(), full_neg.end(), 0);
    const double s_star = dual_opt(bundle, block);
    total += batch_value(bundle, block, a, b, s_star, full_pos, full_neg);
  }
  return total / static_cast<double>(k);
}

Vec MinMaxProblem::full_gradient(const ModelBundle& bundle,
                                 std::span<const double> extras) const {
  const int k = num_blocks();
  const int d = bundle.dim();
  Vec grad(static_cast<std::size_t>(d + 2 * k), 0.0);
  for (int block = 0; block < k; ++block) {
    const Task& t = tasks_[static_cast<std::size_t>(block)];
    std::vector<int> full_pos(t.pos.size()), full_neg(t.neg.size());
    std::iota(full_pos.begin(), full_pos.end(), 0);
    std::iota(full_neg.begin(), full_neg.end(), 0);
    const double a = extras[static_cast<std::size_t>(2 * block)];
    const double b = extras[static_cast<std::size_t>(2 * block + 1)];
    const Grads g = partial_grads(bundle, block, a, b, full_pos, full_neg);
    const double s_star = 2.0 * g.mean_gap_c;  // argmax of the quadratic
    const double inv_k = 1.0 / static_cast<double>(k);
    for (int i = 0; i < d; ++i)
      grad[static_cast<std::size_t>(i)] +=
          inv_k * (g.w_quad[static_cast<std::size_t>(i)] +
                   s_star * g.w_coupling[static_cast<std::size_t>(i)]);
    grad[static_cast<std::size_t>(d + 2 * block)] = inv_k * g.da;
    grad[static_cast<std::size_t>(d + 2 * block + 1)] = inv_k * g.db;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Bilevel
// ---------------------------------------------------------------------------

int BilevelProblem::num_blocks() const {
  return inner_ ? inner_->num_blocks() : num_blocks_;
}

std::span<const int> BilevelProblem::block_lowers(int block) const {
  if (block_lowers_.empty()) return {};
  const auto& v = block_lowers_.size() == 1
                      ? block_lowers_[0]
                      : block_lowers_[static_cast<std::size_t>(block)];
  return {v.data(), v.size()};
}

double BilevelProblem::block_score(const ModelBundle& bundle, int item) const {
  if (data_->kind == DatasetKind::Binary)
    return score_scalar(bundle.models[0], data_->binary.x[static_cast<std::size_t>(item)]);
  // ranking: flat item id = offset(q) + local index
  int q = 0;
  int local = item;
  while (local >= static_cast<int>(data_->ranking.queries[static_cast<std::size_t>(q)].x.size())) {
    local -= static_cast<int>(data_->ranking.queries[static_cast<std::size_t>(q)].x.size());
    ++q;
  }
  return score_scalar(bundle.models[0],
                      data_->ranking.queries[static_cast<std::size_t>(q)]
                          .x[static_cast<std::size_t>(local)]);
}

namespace {

const Vec& item_x(const Dataset& data, int item) {
  if (data.kind == DatasetKind::Binary)
    return data.binary.x[static_cast<std::size_t>(item)];
  int q = 0;
  int local = item;
  while (local >= static_cast<int>(data.ranking.queries[static_cast<std::size_t>(q)].x.size())) {
    local -= static_cast<int>(data.ranking.queries[static_cast<std::size_t>(q)].x.size());
    ++q;
  }
  return data.ranking.queries[static_cast<std::size_t>(q)].x[static_cast<std::size_t>(local)];
}

}  // namespace

BilevelProblem build_bilevel(const ObjectiveSpec& raw_spec, const Dataset& data,
                             const std::vector<ScoreModelSpec>& models) {
  ObjectiveSpec spec = with_defaults(raw_spec);
  spec.validate();
  if (!is_bilevel_kind(spec.kind))
    throw std::invalid_argument("build_bilevel: not a bilevel objective kind");
  if (models.size() != 1)
    throw std::invalid_argument("build_bilevel: objective needs 1 model");

  BilevelProblem p;
  p.spec_ = spec;
  p.data_ = std::make_shared<Dataset>(data);
  const auto lower_of = [&spec](std::vector<int> set, double k_sel) {
    LowerProblem lp;
    lp.set = std::move(set);
    lp.k_sel = k_sel;
    lp.eps_sel = spec.eps_sel;
    lp.tau1 = spec.tau1;
    lp.tau2 = spec.tau2;
    return lp;
  };

  switch (spec.kind) {
    case ObjectiveKind::PaucBilevelOneWay:
    case ObjectiveKind::TopPush: {
      const auto s = split_binary(data, "build_bilevel");
      p.pos_items_ = s.pos;
      p.neg_items_ = s.neg;
      const long n_neg = static_cast<long>(s.neg.size());
      long k1 = 0, k2 = 1;
      if (spec.kind == ObjectiveKind::PaucBilevelOneWay) {
        k1 = ceil_count(spec.alpha * static_cast<double>(n_neg));
        k2 = floor_count(spec.beta * static_cast<double>(n_neg));
        if (k1 >= k2)
          throw std::invalid_argument("objective.alpha/beta select an empty FPR band (k1 >= k2)");
      }
      p.num_blocks_ = 1;
      p.phi_kind_ = BilevelProblem::PhiKind::PaucOneWay;
      p.block_lowers_.push_back({0});
      p.lowers_.push_back(lower_of(s.neg, static_cast<double>(k2)));
      if (k1 >= 1) {
        p.block_lowers_[0].push_back(1);
        p.lowers_.push_back(lower_of(s.neg, static_cast<double>(k1 - 1)));
      }
      break;
    }
    case ObjectiveKind::PaucBilevelTwoWay: {
      const auto s = split_binary(data, "build_bilevel");
      p.pos_items_ = s.pos;
      p.neg_items_ = s.neg;
      const long k1 = floor_count(spec.alpha * static_cast<double>(s.pos.size()));
      const long k2 = floor_count(spec.beta * static_cast<double>(s.neg.size()));
      if (k1 < 1 || k2 < 1)
        throw std::invalid_argument("objective.alpha/beta select an empty two-way band");
      p.num_blocks_ = 1;
      p.phi_kind_ = BilevelProblem::PhiKind::PaucTwoWay;
      p.block_lowers_.push_back({0, 1});
      p.lowers_.push_back(lower_of(s.neg, static_cast<double>(k2)));
      p.lowers_.push_back(
          lower_of(s.pos, static_cast<double>(static_cast<long>(s.pos.size()) - k1)));
      break;
    }
    case ObjectiveKind::TopkNdcg:
    case ObjectiveKind::TopkMap: {
      if (data.kind != DatasetKind::Ranking)
        throw std::invalid_argument("build_bilevel: needs a ranking dataset");
      p.inner_ = build_fcco(spec, data, models);
      p.phi_kind_ = BilevelProblem::PhiKind::TopkGate;
      // flat item ids per query for the lower problems
      int offset = 0;
      std::vector<int> query_offset;
      for (const auto& q : data.ranking.queries) {
        query_offset.push_back(offset);
        std::vector<int> set(q.x.size());
        std::iota(set.begin(), set.end(), offset);
        p.lowers_.push_back(lower_of(std::move(set), static_cast<double>(spec.k)));
        offset += static_cast<int>(q.x.size());
      }
      // per block: the query's lower problem and the gated item
      int qi = 0, seen = 0;
      for (const auto& q : data.ranking.queries) {
        for (int i = 0; i < static_cast<int>(q.x.size()); ++i) {
          if (q.rel[static_cast<std::size_t>(i)] <= 0) continue;
          p.block_lowers_.push_back({qi});
          p.gate_anchor_.push_back(query_offset[static_cast<std::size_t>(qi)] + i);
          ++seen;
        }
        ++qi;
      }
      p.num_blocks_ = seen;
      break;
    }
    case ObjectiveKind::RecallKBilevel: {
      const auto s = split_binary(data, "build_bilevel");
      p.pos_items_ = s.pos;
      p.neg_items_ = s.neg;
      const int n = static_cast<int>(data.binary.x.size());
      if (spec.k > n) throw std::invalid_argument("objective.K exceeds the dataset size");
      p.num_blocks_ = 1;
      p.phi_kind_ = BilevelProblem::PhiKind::RecallSet;
      std::vector<int> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), 0);
      p.block_lowers_.push_back({0});
      p.lowers_.push_back(lower_of(std::move(all), static_cast<double>(spec.k)));
      break;
    }
    case ObjectiveKind::PrecAtRecall: {
      const auto s = split_binary(data, "build_bilevel");
      p.pos_items_ = s.pos;
      p.neg_items_ = s.neg;
      if (spec.k > static_cast<int>(s.pos.size()))
        throw std::invalid_argument("objective.K exceeds the positive count");
      p.num_blocks_ = 1;
      p.phi_kind_ = BilevelProblem::PhiKind::PrecAtRSet;
      p.block_lowers_.push_back({0});
      p.lowers_.push_back(lower_of(s.pos, static_cast<double>(spec.k)));
      break;
    }
    case ObjectiveKind::PapK: {
      const auto s = split_binary(data, "build_bilevel");
      p.pos_items_ = s.pos;
      p.neg_items_ = s.neg;
      const int k1 = std::min<int>(spec.k, static_cast<int>(s.pos.size()));
      const int k2 = std::min<int>(spec.k, static_cast<int>(s.neg.size()));
      p.num_blocks_ = 1;
      p.phi_kind_ = BilevelProblem::PhiKind::PapPair;
      p.phi_scale_ = static_cast<double>(s.pos.size()) *
                     static_cast<double>(s.neg.size()) /
                     (static_cast<double>(k1) * static_cast<double>(k2));
      p.block_lowers_.push_back({0, 1});
      p.lowers_.push_back(lower_of(s.pos, static_cast<double>(k1)));
      p.lowers_.push_back(lower_of(s.neg, static_cast<double>(k2)));
      break;
    }
    default:
      throw std::invalid_argument("build_bilevel: unhandled kind");
  }
  return p;
}

BilevelProblem as_bilevel(FccoProblem fcco) {
  if (fcco.has_direct())
    throw std::invalid_argument("as_bilevel: direct-term objectives are not wrappable");
  BilevelProblem p;
  p.spec_ = fcco.spec();
  p.num_blocks_ = fcco.num_blocks();
  p.inner_ = std::move(fcco);
  p.phi_kind_ = BilevelProblem::PhiKind::None;
  return p;
}

int BilevelProblem::phi_set_size(int block) const {
  (void)block;
  switch (phi_kind_) {
    case PhiKind::None:
    case PhiKind::TopkGate:
      return 0;
    case PhiKind::PaucOneWay:
    case PhiKind::PaucTwoWay:
    case PhiKind::PapPair:
      return static_cast<int>(pos_items_.size()) * static_cast<int>(neg_items_.size());
    case PhiKind::RecallSet:
      return static_cast<int>(pos_items_.size());
    case PhiKind::PrecAtRSet:
      return static_cast<int>(neg_items_.size());
  }
  return 0;
}

PhiEval BilevelProblem::phi_eval(const ModelBundle& bundle, int block,
                                 std::span<const double> lambdas,
                                 std::span<const int> phi_batch) const {
  PhiEval out;
  out.w_grad.assign(static_cast<std::size_t>(bundle.dim()), 0.0);
  const Gate g{spec_.gate_tau};
  switch (phi_kind_) {
    case PhiKind::None:
      out.value = 1.0;
      return out;
    case PhiKind::TopkGate: {
      const int item = gate_anchor_[static_cast<std::size_t>(block)];
      const Vec& x = item_x(*data_, item);
      const double h = score_scalar(bundle.models[0], x);
      const LossEval ge = gate(g, h - lambdas[0]);
      out.value = ge.value;
      add_vjp(out.w_grad, bundle, 0, x, kOne, ge.deriv);
      out.dlambda[0] = -ge.deriv;
      return out;
    }
    case PhiKind::RecallSet: {
      const double inv = 1.0 / static_cast<double>(phi_batch.size());
      double v = 0.0, dl = 0.0;
      for (int pos : phi_batch) {
        const Vec& x = item_x(*data_, pos_items_[static_cast<std::size_t>(pos)]);
        const double h = score_scalar(bundle.models[0], x);
        const LossEval le = pair_loss(spec_.surrogate, lambdas[0] - h);
        v += inv * le.value;
        dl += inv * le.deriv;
        add_vjp(out.w_grad, bundle, 0, x, kOne, -inv * le.deriv);
      }
      out.value = v;
      out.dlambda[0] = dl;
      return out;
    }
    case PhiKind::PrecAtRSet: {
      const double inv = 1.0 / static_cast<double>(phi_batch.size());
      double v = 0.0, dl = 0.0;
      for (int pos : phi_batch) {
        const Vec& x = item_x(*data_, neg_items_[static_cast<std::size_t>(pos)]);
        const double h = score_scalar(bundle.models[0], x);
        const LossEval le = pair_loss(spec_.surrogate, h - lambdas[0]);
        v += inv * le.value;
        dl -= inv * le.deriv;
        add_vjp(out.w_grad, bundle, 0, x, kOne, inv * le.deriv);
      }
      out.value = v;
      out.dlambda[0] = dl;
      return out;
    }
    case PhiKind::PaucOneWay:
    case PhiKind::PaucTwoWay:
    case PhiKind::PapPair: {
      const int n_neg = static_cast<int>(neg_items_.size());
      const double inv = phi_scale_ / static_cast<double>(phi_batch.size());
      const bool two_lambda = lambdas.size() >= 2;
      double v = 0.0, dl0 = 0.0, dl1 = 0.0;
      for (int code : phi_batch) {
        const int pi = code / n_neg;
        const int nj = code % n_neg;
        const Vec& xp = item_x(*data_, pos_items_[static_cast<std::size_t>(pi)]);
        const Vec& xn = item_x(*data_, neg_items_[static_cast<std::size_t>(nj)]);
        const double hp = score_scalar(bundle.models[0], xp);
        const double hn = score_scalar(bundle.models[0], xn);
        const LossEval le = pair_loss(spec_.surrogate, hn - hp);
        double g0v = 1.0, g0d = 0.0;  // first gate and its z-derivative
        double g1v = 1.0, g1d = 0.0;
        double coeff_p = 0.0, coeff_n = 0.0;  // weights on grad h_p / grad h_n
        if (phi_kind_ == PhiKind::PaucOneWay) {
          // gate0 = gate(h_n - l2); gate1 = gate(l1 - h_n) when banded
          const LossEval ge0 = gate(g, hn - lambdas[0]);
          g0v = ge0.value;
          g0d = ge0.deriv;
          if (two_lambda) {
            const LossEval ge1 = gate(g, lambdas[1] - hn);
            g1v = ge1.value;
            g1d = ge1.deriv;
          }
          v += inv * g0v * g1v * le.value;
          dl0 += inv * (-g0d) * g1v * le.value;
          if (two_lambda) dl1 += inv * g0v * g1d * le.value;
          coeff_n = inv * (g0d * g1v * le.value - g0v * g1d * le.value +
                           g0v * g1v * le.deriv);
          coeff_p = inv * (-g0v * g1v * le.deriv);
        } else if (phi_kind_ == PhiKind::PaucTwoWay) {
          // gate0 = gate(h_n - l2); gate1 = gate(l1 - h_p)
          const LossEval ge0 = gate(g, hn - lambdas[0]);
          const LossEval ge1 = gate(g, lambdas[1] - hp);
          g0v = ge0.value;
          g0d = ge0.deriv;
          g1v = ge1.value;
          g1d = ge1.deriv;
          v += inv * g0v * g1v * le.value;
          dl0 += inv * (-g0d) * g1v * le.value;
          dl1 += inv * g0v * g1d * le.value;
          coeff_n = inv * (g0d * g1v * le.value + g0v * g1v * le.deriv);
          coeff_p = inv * (-g0v * g1d * le.value - g0v * g1v * le.deriv);
        } else {
          // pAp@K: gate0 = gate(h_p - lP); gate1 = gate(h_n - lN)
          const LossEval ge0 = gate(g, hp - lambdas[0]);
          const LossEval ge1 = gate(g, hn - lambdas[1]);
          g0v = ge0.value;
          g0d = ge0.deriv;
          g1v = ge1.value;
          g1d = ge1.deriv;
          v += inv * g0v * g1v * le.value;
          dl0 += inv * (-g0d) * g1v * le.value;
          dl1 += inv * g0v * (-g1d) * le.value;
          coeff_p = inv * (g0d * g1v * le.value - g0v * g1v * le.deriv);
          coeff_n = inv * (g0v * g1d * le.value + g0v * g1v * le.deriv);
        }
        add_vjp(out.w_grad, bundle, 0, xp, kOne, coeff_p);
        add_vjp(out.w_grad, bundle, 0, xn, kOne, coeff_n);
      }
      out.value = v;
      out.dlambda[0] = dl0;
      out.dlambda[1] = dl1;
      return out;
    }
  }
  throw std::logic_error("phi_eval: unhandled phi kind");
}

double BilevelProblem::lower_grad(const ModelBundle& bundle, int lp,
                                  double lambda, std::span<const int> batch) const {
  const LowerProblem& l = lowers_[static_cast<std::size_t>(lp)];
  const double n = static_cast<double>(l.set.size());
  double s = 0.0;
  for (int pos : batch) {
    const double h = block_score(bundle, l.set[static_cast<std::size_t>(pos)]);
    s += gate(Gate{l.tau1}, h - lambda).value;
  }
  return (l.k_sel + l.eps_sel) / n + l.tau2 * lambda -
         s / static_cast<double>(batch.size());
}

double BilevelProblem::lower_hess(const ModelBundle& bundle, int lp,
                                  double lambda, std::span<const int> batch) const {
  const LowerProblem& l = lowers_[static_cast<std::size_t>(lp)];
  double s = 0.0;
  for (int pos : batch) {
    const double h = block_score(bundle, l.set[static_cast<std::size_t>(pos)]);
    const double sg = gate(Gate{l.tau1}, h - lambda).value;
    s += sg * (1.0 - sg);
  }
  return l.tau2 + s / (static_cast<double>(batch.size()) * l.tau1);
}

Vec BilevelProblem::lower_cross(const ModelBundle& bundle, int lp, double lambda,
                                std::span<const int> batch) const {
  const LowerProblem& l = lowers_[static_cast<std::size_t>(lp)];
  Vec out(static_cast<std::size_t>(bundle.dim()), 0.0);
  const double inv = 1.0 / (static_cast<double>(batch.size()) * l.tau1);
  for (int pos : batch) {
    const int item = l.set[static_cast<std::size_t>(pos)];
    const Vec& x = item_x(*data_, item);
    const double h = score_scalar(bundle.models[0], x);
    const double sg = gate(Gate{l.tau1}, h - lambda).value;
    add_vjp(out, bundle, 0, x, kOne, -inv * sg * (1.0 - sg));
  }
  return out;
}

double BilevelProblem::lower_solve_exact(const ModelBundle& bundle, int lp) const {
  const LowerProblem& l = lowers_[static_cast<std::size_t>(lp)];
  Vec scores;
  scores.reserve(l.set.size());
  for (int item : l.set) scores.push_back(block_score(bundle, item));
  return metrics::lower_level_solve_exact(scores, l.k_sel, l.eps_sel, l.tau1, l.tau2);
}

namespace {

std::vector<int> full_range(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

double BilevelProblem::eval_full(const ModelBundle& bundle) const {
  Vec lam(lowers_.size(), 0.0);
  for (int r = 0; r < num_lower(); ++r)
    lam[static_cast<std::size_t>(r)] = lower_solve_exact(bundle, r);
  const int m = num_blocks();
  Vec vals(static_cast<std::size_t>(m), 0.0);
  parallel_for(m, [&](int i) {
    double f = 1.0;
    if (inner_) {
      const auto full = full_range(inner_->inner_set_size(i));
      f = inner_->outer_eval(i, inner_->inner_eval(bundle, i, full).g).f;
    }
    double phi = 1.0;
    if (phi_kind_ != PhiKind::None) {
      Vec block_lam;
      for (int r : block_lowers(i)) block_lam.push_back(lam[static_cast<std::size_t>(r)]);
      const int nphi = phi_set_size(i);
      const auto batch = full_range(std::max(nphi, 1));
      phi = phi_eval(bundle, i, block_lam, nphi > 0 ? std::span<const int>(batch)
                                                    : std::span<const int>{})
                .value;
    }
    vals[static_cast<std::size_t>(i)] = f * phi;
  });
  double total = 0.0;
  for (double v : vals) total += v;
  return total / static_cast<double>(m);
}

Vec BilevelProblem::exact_hypergradient(const ModelBundle& bundle) const {
  const int d = bundle.dim();
  Vec lam(lowers_.size(), 0.0);
  std::vector<double> hess(lowers_.size(), 1.0);
  std::vector<Vec> cross(lowers_.size());
  for (int r = 0; r < num_lower(); ++r) {
    lam[static_cast<std::size_t>(r)] = lower_solve_exact(bundle, r);
    const auto full = full_range(static_cast<int>(lower(r).set.size()));
    hess[static_cast<std::size_t>(r)] =
        lower_hess(bundle, r, lam[static_cast<std::size_t>(r)], full);
    cross[static_cast<std::size_t>(r)] =
        lower_cross(bundle, r, lam[static_cast<std::size_t>(r)], full);
  }
  const int m = num_blocks();
  std::vector<Vec> grads(static_cast<std::size_t>(m));
  parallel_for(m, [&](int i) {
    Vec g(static_cast<std::size_t>(d), 0.0);
    double f = 1.0;
    std::array<double, 2> df{0.0, 0.0};
    InnerEval in;
    if (inner_) {
      const auto full = full_range(inner_->inner_set_size(i));
      in = inner_->inner_eval(bundle, i, full);
      const OuterEval fe = inner_->outer_eval(i, in.g);
      f = fe.f;
      df = fe.df;
    }
    PhiEval phi;
    if (phi_kind_ != PhiKind::None) {
      Vec block_lam;
      for (int r : block_lowers(i)) block_lam.push_back(lam[static_cast<std::size_t>(r)]);
      const int nphi = phi_set_size(i);
      const auto batch = full_range(std::max(nphi, 1));
      phi = phi_eval(bundle, i, block_lam, nphi > 0 ? std::span<const int>(batch)
                                                    : std::span<const int>{});
    } else {
      phi.value = 1.0;
      phi.w_grad.assign(static_cast<std::size_t>(d), 0.0);
    }
    // (grad_w phi - sum_r cross_r hess_r^{-1} dphi/dlambda_r) f + phi grad(f o g)
    axpy(g, f, phi.w_grad);
    int slot = 0;
    for (int r : block_lowers(i)) {
      const double w = -phi.dlambda[static_cast<std::size_t>(slot)] /
                       hess[static_cast<std::size_t>(r)] * f;
      axpy(g, w, cross[static_cast<std::size_t>(r)]);
      ++slot;
    }
    if (inner_) {
      for (int c = 0; c < inner_->inner_dim(); ++c)
        axpy(g, phi.value * df[static_cast<std::size_t>(c)],
             in.grad[static_cast<std::size_t>(c)]);
    }
    grads[static_cast<std::size_t>(i)] = std::move(g);
  });
  Vec total(static_cast<std::size_t>(d), 0.0);
  for (const auto& g : grads) axpy(total, 1.0 / static_cast<double>(m), g);
  return total;
}

// ---------------------------------------------------------------------------
// CVaR
// ---------------------------------------------------------------------------

CvarProblem build_cvar(const ObjectiveSpec& raw_spec, const Dataset& data,
                       const std::vector<ScoreModelSpec>& models) {
  ObjectiveSpec spec = with_defaults(raw_spec);
  spec.validate();
  if (spec.kind != ObjectiveKind::PaucCvarOneWay)
    throw std::invalid_argument("build_cvar: kind must be pauc_cvar_oneway");
  if (models.size() != 1)
    throw std::invalid_argument("build_cvar: objective needs 1 model");
  const auto s = split_binary(data, "build_cvar");
  CvarProblem p;
  p.spec_ = spec;
  p.data_ = std::make_shared<Dataset>(data);
  p.pos_ = s.pos;
  p.neg_ = s.neg;
  return p;
}

double CvarProblem::pair_loss_value(const ModelBundle& bundle, int block,
                                    int neg_pos) const {
  const double hp = score_scalar(
      bundle.models[0], data_->binary.x[static_cast<std::size_t>(
                            pos_[static_cast<std::size_t>(block)])]);
  const double hn = score_scalar(
      bundle.models[0], data_->binary.x[static_cast<std::size_t>(
                            neg_[static_cast<std::size_t>(neg_pos)])]);
  return pair_loss(spec_.surrogate, hn - hp).value;
}

double CvarProblem::s_subgrad(const ModelBundle& bundle, int block, double s,
                              std::span<const int> batch) const {
  double frac = 0.0;
  for (int pos : batch)
    if (pair_loss_value(bundle, block, pos) > s) frac += 1.0;
  return 1.0 - frac / (spec_.beta * static_cast<double>(batch.size()));
}

Vec CvarProblem::w_subgrad(const ModelBundle& bundle, int block, double s,
                           std::span<const int> batch) const {
  Vec out(static_cast<std::size_t>(bundle.dim()), 0.0);
  const Vec& xp = data_->binary.x[static_cast<std::size_t>(pos_[static_cast<std::size_t>(block)])];
  const double hp = score_scalar(bundle.models[0], xp);
  const double inv = 1.0 / (spec_.beta * static_cast<double>(batch.size()));
  double anchor_coeff = 0.0;
  for (int pos : batch) {
    const Vec& xn = data_->binary.x[static_cast<std::size_t>(neg_[static_cast<std::size_t>(pos)])];
    const double hn = score_scalar(bundle.models[0], xn);
    const LossEval le = pair_loss(spec_.surrogate, hn - hp);
    if (le.value <= s) continue;  // kink takes the 0 element
    add_vjp(out, bundle, 0, xn, kOne, inv * le.deriv);
    anchor_coeff -= inv * le.deriv;
  }
  add_vjp(out, bundle, 0, xp, kOne, anchor_coeff);
  return out;
}

double CvarProblem::eval_full(const ModelBundle& bundle) const {
  const int m = num_blocks();
  Vec vals(static_cast<std::size_t>(m), 0.0);
  parallel_for(m, [&](int i) {
    Vec losses;
    losses.reserve(neg_.size());
    for (int j = 0; j < neg_count(); ++j)
      losses.push_back(pair_loss_value(bundle, i, j));
    vals[static_cast<std::size_t>(i)] = metrics::cvar_exact(losses, spec_.beta).value;
  });
  double total = 0.0;
  for (double v : vals) total += v;
  return total / static_cast<double>(m);
}

Vec CvarProblem::full_gradient(const ModelBundle& bundle) const {
  // d/dw of min_s [s + psi/beta]: at the minimizer s* = l_[k] the k-th
  // largest pair loss itself moves with w, so the boundary term carries
  // weight 1 - (k-1)/(beta n-). Tie-free instances assumed.
  const int m = num_blocks();
  const int d = bundle.dim();
  const double n_neg = static_cast<double>(neg_.size());
  const int k = static_cast<int>(std::ceil(spec_.beta * n_neg - 1e-9));
  std::vector<Vec> grads(static_cast<std::size_t>(m));
  parallel_for(m, [&](int i) {
    Vec losses;
    losses.reserve(neg_.size());
    for (int j = 0; j < neg_count(); ++j)
      losses.push_back(pair_loss_value(bundle, i, j));
    const double s_star = metrics::kth_largest(losses, k);
    const Vec& xp =
        data_->binary.x[static_cast<std::size_t>(pos_[static_cast<std::size_t>(i)])];
    const double hp = score_scalar(bundle.models[0], xp);
    Vec g(static_cast<std::size_t>(d), 0.0);
    double anchor_coeff = 0.0;
    bool boundary_taken = false;
    for (int j = 0; j < neg_count(); ++j) {
      double coeff = 0.0;
      if (losses[static_cast<std::size_t>(j)] > s_star) {
        coeff = 1.0 / (spec_.beta * n_neg);
      } else if (!boundary_taken && losses[static_cast<std::size_t>(j)] == s_star) {
        coeff = 1.0 - static_cast<double>(k - 1) / (spec_.beta * n_neg);
        boundary_taken = true;
      } else {
        continue;
      }
      const Vec& xn =
          data_->binary.x[static_cast<std::size_t>(neg_[static_cast<std::size_t>(j)])];
      const double hn = score_scalar(bundle.models[0], xn);
      const LossEval le = pair_loss(spec_.surrogate, hn - hp);
      add_vjp(g, bundle, 0, xn, kOne, coeff * le.deriv);
      anchor_coeff -= coeff * le.deriv;
    }
    add_vjp(g, bundle, 0, xp, kOne, anchor_coeff);
    grads[static_cast<std::size_t>(i)] = std::move(g);
  });
  Vec total(static_cast<std::size_t>(d), 0.0);
  for (const auto& g : grads) axpy(total, 1.0 / static_cast<double>(m), g);
  return total;
}

// ---------------------------------------------------------------------------

Problem build_problem(const ObjectiveSpec& spec, const Dataset& data,
                      const std::vector<ScoreModelSpec>& models) {
  if (is_fcco_kind(spec.kind)) return build_fcco(spec, data, models);
  if (spec.kind == ObjectiveKind::AurocMinMax) return build_minmax(spec, data, models);
  if (is_bilevel_kind(spec.kind)) return build_bilevel(spec, data, models);
  return build_cvar(spec, data, models);
}

}  // namespace xrisk
