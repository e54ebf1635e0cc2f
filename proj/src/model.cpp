#include "xrisk/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xrisk/rng.hpp"

namespace xrisk {

namespace {

constexpr double kNormGuard = 1e-12;

double act(Activation a, double z) {
  if (a == Activation::Tanh) return std::tanh(z);
  // softplus, overflow-safe
  if (z > 30.0) return z + std::exp(-z);
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

double act_deriv(Activation a, double z) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return 1.0 / (1.0 + std::exp(-z));  // sigmoid
}

// layer sizes including input and output
std::vector<int> layer_dims(const ScoreModelSpec& spec) {
  std::vector<int> dims;
  dims.push_back(spec.input_dim);
  if (spec.kind == ModelKind::Mlp)
    for (int h : spec.hidden_dims) dims.push_back(h);
  dims.push_back(spec.output_dim);
  return dims;
}

}  // namespace

int ScoreModelSpec::param_count() const {
  if (kind == ModelKind::Linear) return input_dim * output_dim;
  int d = 0;
  const auto dims = layer_dims(*this);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    d += dims[l] * dims[l + 1] + dims[l + 1];  // weights + biases
  return d;
}

void ScoreModelSpec::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("model.input_dim must be positive");
  if (output_dim <= 0) throw std::invalid_argument("model.output_dim must be positive");
  if (output_dim == 1 && normalize_output)
    throw std::invalid_argument("model.normalize_output requires output_dim >= 2");
  if (kind == ModelKind::Mlp) {
    if (hidden_dims.empty() || hidden_dims.size() > 2)
      throw std::invalid_argument("model.hidden_dims must have one or two layers");
    for (int h : hidden_dims)
      if (h <= 0) throw std::invalid_argument("model.hidden_dims entries must be positive");
  } else {
    if (!hidden_dims.empty())
      throw std::invalid_argument("model.hidden_dims only valid for kind=mlp");
  }
}

ScoreModel init_model(const ScoreModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ScoreModel m{spec, Vec(static_cast<std::size_t>(spec.param_count()), 0.0)};
  if (spec.kind == ModelKind::Mlp) {
    Rng rng(mix64(seed, 0x6d6c70ULL));
    const auto dims = layer_dims(spec);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
      const std::size_t count =
          static_cast<std::size_t>(dims[l] * dims[l + 1] + dims[l + 1]);
      for (std::size_t i = 0; i < count; ++i)
        m.params[off + i] = bound * (2.0 * rng.uniform() - 1.0);
      off += count;
    }
  }
  return m;
}

namespace {

// Forward pass storing pre-activations and layer inputs for the backward
// sweep. For linear models only the raw output is kept.
struct ForwardCache {
  std::vector<Vec> inputs;   // input to each layer
  std::vector<Vec> preact;   // pre-activation per layer
  Vec raw_out;               // before normalization
};

ForwardCache forward(const ScoreModel& model, std::span<const double> x) {
  const auto& spec = model.spec;
  if (static_cast<int>(x.size()) != spec.input_dim)
    throw std::invalid_argument("score: feature dimension mismatch");
  ForwardCache c;
  if (spec.kind == ModelKind::Linear) {
    Vec out(static_cast<std::size_t>(spec.output_dim), 0.0);
    for (int o = 0; o < spec.output_dim; ++o) {
      const double* w = model.params.data() +
                        static_cast<std::size_t>(o) * spec.input_dim;
      double s = 0.0;
      for (int i = 0; i < spec.input_dim; ++i) s += w[i] * x[i];
      out[static_cast<std::size_t>(o)] = s;
    }
    c.raw_out = std::move(out);
    return c;
  }
  const auto dims = layer_dims(spec);
  Vec cur(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l], out = dims[l + 1];
    Vec z(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      const double* w = model.params.data() + off +
                        static_cast<std::size_t>(o) * in;
      double s = model.params[off + static_cast<std::size_t>(in) * out +
                              static_cast<std::size_t>(o)];  // bias
      for (int i = 0; i < in; ++i) s += w[i] * cur[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = s;
    }
    c.inputs.push_back(std::move(cur));
    c.preact.push_back(z);
    const bool last = (l + 2 == dims.size());
    cur.assign(z.size(), 0.0);
    for (std::size_t i = 0; i < z.size(); ++i)
      cur[i] = last ? z[i] : act(spec.activation, z[i]);
    off += static_cast<std::size_t>(in) * out + out;
  }
  c.raw_out = std::move(cur);
  return c;
}

Vec normalize(const Vec& raw) {
  const double n = std::max(norm2(raw), kNormGuard);
  Vec out(raw);
  for (double& v : out) v /= n;
  return out;
}

}  // namespace

Vec score(const ScoreModel& model, std::span<const double> x) {
  ForwardCache c = forward(model, x);
  if (model.spec.normalize_output) return normalize(c.raw_out);
  return c.raw_out;
}

double score_scalar(const ScoreModel& model, std::span<const double> x) {
  return score(model, x)[0];
}

Vec vjp(const ScoreModel& model, std::span<const double> x,
        std::span<const double> upstream) {
  const auto& spec = model.spec;
  if (static_cast<int>(upstream.size()) != spec.output_dim)
    throw std::invalid_argument("vjp: upstream dimension mismatch");
  ForwardCache c = forward(model, x);

  // Pull upstream through the normalization Jacobian (I - y y^T) / ||z||.
  Vec u(upstream.begin(), upstream.end());
  if (spec.normalize_output) {
    const double n = std::max(norm2(c.raw_out), kNormGuard);
    Vec y = normalize(c.raw_out);
    const double uy = dot(u, y);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = (u[i] - uy * y[i]) / n;
  }

  Vec grad(static_cast<std::size_t>(spec.param_count()), 0.0);
  if (spec.kind == ModelKind::Linear) {
    for (int o = 0; o < spec.output_dim; ++o)
      for (int i = 0; i < spec.input_dim; ++i)
        grad[static_cast<std::size_t>(o) * spec.input_dim + i] =
            u[static_cast<std::size_t>(o)] * x[i];
    return grad;
  }

  const auto dims = layer_dims(spec);
  // offsets of each layer's parameter block
  std::vector<std::size_t> offs(dims.size() - 1, 0);
  for (std::size_t l = 1; l < offs.size(); ++l)
    offs[l] = offs[l - 1] +
              static_cast<std::size_t>(dims[l - 1]) * dims[l] + dims[l];

  Vec delta = u;  // gradient w.r.t. the layer's (post-activation) output
  for (int l = static_cast<int>(dims.size()) - 2; l >= 0; --l) {
    const int in = dims[static_cast<std::size_t>(l)];
    const int out = dims[static_cast<std::size_t>(l) + 1];
    const bool last = (l == static_cast<int>(dims.size()) - 2);
    Vec dz(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      const double g =
          last ? delta[static_cast<std::size_t>(o)]
               : delta[static_cast<std::size_t>(o)] *
                     act_deriv(spec.activation,
                               c.preact[static_cast<std::size_t>(l)]
                                       [static_cast<std::size_t>(o)]);
      dz[static_cast<std::size_t>(o)] = g;
    }
    const Vec& layer_in = c.inputs[static_cast<std::size_t>(l)];
    for (int o = 0; o < out; ++o) {
      const std::size_t wrow =
          offs[static_cast<std::size_t>(l)] + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i)
        grad[wrow + static_cast<std::size_t>(i)] =
            dz[static_cast<std::size_t>(o)] * layer_in[static_cast<std::size_t>(i)];
      grad[offs[static_cast<std::size_t>(l)] +
           static_cast<std::size_t>(in) * out + static_cast<std::size_t>(o)] =
          dz[static_cast<std::size_t>(o)];  // bias
    }
    if (l > 0) {
      Vec next(static_cast<std::size_t>(in), 0.0);
      for (int i = 0; i < in; ++i) {
        double s = 0.0;
        for (int o = 0; o < out; ++o)
          s += dz[static_cast<std::size_t>(o)] *
               model.params[offs[static_cast<std::size_t>(l)] +
                            static_cast<std::size_t>(o) * in +
                            static_cast<std::size_t>(i)];
        next[static_cast<std::size_t>(i)] = s;
      }
      delta = std::move(next);
    }
  }
  return grad;
}

ScoreModel apply_update(const ScoreModel& model, const Vec& direction,
                        double step) {
  if (direction.size() != model.params.size())
    throw std::invalid_argument("apply_update: direction length mismatch");
  if (!std::isfinite(step))
    throw std::invalid_argument("apply_update: non-finite step");
  ScoreModel out = model;
  for (std::size_t i = 0; i < out.params.size(); ++i)
    out.params[i] -= step * direction[i];
  return out;
}

namespace {

const char* kind_name(ModelKind k) {
  return k == ModelKind::Linear ? "linear" : "mlp";
}
const char* act_name(Activation a) {
  return a == Activation::Tanh ? "tanh" : "softplus";
}

}  // namespace

void save_model(const ScoreModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << kind_name(model.spec.kind) << ' ' << model.spec.input_dim << ' '
      << model.spec.hidden_dims.size();
  for (int h : model.spec.hidden_dims) out << ' ' << h;
  out << ' ' << act_name(model.spec.activation) << ' ' << model.spec.output_dim
      << ' ' << (model.spec.normalize_output ? 1 : 0) << '\n';
  char buf[64];
  for (double p : model.params) {
    std::snprintf(buf, sizeof(buf), "%.17g", p);
    out << buf << '\n';
  }
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

ScoreModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  std::string kind, act;
  std::size_t nh = 0;
  ScoreModelSpec spec;
  in >> kind >> spec.input_dim >> nh;
  spec.hidden_dims.resize(nh);
  for (auto& h : spec.hidden_dims) in >> h;
  int norm = 0;
  in >> act >> spec.output_dim >> norm;
  if (!in) throw std::runtime_error("load_model: malformed header in " + path);
  spec.kind = (kind == "linear") ? ModelKind::Linear : ModelKind::Mlp;
  spec.activation = (act == "tanh") ? Activation::Tanh : Activation::Softplus;
  spec.normalize_output = norm != 0;
  spec.validate();
  ScoreModel model{spec, Vec(static_cast<std::size_t>(spec.param_count()))};
  for (auto& p : model.params)
    if (!(in >> p)) throw std::runtime_error("load_model: truncated params in " + path);
  return model;
}

Vec ModelBundle::flat_params() const {
  Vec flat;
  flat.reserve(static_cast<std::size_t>(dim()));
  for (const auto& m : models)
    flat.insert(flat.end(), m.params.begin(), m.params.end());
  return flat;
}

void ModelBundle::set_flat_params(std::span<const double> flat) {
  std::size_t off = 0;
  for (auto& m : models) {
    for (auto& p : m.params) p = flat[off++];
  }
}

void ModelBundle::update(std::span<const double> direction, double step) {
  std::size_t off = 0;
  for (auto& m : models)
    for (auto& p : m.params) p -= step * direction[off++];
}

}  // namespace xrisk
