#include "xrisk/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace xrisk {

using nlohmann::json;

namespace {

[[noreturn]] void key_fail(const std::string& key, const std::string& what) {
  throw std::invalid_argument("config key '" + key + "' " + what);
}

const json* find(const json& j, const std::string& key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <typename T>
T get_as(const json& j, const std::string& qualified) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    key_fail(qualified, "has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const std::string& section, const std::string& key, T def) {
  const json* v = find(j, key);
  if (!v) return def;
  return get_as<T>(*v, section + "." + key);
}

template <typename T>
T get_req(const json& j, const std::string& section, const std::string& key) {
  const json* v = find(j, key);
  if (!v) key_fail(section + "." + key, "is required");
  return get_as<T>(*v, section + "." + key);
}

const char* surrogate_param_key(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::SquaredHinge:
    case SurrogateKind::Square:
      return "c";
    case SurrogateKind::Logistic:
      return "scale";
    case SurrogateKind::Sigmoid:
      return "temperature";
    case SurrogateKind::Indicator:
      return "";
  }
  return "";
}

Surrogate parse_surrogate(const json& j, const std::string& section) {
  Surrogate s;
  s.kind = surrogate_kind_from_name(get_req<std::string>(j, section, "kind"));
  const char* pkey = surrogate_param_key(s.kind);
  if (*pkey) s.param = get_or<double>(j, section, pkey, 1.0);
  return s;
}

json surrogate_json(const Surrogate& s) {
  json j;
  j["kind"] = surrogate_kind_name(s.kind);
  const char* pkey = surrogate_param_key(s.kind);
  if (*pkey) j[pkey] = s.param;
  return j;
}

ObjectiveSpec parse_objective(const json& j) {
  ObjectiveSpec spec;
  spec.kind = objective_kind_from_name(get_req<std::string>(j, "objective", "kind"));
  spec.alpha = get_or<double>(j, "objective", "alpha", spec.alpha);
  spec.beta = get_or<double>(j, "objective", "beta", spec.beta);
  spec.tau = get_or<double>(j, "objective", "tau", spec.tau);
  spec.tau1 = get_or<double>(j, "objective", "tau1", spec.tau1);
  spec.tau2 = get_or<double>(j, "objective", "tau2", spec.tau2);
  spec.eps_sel = get_or<double>(j, "objective", "eps_sel", spec.eps_sel);
  spec.eps_gcl = get_or<double>(j, "objective", "eps_gcl", spec.eps_gcl);
  spec.p = get_or<double>(j, "objective", "p", spec.p);
  spec.lambda_dro = get_or<double>(j, "objective", "lambda_dro", spec.lambda_dro);
  spec.margin_c = get_or<double>(j, "objective", "c", spec.margin_c);
  spec.k = get_or<int>(j, "objective", "K", spec.k);
  spec.tasks = get_or<int>(j, "objective", "tasks", spec.tasks);
  spec.include_positive =
      get_or<bool>(j, "objective", "include_positive", spec.include_positive);
  if (const json* s = find(j, "surrogate")) {
    spec.surrogate = parse_surrogate(*s, "objective.surrogate");
    spec.surrogate_outer = spec.surrogate;
    spec.surrogate_set = true;
  }
  if (const json* s = find(j, "surrogate_outer")) {
    spec.surrogate_outer = parse_surrogate(*s, "objective.surrogate_outer");
    spec.surrogate_set = true;
  }
  if (const json* g = find(j, "gate"))
    spec.gate_tau = get_or<double>(*g, "objective.gate", "tau_phi", spec.gate_tau);
  return spec;
}

json objective_json(const ObjectiveSpec& raw) {
  const ObjectiveSpec spec = with_defaults(raw);
  json j;
  j["kind"] = objective_kind_name(spec.kind);
  j["alpha"] = spec.alpha;
  j["beta"] = spec.beta;
  j["tau"] = spec.tau;
  j["tau1"] = spec.tau1;
  j["tau2"] = spec.tau2;
  j["eps_sel"] = spec.eps_sel;
  j["eps_gcl"] = spec.eps_gcl;
  j["p"] = spec.p;
  j["lambda_dro"] = spec.lambda_dro;
  j["c"] = spec.margin_c;
  j["K"] = spec.k;
  j["tasks"] = spec.tasks;
  j["include_positive"] = spec.include_positive;
  j["surrogate"] = surrogate_json(spec.surrogate);
  j["surrogate_outer"] = surrogate_json(spec.surrogate_outer);
  j["gate"] = json{{"tau_phi", spec.gate_tau}};
  return j;
}

ScoreModelSpec parse_model(const json& j) {
  ScoreModelSpec spec;
  const std::string kind = get_req<std::string>(j, "model", "kind");
  if (kind == "linear")
    spec.kind = ModelKind::Linear;
  else if (kind == "mlp")
    spec.kind = ModelKind::Mlp;
  else
    key_fail("model.kind", "must be linear or mlp");
  spec.input_dim = get_req<int>(j, "model", "input_dim");
  spec.hidden_dims = get_or<std::vector<int>>(j, "model", "hidden_dims", {});
  const std::string act = get_or<std::string>(j, "model", "activation", "tanh");
  if (act == "tanh")
    spec.activation = Activation::Tanh;
  else if (act == "softplus")
    spec.activation = Activation::Softplus;
  else
    key_fail("model.activation", "must be tanh or softplus");
  spec.output_dim = get_or<int>(j, "model", "output_dim", 1);
  spec.normalize_output = get_or<bool>(j, "model", "normalize_output", false);
  return spec;
}

json model_json(const ScoreModelSpec& spec) {
  json j;
  j["kind"] = spec.kind == ModelKind::Linear ? "linear" : "mlp";
  j["input_dim"] = spec.input_dim;
  j["hidden_dims"] = spec.hidden_dims;
  j["activation"] = spec.activation == Activation::Tanh ? "tanh" : "softplus";
  j["output_dim"] = spec.output_dim;
  j["normalize_output"] = spec.normalize_output;
  return j;
}

AugmentationSpec parse_aug(const json& j) {
  AugmentationSpec aug;
  aug.seed = get_or<std::uint64_t>(j, "data.aug", "seed", 0);
  if (const json* ops = find(j, "ops")) {
    for (const auto& op : *ops) {
      const std::string kind = get_req<std::string>(op, "data.aug.ops", "kind");
      AugmentOp a;
      if (kind == "gauss_noise") {
        a.kind = AugmentKind::GaussNoise;
        a.a = get_or<double>(op, "data.aug.ops", "sigma", 0.1);
      } else if (kind == "dropout") {
        a.kind = AugmentKind::Dropout;
        a.a = get_or<double>(op, "data.aug.ops", "rate", 0.1);
      } else if (kind == "scale") {
        a.kind = AugmentKind::Scale;
        a.a = get_or<double>(op, "data.aug.ops", "lo", 0.9);
        a.b = get_or<double>(op, "data.aug.ops", "hi", 1.1);
      } else {
        key_fail("data.aug.ops.kind", "must be gauss_noise, dropout or scale");
      }
      aug.ops.push_back(a);
    }
  }
  return aug;
}

json aug_json(const AugmentationSpec& aug) {
  json j;
  j["seed"] = aug.seed;
  json ops = json::array();
  for (const auto& a : aug.ops) {
    json op;
    switch (a.kind) {
      case AugmentKind::GaussNoise:
        op["kind"] = "gauss_noise";
        op["sigma"] = a.a;
        break;
      case AugmentKind::Dropout:
        op["kind"] = "dropout";
        op["rate"] = a.a;
        break;
      case AugmentKind::Scale:
        op["kind"] = "scale";
        op["lo"] = a.a;
        op["hi"] = a.b;
        break;
    }
    ops.push_back(op);
  }
  j["ops"] = ops;
  return j;
}

DataConfig parse_data(const json& j) {
  DataConfig d;
  d.source = get_req<std::string>(j, "data", "source");
  d.path = get_or<std::string>(j, "data", "path", "");
  d.seed = get_or<std::uint64_t>(j, "data", "seed", 0);
  d.n_pos = get_or<int>(j, "data", "n_pos", d.n_pos);
  d.n_neg = get_or<int>(j, "data", "n_neg", d.n_neg);
  d.queries = get_or<int>(j, "data", "queries", d.queries);
  d.items = get_or<int>(j, "data", "items", d.items);
  d.levels = get_or<int>(j, "data", "levels", d.levels);
  d.n = get_or<int>(j, "data", "n", d.n);
  d.classes = get_or<int>(j, "data", "classes", d.classes);
  d.dim = get_or<int>(j, "data", "dim", d.dim);
  d.delta = get_or<double>(j, "data", "delta", d.delta);
  d.signal = get_or<double>(j, "data", "signal", d.signal);
  d.separation = get_or<double>(j, "data", "separation", d.separation);
  if (const json* a = find(j, "aug")) d.aug = parse_aug(*a);
  return d;
}

json data_json(const DataConfig& d) {
  json j;
  j["source"] = d.source;
  if (!d.path.empty()) j["path"] = d.path;
  j["seed"] = d.seed;
  j["n_pos"] = d.n_pos;
  j["n_neg"] = d.n_neg;
  j["queries"] = d.queries;
  j["items"] = d.items;
  j["levels"] = d.levels;
  j["n"] = d.n;
  j["classes"] = d.classes;
  j["dim"] = d.dim;
  j["delta"] = d.delta;
  j["signal"] = d.signal;
  j["separation"] = d.separation;
  j["aug"] = aug_json(d.aug);
  return j;
}

OptimizerConfig parse_optimizer(const json& j) {
  OptimizerConfig o;
  o.algorithm = get_or<std::string>(j, "optimizer", "algorithm", "sox");
  if (o.algorithm != "sox" && o.algorithm != "naive_sgd")
    key_fail("optimizer.algorithm", "must be sox or naive_sgd");
  auto& s = o.sched;
  const std::string style = get_or<std::string>(j, "optimizer", "update_style", "momentum");
  if (style == "momentum")
    s.update_style = UpdateStyle::Momentum;
  else if (style == "adam")
    s.update_style = UpdateStyle::Adam;
  else
    key_fail("optimizer.update_style", "must be momentum or adam");
  s.b1 = get_or<int>(j, "optimizer", "B1", s.b1);
  s.b2 = get_or<int>(j, "optimizer", "B2", s.b2);
  if (const json* t = find(j, "theorem")) {
    o.use_theorem = true;
    o.theorem_eps = get_req<double>(*t, "optimizer.theorem", "eps");
    o.constants.c_gamma0 = get_or<double>(*t, "optimizer.theorem", "c_gamma0", 1.0);
    o.constants.c_gamma1 = get_or<double>(*t, "optimizer.theorem", "c_gamma1", 1.0);
    o.constants.c_eta = get_or<double>(*t, "optimizer.theorem", "c_eta", 1.0);
    o.constants.c_eta0 = get_or<double>(*t, "optimizer.theorem", "c_eta0", 1.0);
    o.constants.c_eta1 = get_or<double>(*t, "optimizer.theorem", "c_eta1", 1.0);
    o.constants.c_T = get_or<double>(*t, "optimizer.theorem", "c_T", 1.0);
  } else {
    s.gamma0 = get_or<double>(j, "optimizer", "gamma0", s.gamma0);
    s.gamma1 = get_or<double>(j, "optimizer", "gamma1", s.gamma1);
    s.beta1 = get_or<double>(j, "optimizer", "beta1", s.beta1);
    s.gamma_hess = get_or<double>(j, "optimizer", "gamma_hess", s.gamma_hess);
    s.eta = get_or<double>(j, "optimizer", "eta", s.eta);
    s.eta0 = get_or<double>(j, "optimizer", "eta0", s.eta0);
    s.eta1 = get_or<double>(j, "optimizer", "eta1", s.eta1);
  }
  s.beta2 = get_or<double>(j, "optimizer", "beta2", s.beta2);
  s.adam_eps = get_or<double>(j, "optimizer", "adam_eps", s.adam_eps);
  return o;
}

json optimizer_json(const OptimizerConfig& o) {
  json j;
  j["algorithm"] = o.algorithm;
  j["update_style"] = o.sched.update_style == UpdateStyle::Momentum ? "momentum" : "adam";
  j["B1"] = o.sched.b1;
  j["B2"] = o.sched.b2;
  if (o.use_theorem) {
    json t;
    t["eps"] = o.theorem_eps;
    t["c_gamma0"] = o.constants.c_gamma0;
    t["c_gamma1"] = o.constants.c_gamma1;
    t["c_eta"] = o.constants.c_eta;
    t["c_eta0"] = o.constants.c_eta0;
    t["c_eta1"] = o.constants.c_eta1;
    t["c_T"] = o.constants.c_T;
    j["theorem"] = t;
  } else {
    j["gamma0"] = o.sched.gamma0;
    j["gamma1"] = o.sched.gamma1;
    j["beta1"] = o.sched.beta1;
    j["gamma_hess"] = o.sched.gamma_hess;
    j["eta"] = o.sched.eta;
    j["eta0"] = o.sched.eta0;
    j["eta1"] = o.sched.eta1;
  }
  j["beta2"] = o.sched.beta2;
  j["adam_eps"] = o.sched.adam_eps;
  return j;
}

}  // namespace

void RunConfig::validate() const {
  with_defaults(objective).validate();
  model.validate();
  // run.T = -1 defers to the theorem schedule's iteration count
  if (run.iters < -1 || (run.iters == -1 && !optimizer.use_theorem))
    key_fail("run.T", "must be >= 0");
  if (run.log_every < 1) key_fail("run.log_every", "must be >= 1");
  if (run.eval_every < 0) key_fail("run.eval_every", "must be >= 0");
  if (run.output_dir.empty()) key_fail("run.output_dir", "must not be empty");

  // data source <-> objective family consistency
  const std::string& src = data.source;
  const bool src_binary = src == "gen_binary" || src == "libsvm";
  const bool src_ranking = src == "gen_ranking" || src == "csv_ranking";
  const bool src_pool = src == "gen_pool" || src == "csv_pool";
  if (!src_binary && !src_ranking && !src_pool)
    key_fail("data.source",
             "must be one of gen_binary, gen_ranking, gen_pool, libsvm, "
             "csv_ranking, csv_pool");
  const bool is_file = src == "libsvm" || src == "csv_ranking" || src == "csv_pool";
  if (is_file && data.path.empty()) key_fail("data.path", "is required for file sources");
  bool needs_ranking = false, needs_pool = false;
  switch (objective.kind) {
    case ObjectiveKind::Map:
    case ObjectiveKind::Ndcg:
    case ObjectiveKind::Listnet:
    case ObjectiveKind::TopkNdcg:
    case ObjectiveKind::TopkMap:
      needs_ranking = true;
      break;
    case ObjectiveKind::GclOneWay:
    case ObjectiveKind::GclTwoWay:
    case ObjectiveKind::SupconRatio:
    case ObjectiveKind::SupconLogRatio:
    case ObjectiveKind::SupconPerPair:
      needs_pool = true;
      break;
    default:
      break;
  }
  if (needs_ranking && !src_ranking)
    key_fail("data.source", "objective needs a ranking dataset");
  if (needs_pool && !src_pool)
    key_fail("data.source", "objective needs a contrastive pool");
  if (!needs_ranking && !needs_pool && !src_binary)
    key_fail("data.source", "objective needs a binary dataset");

  if ((objective.kind == ObjectiveKind::GclOneWay ||
       objective.kind == ObjectiveKind::GclTwoWay) &&
      !model.normalize_output)
    key_fail("model.normalize_output",
             "contrastive encoders must emit normalized embeddings");
  if (optimizer.algorithm == "naive_sgd") {
    const ObjectiveKind k = objective.kind;
    const bool fcco = !(k == ObjectiveKind::AurocMinMax ||
                        k == ObjectiveKind::PaucCvarOneWay ||
                        k == ObjectiveKind::PaucBilevelOneWay ||
                        k == ObjectiveKind::PaucBilevelTwoWay ||
                        k == ObjectiveKind::TopkNdcg || k == ObjectiveKind::TopkMap ||
                        k == ObjectiveKind::TopPush ||
                        k == ObjectiveKind::RecallKBilevel ||
                        k == ObjectiveKind::PrecAtRecall || k == ObjectiveKind::PapK);
    if (!fcco)
      key_fail("optimizer.algorithm",
               "naive_sgd only supports compositional objectives");
  }
}

RunConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  if (!j.contains("objective")) key_fail("objective", "is required");
  if (!j.contains("model")) key_fail("model", "is required");
  if (!j.contains("data")) key_fail("data", "is required");
  cfg.objective = parse_objective(j["objective"]);
  cfg.model = parse_model(j["model"]);
  cfg.data = parse_data(j["data"]);
  if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j["optimizer"]);
  if (const json* r = find(j, "run")) {
    cfg.run.iters = get_or<long>(*r, "run", "T", cfg.optimizer.use_theorem ? -1 : 1000);
    cfg.run.seed = get_or<std::uint64_t>(*r, "run", "seed", 0);
    cfg.run.log_every = get_or<long>(*r, "run", "log_every", 100);
    cfg.run.eval_every = get_or<long>(*r, "run", "eval_every", 0);
    cfg.run.output_dir = get_or<std::string>(*r, "run", "output_dir", "out");
    cfg.run.metrics = get_or<std::vector<std::string>>(*r, "run", "metrics", {});
    cfg.run.measure_wall = get_or<bool>(*r, "run", "measure_wall", false);
  } else if (cfg.optimizer.use_theorem) {
    cfg.run.iters = -1;  // take T from the schedule
  }
  if (const json* b = find(j, "bench"))
    cfg.bench.b2_grid = get_or<std::vector<int>>(*b, "bench", "b2_grid", {});
  cfg.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["objective"] = objective_json(cfg.objective);
  j["model"] = model_json(cfg.model);
  j["data"] = data_json(cfg.data);
  j["optimizer"] = optimizer_json(cfg.optimizer);
  json r;
  r["T"] = cfg.run.iters;
  r["seed"] = cfg.run.seed;
  r["log_every"] = cfg.run.log_every;
  r["eval_every"] = cfg.run.eval_every;
  r["output_dir"] = cfg.run.output_dir;
  r["metrics"] = cfg.run.metrics;
  r["measure_wall"] = cfg.run.measure_wall;
  j["run"] = r;
  if (!cfg.bench.b2_grid.empty()) j["bench"] = json{{"b2_grid", cfg.bench.b2_grid}};
  return j.dump(2) + "\n";
}

}  // namespace xrisk
