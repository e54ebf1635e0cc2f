#include "xrisk/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace xrisk {

namespace fs = std::filesystem;

Dataset make_dataset(const DataConfig& cfg) {
  if (cfg.source == "gen_binary")
    return gen_binary(cfg.n_pos, cfg.n_neg, cfg.dim, cfg.delta, cfg.seed);
  if (cfg.source == "gen_ranking")
    return gen_ranking(cfg.queries, cfg.items, cfg.levels, cfg.signal, cfg.dim,
                       cfg.seed);
  if (cfg.source == "gen_pool")
    return gen_pool(cfg.n, cfg.dim, cfg.classes, cfg.separation, cfg.seed, cfg.aug);
  if (cfg.source == "libsvm") return load_libsvm(cfg.path);
  if (cfg.source == "csv_ranking") return load_csv_ranking(cfg.path);
  if (cfg.source == "csv_pool") {
    Dataset ds = load_csv_pool(cfg.path);
    ds.pool.aug = cfg.aug;
    return ds;
  }
  throw std::invalid_argument("config key 'data.source' is unknown: " + cfg.source);
}

namespace {

int dataset_dim(const Dataset& ds) {
  switch (ds.kind) {
    case DatasetKind::Binary: return ds.binary.dim;
    case DatasetKind::Ranking: return ds.ranking.dim;
    case DatasetKind::ContrastivePool: return ds.pool.dim;
  }
  return 0;
}

struct BinaryScores {
  Vec pos;
  Vec neg;
  Vec all;
  std::vector<int> labels;
};

BinaryScores binary_scores(const ModelBundle& bundle, const Dataset& data) {
  BinaryScores s;
  for (std::size_t i = 0; i < data.binary.x.size(); ++i) {
    const double h = score_scalar(bundle.models[0], data.binary.x[i]);
    s.all.push_back(h);
    s.labels.push_back(data.binary.y[i]);
    (data.binary.y[i] > 0 ? s.pos : s.neg).push_back(h);
  }
  return s;
}

[[noreturn]] void unknown_metric(const std::string& name) {
  throw std::invalid_argument(
      "unknown metric '" + name +
      "'; valid names: auroc, ap, prec@K, rec@K, patr@K, pap@K, "
      "pauc:<alpha>:<beta>, pauc_paper:<alpha>:<beta>, tpauc:<alpha>:<beta>, "
      "ndcg, ndcg@K, map");
}

int parse_at_k(const std::string& name, const std::string& prefix) {
  const std::string tail = name.substr(prefix.size());
  try {
    return std::stoi(tail);
  } catch (const std::exception&) {
    unknown_metric(name);
  }
}

bool parse_band(const std::string& name, const std::string& prefix, double* a,
                double* b) {
  std::string tail = name.substr(prefix.size());
  const auto colon = tail.find(':');
  if (colon == std::string::npos) return false;
  try {
    *a = std::stod(tail.substr(0, colon));
    *b = std::stod(tail.substr(colon + 1));
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

}  // namespace

metrics::MetricReport compute_metrics(const ModelBundle& bundle,
                                      const Dataset& data,
                                      const std::vector<std::string>& names) {
  metrics::MetricReport report;
  if (names.empty()) return report;
  if (data.kind == DatasetKind::Binary) {
    const BinaryScores s = binary_scores(bundle, data);
    for (const auto& name : names) {
      if (name == "auroc")
        report[name] = metrics::auroc_exact(s.pos, s.neg);
      else if (name == "ap")
        report[name] = metrics::average_precision(s.pos, s.neg);
      else if (name.rfind("prec@", 0) == 0)
        report[name] =
            metrics::precision_recall_at_k(s.all, s.labels, parse_at_k(name, "prec@"))
                .precision;
      else if (name.rfind("rec@", 0) == 0)
        report[name] =
            metrics::precision_recall_at_k(s.all, s.labels, parse_at_k(name, "rec@"))
                .recall;
      else if (name.rfind("patr@", 0) == 0)
        report[name] =
            metrics::precision_at_recall(s.all, s.labels, parse_at_k(name, "patr@"));
      else if (name.rfind("pap@", 0) == 0)
        report[name] = metrics::pap_at_k_exact(s.all, s.labels, parse_at_k(name, "pap@"));
      else if (name.rfind("pauc_paper:", 0) == 0) {
        double a, b;
        if (!parse_band(name, "pauc_paper:", &a, &b)) unknown_metric(name);
        report[name] = metrics::pauc_exact(s.pos, s.neg, a, b, false,
                                           metrics::PaucNorm::Paper);
      } else if (name.rfind("pauc:", 0) == 0) {
        double a, b;
        if (!parse_band(name, "pauc:", &a, &b)) unknown_metric(name);
        report[name] =
            metrics::pauc_exact(s.pos, s.neg, a, b, false, metrics::PaucNorm::Band);
      } else if (name.rfind("tpauc:", 0) == 0) {
        double a, b;
        if (!parse_band(name, "tpauc:", &a, &b)) unknown_metric(name);
        report[name] =
            metrics::pauc_exact(s.pos, s.neg, a, b, true, metrics::PaucNorm::Band);
      } else {
        unknown_metric(name);
      }
    }
    return report;
  }
  if (data.kind == DatasetKind::Ranking) {
    for (const auto& name : names) {
      if (name == "map") {
        std::vector<metrics::QueryScores> queries;
        for (const auto& q : data.ranking.queries) {
          metrics::QueryScores qs;
          for (const auto& x : q.x)
            qs.scores.push_back(score_scalar(bundle.models[0], x));
          qs.relevance = q.rel;
          queries.push_back(std::move(qs));
        }
        report[name] = metrics::map_exact(queries);
      } else if (name == "ndcg" || name.rfind("ndcg@", 0) == 0) {
        const int k = name == "ndcg" ? 0 : parse_at_k(name, "ndcg@");
        double total = 0.0;
        for (const auto& q : data.ranking.queries) {
          Vec scores;
          for (const auto& x : q.x)
            scores.push_back(score_scalar(bundle.models[0], x));
          total += metrics::ndcg_exact(scores, q.rel, k);
        }
        report[name] = total / static_cast<double>(data.ranking.queries.size());
      } else {
        unknown_metric(name);
      }
    }
    return report;
  }
  // contrastive pools: the exact objective value is tracked in the trace;
  // no standalone metric names are defined for them
  for (const auto& name : names) unknown_metric(name);
  return report;
}

std::vector<std::string> default_metrics(const Dataset& data) {
  switch (data.kind) {
    case DatasetKind::Binary: return {"auroc", "ap"};
    case DatasetKind::Ranking: return {"ndcg", "map"};
    case DatasetKind::ContrastivePool: return {};
  }
  return {};
}

std::vector<ScoreModel> make_models(const RunConfig& cfg) {
  std::vector<ScoreModel> models;
  const int count = required_models(cfg.objective.kind);
  for (int i = 0; i < count; ++i)
    models.push_back(init_model(cfg.model, cfg.run.seed + static_cast<std::uint64_t>(i)));
  return models;
}

TrainOutput run_training(const RunConfig& cfg) {
  cfg.validate();
  const Dataset data = make_dataset(cfg.data);
  if (dataset_dim(data) != cfg.model.input_dim)
    throw std::invalid_argument(
        "config key 'model.input_dim' does not match the data dimension (" +
        std::to_string(dataset_dim(data)) + ")");

  std::vector<ScoreModel> models = make_models(cfg);
  std::vector<ScoreModelSpec> specs;
  for (const auto& m : models) specs.push_back(m.spec);
  const ObjectiveSpec spec = with_defaults(cfg.objective);
  const Problem problem = build_problem(spec, data, specs);

  const int m = std::visit([](const auto& p) { return p.num_blocks(); }, problem);
  ScheduleConfig sched = cfg.optimizer.sched;
  if (cfg.optimizer.use_theorem) {
    SolverFamily family = SolverFamily::Fcco;
    if (std::holds_alternative<MinMaxProblem>(problem)) family = SolverFamily::MinMax;
    if (std::holds_alternative<BilevelProblem>(problem)) family = SolverFamily::Bilevel;
    const int b1 = std::min(sched.b1, m);
    ScheduleConfig derived = theorem_schedule(cfg.optimizer.theorem_eps, b1,
                                              sched.b2, m, cfg.optimizer.constants,
                                              family);
    derived.update_style = sched.update_style;
    derived.beta2 = sched.beta2;
    derived.adam_eps = sched.adam_eps;
    derived.b1 = sched.b1;
    sched = derived;
  }
  sched.iters = cfg.run.iters >= 0 ? cfg.run.iters : sched.iters;

  ModelBundle bundle{std::move(models)};
  RunHooks hooks;
  hooks.log_every = cfg.run.log_every;
  hooks.eval_every = cfg.run.eval_every;
  const std::vector<std::string> metric_names =
      cfg.run.metrics.empty() ? default_metrics(data) : cfg.run.metrics;
  if (!metric_names.empty())
    hooks.metric_fn = [&data, metric_names](const ModelBundle& b) {
      return compute_metrics(b, data, metric_names);
    };

  const SolverAlg alg =
      cfg.optimizer.algorithm == "naive_sgd" ? SolverAlg::NaiveSgd : SolverAlg::Sox;
  const auto t0 = std::chrono::steady_clock::now();
  RunResult rr = run(problem, std::move(bundle), sched, cfg.run.seed, alg, hooks);

  TrainOutput out;
  out.bundle = std::move(rr.bundle);
  out.trace = std::move(rr.trace);
  out.minmax_extras = std::move(rr.minmax_extras);
  out.final_metrics = compute_metrics(out.bundle, data, metric_names);
  out.final_exact_objective = exact_objective(problem, out.bundle, out.minmax_extras);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.resolved_schedule = sched;
  return out;
}

std::string run_output_dir(const RunConfig& cfg) {
  return cfg.run.output_dir + "/" + objective_kind_name(cfg.objective.kind) + "_" +
         cfg.optimizer.algorithm + "_seed" + std::to_string(cfg.run.seed);
}

namespace {

void write_metrics_csv(const std::string& path, const metrics::MetricReport& report,
                       double exact_objective) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "metric,value\n";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", exact_objective);
  out << "objective," << buf << '\n';
  for (const auto& [name, value] : report) {
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out << name << ',' << buf << '\n';
  }
}

Dataset sniff_load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open data file " + path);
  std::string first;
  std::getline(in, first);
  in.close();
  if (first.rfind("query_id,", 0) == 0) return load_csv_ranking(path);
  if (first.rfind("label,", 0) == 0) return load_csv_pool(path);
  return load_libsvm(path);
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const numerical_error& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int cmd_train(const std::string& config_path) {
  return guarded([&] {
    const RunConfig cfg = load_config_file(config_path);
    const TrainOutput out = run_training(cfg);
    const std::string dir = run_output_dir(cfg);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < out.bundle.models.size(); ++i)
      save_model(out.bundle.models[i],
                 dir + (i == 0 ? "/model.txt" : "/model" + std::to_string(i) + ".txt"));
    write_trace_csv(dir + "/trace.csv", out.trace, cfg.run.measure_wall);
    write_metrics_csv(dir + "/metrics.csv", out.final_metrics,
                      out.final_exact_objective);
    std::ofstream echo(dir + "/config.json");
    echo << config_to_json(cfg);
    std::cout << dir << '\n';
  });
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::vector<std::string>& metric_names) {
  return guarded([&] {
    ModelBundle bundle{{load_model(model_path)}};
    const Dataset data = sniff_load(data_path);
    const int dim = dataset_dim(data);
    if (bundle.models[0].spec.input_dim != dim)
      throw std::invalid_argument("model input_dim " +
                                  std::to_string(bundle.models[0].spec.input_dim) +
                                  " does not match data dimension " +
                                  std::to_string(dim));
    const std::vector<std::string> names =
        metric_names.empty() ? default_metrics(data) : metric_names;
    const metrics::MetricReport report = compute_metrics(bundle, data, names);
    std::cout << "metric,value\n";
    char buf[48];
    for (const auto& [name, value] : report) {
      std::snprintf(buf, sizeof(buf), "%.17g", value);
      std::cout << name << ',' << buf << '\n';
    }
  });
}

int cmd_bench(const std::string& config_path) {
  return guarded([&] {
    const RunConfig base = load_config_file(config_path);
    if (base.bench.b2_grid.empty())
      throw std::invalid_argument("config key 'bench.b2_grid' is required for bench");
    fs::create_directories(base.run.output_dir);
    const std::string out_path = base.run.output_dir + "/bench.csv";
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);

    // column set fixed up front so every row lines up
    const Dataset probe = make_dataset(base.data);
    const std::vector<std::string> metric_names =
        base.run.metrics.empty() ? default_metrics(probe) : base.run.metrics;
    out << "method,B2,final_objective,wall_seconds";
    for (const auto& name : metric_names) out << ",metric:" << name;
    out << '\n';

    int cell = 0;
    char buf[48];
    for (const std::string method : {"sox", "naive_sgd"}) {
      for (int b2 : base.bench.b2_grid) {
        RunConfig cfg = base;
        cfg.optimizer.algorithm = method;
        cfg.optimizer.sched.b2 = b2;
        cfg.run.seed = base.run.seed + static_cast<std::uint64_t>(cell);
        cfg.run.metrics = metric_names;
        const TrainOutput res = run_training(cfg);
        out << method << ',' << b2 << ',';
        std::snprintf(buf, sizeof(buf), "%.10g", res.final_exact_objective);
        out << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.3f", res.wall_seconds);
        out << buf;
        for (const auto& name : metric_names) {
          out << ',';
          const auto it = res.final_metrics.find(name);
          if (it != res.final_metrics.end()) {
            std::snprintf(buf, sizeof(buf), "%.10g", it->second);
            out << buf;
          }
        }
        out << '\n';
        ++cell;
      }
    }
    std::cout << out_path << '\n';
  });
}

}  // namespace xrisk
