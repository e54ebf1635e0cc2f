#pragma once

#include <string>
#include <vector>

#include "xrisk/config.hpp"
#include "xrisk/metrics.hpp"
#include "xrisk/trace.hpp"

namespace xrisk {

Dataset make_dataset(const DataConfig& cfg);

// Encoders seeded from run.seed (the second model, when required, uses
// run.seed + 1).
std::vector<ScoreModel> make_models(const RunConfig& cfg);

// Exact metric oracles addressed by name: auroc, ap, prec@K, rec@K, patr@K,
// pap@K, pauc:<a>:<b>, pauc_paper:<a>:<b>, tpauc:<a>:<b>, ndcg, ndcg@K, map.
metrics::MetricReport compute_metrics(const ModelBundle& bundle,
                                      const Dataset& data,
                                      const std::vector<std::string>& names);

std::vector<std::string> default_metrics(const Dataset& data);

struct TrainOutput {
  ModelBundle bundle;
  std::vector<TraceRecord> trace;
  metrics::MetricReport final_metrics;
  Vec minmax_extras;
  double final_exact_objective = 0.0;
  double wall_seconds = 0.0;
  ScheduleConfig resolved_schedule;
};

TrainOutput run_training(const RunConfig& cfg);

// Subcommand drivers shared by the command-line tool and the test suites.
// Exit codes: 0 success, 1 configuration/validation error, 2 numerical abort.
int cmd_train(const std::string& config_path);
int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::vector<std::string>& metric_names);
int cmd_bench(const std::string& config_path);

// Output directory for a run: <output_dir>/<objective>_<solver>_seed<k>
std::string run_output_dir(const RunConfig& cfg);

}  // namespace xrisk
