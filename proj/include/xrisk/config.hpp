#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xrisk/data.hpp"
#include "xrisk/model.hpp"
#include "xrisk/objective.hpp"
#include "xrisk/optimizer.hpp"

namespace xrisk {

struct DataConfig {
  std::string source;  // gen_binary | gen_ranking | gen_pool |
                       // libsvm | csv_ranking | csv_pool
  std::string path;
  std::uint64_t seed = 0;
  // generator parameters
  int n_pos = 50, n_neg = 50;
  int queries = 10, items = 20, levels = 2;
  int n = 100, classes = 2;
  int dim = 5;
  double delta = 1.0, signal = 1.0, separation = 1.0;
  AugmentationSpec aug;
};

struct OptimizerConfig {
  std::string algorithm = "sox";  // sox | naive_sgd
  ScheduleConfig sched;
  bool use_theorem = false;  // derive the schedule from (eps, constants)
  double theorem_eps = 0.1;
  ScheduleConstants constants;
};

struct RunSection {
  long iters = 1000;
  std::uint64_t seed = 0;
  long log_every = 100;
  long eval_every = 0;
  std::string output_dir = "out";
  std::vector<std::string> metrics;
  bool measure_wall = false;  // keep emitted traces reproducible by default
};

struct BenchSection {
  std::vector<int> b2_grid;
};

struct RunConfig {
  ObjectiveSpec objective;
  ScoreModelSpec model;
  DataConfig data;
  OptimizerConfig optimizer;
  RunSection run;
  BenchSection bench;

  void validate() const;
};

RunConfig parse_config_json(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string config_to_json(const RunConfig& cfg);

}  // namespace xrisk
