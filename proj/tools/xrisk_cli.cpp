// Command-line front end: train / eval / bench driven by a JSON config.
// Exit codes: 0 ok, 1 configuration error, 2 numerical abort.

#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xrisk/train.hpp"

int main(int argc, char** argv) {
  CLI::App app{"stochastic optimization of X-risks (AUC, ranking and "
               "contrastive surrogates)"};
  app.require_subcommand(1);

  std::string train_config;
  auto* train = app.add_subcommand("train", "optimize an objective from a config file");
  train->add_option("config", train_config, "JSON config path")->required();

  std::string eval_model, eval_data;
  std::vector<std::string> eval_metrics;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with exact metric oracles");
  eval->add_option("--model", eval_model, "model checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset file (libsvm / ranking CSV / pool CSV)")
      ->required();
  eval->add_option("--metrics", eval_metrics,
                   "metric names (default: per-dataset standard set)");

  std::string bench_config;
  auto* bench = app.add_subcommand(
      "bench", "compare sox vs naive_sgd over a B2 grid from a config file");
  bench->add_option("config", bench_config, "JSON config path")->required();

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return xrisk::cmd_train(train_config);
  if (eval->parsed()) return xrisk::cmd_eval(eval_model, eval_data, eval_metrics);
  return xrisk::cmd_bench(bench_config);
}
