#include "xrisk/trace.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace xrisk {

namespace {

void write_num(std::ofstream& out, double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  out << buf;
}

}  // namespace

std::vector<std::string> trace_metric_names(const std::vector<TraceRecord>& trace) {
  std::set<std::string> names;
  for (const auto& rec : trace)
    for (const auto& [name, _] : rec.metric_values) names.insert(name);
  return {names.begin(), names.end()};
}

void write_trace_csv(const std::string& path,
                     const std::vector<TraceRecord>& trace, bool measured_wall) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path);
  const auto metric_names = trace_metric_names(trace);
  out << "iteration,wall_seconds,objective_estimate,exact_objective";
  for (const auto& name : metric_names) out << ",metric:" << name;
  out << ",grad_norm\n";
  for (const auto& rec : trace) {
    out << rec.iteration << ',';
    write_num(out, measured_wall ? rec.wall_seconds : 0.0);
    out << ',';
    write_num(out, rec.objective_estimate);
    out << ',';
    if (std::isfinite(rec.exact_objective)) write_num(out, rec.exact_objective);
    for (const auto& name : metric_names) {
      out << ',';
      const auto it = rec.metric_values.find(name);
      if (it != rec.metric_values.end()) write_num(out, it->second);
    }
    out << ',';
    write_num(out, rec.grad_norm);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_trace_csv: write failed for " + path);
}

}  // namespace xrisk
