#pragma once

#include <string>
#include <vector>

#include "xrisk/optimizer.hpp"

namespace xrisk {

// CSV layout: iteration,wall_seconds,objective_estimate,exact_objective,
// metric:<name>...,grad_norm. Values carry 10 significant digits; cells
// without a periodic evaluation stay empty. With measured_wall = false the
// wall column is written as 0 so emitted files are a pure function of
// (config, seed).
void write_trace_csv(const std::string& path,
                     const std::vector<TraceRecord>& trace, bool measured_wall);

std::vector<std::string> trace_metric_names(const std::vector<TraceRecord>& trace);

}  // namespace xrisk
