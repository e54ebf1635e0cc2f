#include "xrisk/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "xrisk/rng.hpp"

namespace xrisk {

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

void write_value(std::ofstream& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

Dataset load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_libsvm: cannot open " + path);
  struct Row {
    int label;
    std::vector<std::pair<int, double>> feats;
  };
  std::vector<Row> rows;
  int max_index = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Row row;
    if (!(ss >> row.label) || (row.label != 1 && row.label != -1))
      parse_fail(path, lineno, "label must be +1 or -1");
    std::string tok;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        parse_fail(path, lineno, "expected index:value, got '" + tok + "'");
      int idx = 0;
      double val = 0.0;
      try {
        idx = std::stoi(tok.substr(0, colon));
        val = std::stod(tok.substr(colon + 1));
      } catch (const std::exception&) {
        parse_fail(path, lineno, "malformed index:value '" + tok + "'");
      }
      if (idx < 1) parse_fail(path, lineno, "indices are 1-based");
      if (!std::isfinite(val)) parse_fail(path, lineno, "non-finite value");
      max_index = std::max(max_index, idx);
      row.feats.emplace_back(idx, val);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw std::runtime_error("load_libsvm: " + path + " contains no data rows");
  Dataset ds;
  ds.kind = DatasetKind::Binary;
  ds.binary.dim = max_index;
  for (const auto& row : rows) {
    Vec x(static_cast<std::size_t>(max_index), 0.0);
    for (const auto& [idx, val] : row.feats)
      x[static_cast<std::size_t>(idx - 1)] = val;
    ds.binary.x.push_back(std::move(x));
    ds.binary.y.push_back(row.label);
  }
  return ds;
}

void save_libsvm(const BinaryData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_libsvm: cannot open " + path);
  for (std::size_t r = 0; r < data.x.size(); ++r) {
    out << (data.y[r] > 0 ? "+1" : "-1");
    for (std::size_t i = 0; i < data.x[r].size(); ++i) {
      if (data.x[r][i] == 0.0) continue;
      out << ' ' << (i + 1) << ':';
      write_value(out, data.x[r][i]);
    }
    out << '\n';
  }
}

Dataset load_csv_ranking(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv_ranking: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_csv_ranking: " + path + " is empty");
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "query_id" || header[1] != "relevance")
    throw std::runtime_error("load_csv_ranking: " + path +
                             ": header must be query_id,relevance,f1..fd");
  const int dim = static_cast<int>(header.size()) - 2;

  Dataset ds;
  ds.kind = DatasetKind::Ranking;
  ds.ranking.dim = dim;
  std::map<std::string, int> query_slot;  // first-appearance order
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (static_cast<int>(fields.size()) != dim + 2)
      parse_fail(path, lineno, "inconsistent column count");
    int rel = 0;
    Vec x(static_cast<std::size_t>(dim));
    try {
      rel = std::stoi(fields[1]);
      for (int i = 0; i < dim; ++i)
        x[static_cast<std::size_t>(i)] = std::stod(fields[static_cast<std::size_t>(i) + 2]);
    } catch (const std::exception&) {
      parse_fail(path, lineno, "malformed number");
    }
    if (rel < 0) parse_fail(path, lineno, "relevance must be nonnegative");
    if (!all_finite(x)) parse_fail(path, lineno, "non-finite feature");
    auto [it, inserted] = query_slot.try_emplace(
        fields[0], static_cast<int>(ds.ranking.queries.size()));
    if (inserted) ds.ranking.queries.emplace_back();
    auto& q = ds.ranking.queries[static_cast<std::size_t>(it->second)];
    q.x.push_back(std::move(x));
    q.rel.push_back(rel);
  }
  if (ds.ranking.queries.empty())
    throw std::runtime_error("load_csv_ranking: " + path + " contains no rows");
  for (std::size_t qi = 0; qi < ds.ranking.queries.size(); ++qi)
    if (ds.ranking.queries[qi].relevant_count() == 0)
      throw std::runtime_error("load_csv_ranking: " + path + ": query #" +
                               std::to_string(qi) + " has no relevant item");
  return ds;
}

void save_csv_ranking(const RankingData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv_ranking: cannot open " + path);
  out << "query_id,relevance";
  for (int i = 1; i <= data.dim; ++i) out << ",f" << i;
  out << '\n';
  for (std::size_t qi = 0; qi < data.queries.size(); ++qi) {
    const auto& q = data.queries[qi];
    for (std::size_t r = 0; r < q.x.size(); ++r) {
      out << qi << ',' << q.rel[r];
      for (double v : q.x[r]) {
        out << ',';
        write_value(out, v);
      }
      out << '\n';
    }
  }
}

Dataset load_csv_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv_pool: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_csv_pool: " + path + " is empty");
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "label")
    throw std::runtime_error("load_csv_pool: " + path +
                             ": header must be label,f1..fd");
  const int dim = static_cast<int>(header.size()) - 1;
  Dataset ds;
  ds.kind = DatasetKind::ContrastivePool;
  ds.pool.dim = dim;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (static_cast<int>(fields.size()) != dim + 1)
      parse_fail(path, lineno, "inconsistent column count");
    Vec x(static_cast<std::size_t>(dim));
    int label = -1;
    try {
      label = std::stoi(fields[0]);
      for (int i = 0; i < dim; ++i)
        x[static_cast<std::size_t>(i)] = std::stod(fields[static_cast<std::size_t>(i) + 1]);
    } catch (const std::exception&) {
      parse_fail(path, lineno, "malformed number");
    }
    if (!all_finite(x)) parse_fail(path, lineno, "non-finite feature");
    ds.pool.x.push_back(std::move(x));
    ds.pool.label.push_back(label);
  }
  if (ds.pool.x.empty())
    throw std::runtime_error("load_csv_pool: " + path + " contains no rows");
  return ds;
}

void save_csv_pool(const PoolData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv_pool: cannot open " + path);
  out << "label";
  for (int i = 1; i <= data.dim; ++i) out << ",f" << i;
  out << '\n';
  for (std::size_t r = 0; r < data.x.size(); ++r) {
    out << data.label[r];
    for (double v : data.x[r]) {
      out << ',';
      write_value(out, v);
    }
    out << '\n';
  }
}

Dataset gen_binary(int n_pos, int n_neg, int dim, double delta,
                   std::uint64_t seed) {
  if (n_pos < 1 || n_neg < 1)
    throw std::invalid_argument("gen_binary: need at least one of each class");
  if (dim < 1) throw std::invalid_argument("gen_binary: dim must be positive");
  if (delta < 0.0) throw std::invalid_argument("gen_binary: delta must be >= 0");
  Rng rng(mix64(seed, 0xb1aa5ULL));
  Dataset ds;
  ds.kind = DatasetKind::Binary;
  ds.binary.dim = dim;
  auto draw = [&](double mean1, int label) {
    Vec x(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) x[static_cast<std::size_t>(i)] = rng.normal();
    x[0] += mean1;
    ds.binary.x.push_back(std::move(x));
    ds.binary.y.push_back(label);
  };
  for (int i = 0; i < n_pos; ++i) draw(+delta, +1);
  for (int i = 0; i < n_neg; ++i) draw(-delta, -1);
  return ds;
}

Dataset gen_ranking(int n_queries, int items_per_query, int levels,
                    double signal, int dim, std::uint64_t seed) {
  if (n_queries < 1 || items_per_query < 1)
    throw std::invalid_argument("gen_ranking: counts must be positive");
  if (levels < 2) throw std::invalid_argument("gen_ranking: need >= 2 levels");
  if (dim < 1) throw std::invalid_argument("gen_ranking: dim must be positive");
  Rng rng(mix64(seed, 0x4a9cULL));
  Dataset ds;
  ds.kind = DatasetKind::Ranking;
  ds.ranking.dim = dim;
  for (int q = 0; q < n_queries; ++q) {
    RankingQuery query;
    for (int r = 0; r < items_per_query; ++r) {
      const int rel = static_cast<int>(rng.below(static_cast<std::size_t>(levels)));
      Vec x(static_cast<std::size_t>(dim));
      for (int i = 0; i < dim; ++i) x[static_cast<std::size_t>(i)] = rng.normal();
      x[0] += signal * static_cast<double>(rel) / (levels - 1);
      query.x.push_back(std::move(x));
      query.rel.push_back(rel);
    }
    if (query.relevant_count() == 0) query.rel[0] = 1;  // keep query usable
    ds.ranking.queries.push_back(std::move(query));
  }
  return ds;
}

Dataset gen_pool(int n, int dim, int classes, double separation,
                 std::uint64_t seed, const AugmentationSpec& aug) {
  if (n < 2) throw std::invalid_argument("gen_pool: need at least two samples");
  if (dim < 1 || classes < 1)
    throw std::invalid_argument("gen_pool: dim and classes must be positive");
  Rng rng(mix64(seed, 0x9001ULL));
  Dataset ds;
  ds.kind = DatasetKind::ContrastivePool;
  ds.pool.dim = dim;
  ds.pool.aug = aug;
  for (int i = 0; i < n; ++i) {
    const int c = i % classes;
    Vec x(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) x[static_cast<std::size_t>(j)] = rng.normal();
    // class means spread along the first axis
    x[0] += separation * (static_cast<double>(c) - 0.5 * (classes - 1));
    ds.pool.x.push_back(std::move(x));
    ds.pool.label.push_back(c);
  }
  return ds;
}

Vec augment(const PoolData& pool, int index, int draw,
            const AugmentationSpec& spec) {
  Vec x = pool.x[static_cast<std::size_t>(index)];
  Rng rng(mix64(spec.seed, mix64(static_cast<std::uint64_t>(index),
                                 static_cast<std::uint64_t>(draw))));
  for (const auto& op : spec.ops) {
    switch (op.kind) {
      case AugmentKind::GaussNoise:
        for (double& v : x) v += op.a * rng.normal();
        break;
      case AugmentKind::Dropout:
        for (double& v : x)
          if (rng.uniform() < op.a) v = 0.0;
        break;
      case AugmentKind::Scale: {
        const double s = op.a + (op.b - op.a) * rng.uniform();
        for (double& v : x) v *= s;
        break;
      }
    }
  }
  return x;
}

}  // namespace xrisk
