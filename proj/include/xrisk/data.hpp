#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xrisk/common.hpp"

namespace xrisk {

enum class DatasetKind { Binary, Ranking, ContrastivePool };

struct BinaryData {
  std::vector<Vec> x;
  std::vector<int> y;  // +1 / -1
  int dim = 0;

  int count(int label) const {
    int n = 0;
    for (int v : y) n += (v == label);
    return n;
  }
};

struct RankingQuery {
  std::vector<Vec> x;
  std::vector<int> rel;  // nonnegative integer relevance

  int relevant_count() const {
    int n = 0;
    for (int r : rel) n += (r > 0);
    return n;
  }
};

struct RankingData {
  std::vector<RankingQuery> queries;
  int dim = 0;
};

enum class AugmentKind { GaussNoise, Dropout, Scale };

struct AugmentOp {
  AugmentKind kind = AugmentKind::GaussNoise;
  double a = 0.1;  // sigma / dropout rate / scale range lower
  double b = 0.0;  // scale range upper
};

// Deterministic per (seed, sample index, draw index); stands in for image
// augmentations when the pool holds plain feature vectors.
struct AugmentationSpec {
  std::vector<AugmentOp> ops;
  std::uint64_t seed = 0;
};

struct PoolData {
  std::vector<Vec> x;
  std::vector<int> label;  // class id, or -1 when unlabeled
  AugmentationSpec aug;
  int dim = 0;
};

struct Dataset {
  DatasetKind kind = DatasetKind::Binary;
  BinaryData binary;
  RankingData ranking;
  PoolData pool;
};

// LIBSVM text rows: "<+1|-1> idx:val ...", 1-based indices densified to the
// max seen index. Parse failures report the line number.
Dataset load_libsvm(const std::string& path);
void save_libsvm(const BinaryData& data, const std::string& path);

// CSV with header query_id,relevance,f1..fd
Dataset load_csv_ranking(const std::string& path);
void save_csv_ranking(const RankingData& data, const std::string& path);

// Dense CSV with header label,f1..fd (label -1 when unlabeled)
Dataset load_csv_pool(const std::string& path);
void save_csv_pool(const PoolData& data, const std::string& path);

// Two Gaussian classes N(+delta e1, I) vs N(-delta e1, I).
Dataset gen_binary(int n_pos, int n_neg, int dim, double delta,
                   std::uint64_t seed);

// Queries with integer relevance in [0, levels); feature 0 carries
// signal * rel/(levels-1) plus unit noise, the rest is pure noise.
Dataset gen_ranking(int n_queries, int items_per_query, int levels,
                    double signal, int dim, std::uint64_t seed);

// Pool of `classes` Gaussian clusters with spacing `separation`.
Dataset gen_pool(int n, int dim, int classes, double separation,
                 std::uint64_t seed, const AugmentationSpec& aug);

Vec augment(const PoolData& pool, int index, int draw,
            const AugmentationSpec& spec);

}  // namespace xrisk
