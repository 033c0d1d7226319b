#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsaf/tensor.hpp"

namespace dsaf {

inline constexpr std::int64_t kNoise = -1;

// cosine: 1 - cos(a, b), computed on L2-normalized rows.
// euclidean: plain distance on the rows as given.
enum class ClusterMetric { cosine, euclidean };

std::string to_string(ClusterMetric m);
ClusterMetric parse_cluster_metric(const std::string& name);

struct DbscanConfig {
  double epsilon = 0.5;
  std::size_t min_points = 4;
  ClusterMetric metric = ClusterMetric::cosine;

  void validate() const;
};

struct ClusterAssignment {
  std::vector<std::int64_t> labels;  // cluster id or kNoise
  std::vector<bool> is_core;
  std::size_t num_clusters = 0;

  std::size_t num_noise() const;
  // Members of each cluster, in index order.
  std::vector<std::vector<std::size_t>> members() const;
};

// Points are (n, d, 1, 1) or any shape whose per-sample row is the point.
// Neighborhoods include the point itself and every point at distance
// <= epsilon. Clusters are numbered by their lowest-indexed core point; a
// border point reachable from several clusters joins the one owning its
// lowest-indexed core neighbor.
template <class T>
ClusterAssignment dbscan(const Tensor<T>& points, const DbscanConfig& cfg);

// Chance-adjusted mutual information (arithmetic-mean normalization,
// hypergeometric expected MI). Two single-cluster partitions give 1.
double adjusted_mutual_info(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

// TP / sqrt((TP + FP)(TP + FN)) over sample pairs; 0 if a factor is 0.
double fowlkes_mallows(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

}  // namespace dsaf
