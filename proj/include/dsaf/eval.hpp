#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsaf/clustering.hpp"
#include "dsaf/data.hpp"
#include "dsaf/model.hpp"

namespace dsaf {

enum class RankMetric { cosine, euclidean };

using Rankings = std::vector<std::vector<std::size_t>>;

// Rows scaled to unit L2 norm; zero rows stay zero.
Tensor<float> normalize_rows(const Tensor<float>& t);

// Per query, gallery indices by ascending distance; equal distances keep
// ascending gallery index. Cosine distance is 1 - cos(q, g).
Rankings rank_gallery(const Tensor<float>& query, const Tensor<float>& gallery, RankMetric metric = RankMetric::cosine);

// A gallery item is a valid match for a query when it has the same identity
// and a different camera. Same identity and same camera items are removed
// from that query's ranking before ranks are counted.
struct RetrievalProtocol {
  std::vector<std::int64_t> query_ids;
  std::vector<std::int64_t> query_cams;
  std::vector<std::int64_t> gallery_ids;
  std::vector<std::int64_t> gallery_cams;

  void validate() const;
  // Queries with at least one valid match.
  std::vector<std::size_t> retained_queries() const;
};

struct RetrievalMetrics {
  double mean_ap = 0.0;
  std::vector<std::size_t> ks;
  std::vector<double> cmc;  // Rank-k accuracy for each k in `ks`
  std::size_t num_queries = 0;  // retained
  std::size_t dropped_queries = 0;
};

// Throws DataError when no query has a valid match.
double mean_average_precision(const Rankings& rankings, const RetrievalProtocol& protocol);
std::vector<double> cmc_curve(const Rankings& rankings, const RetrievalProtocol& protocol,
                              const std::vector<std::size_t>& ks = {1, 5, 10});
RetrievalMetrics retrieval_metrics(const Rankings& rankings, const RetrievalProtocol& protocol,
                                   const std::vector<std::size_t>& ks = {1, 5, 10});

// Which embedding to use: one domain path, or the mean over all paths.
struct FeaturePath {
  std::optional<std::size_t> domain;  // nullopt: fused

  static FeaturePath fused() { return {}; }
  static FeaturePath single(std::size_t d) { return {d}; }
  std::string name() const;  // "path-<d>" or "fused"
};

// Eval-mode embeddings of `images` (n, c, h, w), processed in chunks of
// `batch_size`. Does not touch running statistics.
Tensor<float> extract_embeddings(Backbone<float>& model, const Tensor<float>& images, FeaturePath path,
                                 std::size_t batch_size = 64);

struct PathReport {
  std::string path;
  RetrievalMetrics metrics;
};

struct ClusterQuality {
  std::int64_t domain = 0;
  std::string path;
  std::size_t num_samples = 0;
  std::size_t num_clusters = 0;
  std::size_t num_noise = 0;
  // Present when every sample has a ground-truth identity. Each noise sample
  // counts as its own singleton cluster.
  std::optional<double> ami;
  std::optional<double> fmi;
};

struct EvalReport {
  std::int64_t target_domain = 0;
  std::size_t num_query = 0;
  std::size_t num_gallery = 0;
  std::size_t dropped_queries = 0;
  std::vector<PathReport> paths;
  std::vector<ClusterQuality> clustering;

  const PathReport* find(const std::string& path) const;
};

// Every requested path is evaluated on the domain's query/gallery splits with
// L2-normalized embeddings and cosine ranking.
EvalReport evaluate(Backbone<float>& model, const DomainData& target, const std::vector<FeaturePath>& paths);
// All single paths followed by the fused path.
std::vector<FeaturePath> all_paths(std::size_t num_domains);

// DBSCAN over the given (already normalized) features, compared with
// `identities` when none is unknown.
ClusterQuality cluster_quality(const Tensor<float>& features, std::span<const std::int64_t> identities,
                               const DbscanConfig& cfg);
std::vector<std::int64_t> with_singleton_noise(std::span<const std::int64_t> labels);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
// Fixed-width table: path, mAP, Rank-1, Rank-5, Rank-10 (percent).
std::string report_table(const EvalReport& report);

struct PcaResult {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // unit vectors
  std::vector<double> eigenvalues;
  std::vector<std::vector<double>> projection;  // per row
};

// Top components of the centered covariance by power iteration with
// deflation. Each component's largest-magnitude entry is made positive.
PcaResult pca_power(const std::vector<std::vector<double>>& rows, std::size_t components = 2,
                    std::size_t max_iterations = 200, double tolerance = 1e-7);

// CSV with header "sample_id,domain_id,path,e0,...,e<k-1>" (or "pc1,pc2" when
// projecting). One row per sample and path: every single path, then fused.
// Embeddings are L2-normalized; the projection is fitted on all rows jointly.
void export_embeddings(Backbone<float>& model, const std::vector<DomainData>& data,
                       const std::filesystem::path& out_path, bool project_2d);

}  // namespace dsaf
