#include "dsaf/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dsaf/kernels.hpp"

namespace dsaf {

namespace {

std::vector<double> row_norms(const Tensor<float>& t) {
  const std::size_t n = t.shape().n, d = t.shape().row();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += double(t[i * d + j]) * double(t[i * d + j]);
    out[i] = std::sqrt(s);
  }
  return out;
}

}  // namespace

Tensor<float> normalize_rows(const Tensor<float>& t) {
  Tensor<float> out = t;
  const std::size_t n = t.shape().n, d = t.shape().row();
  const auto norms = row_norms(t);
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(double(t[i * d + j]) / norms[i]);
  }
  return out;
}

Rankings rank_gallery(const Tensor<float>& query, const Tensor<float>& gallery, RankMetric metric) {
  const std::size_t nq = query.shape().n, ng = gallery.shape().n, d = query.shape().row();
  if (ng == 0) throw DataError("cannot rank against an empty gallery");
  if (gallery.shape().row() != d) {
    throw ShapeError("query dim " + std::to_string(d) + " differs from gallery dim " +
                     std::to_string(gallery.shape().row()));
  }
  const auto qn = row_norms(query), gn = row_norms(gallery);
  Rankings out(nq);
#pragma omp parallel for schedule(static) num_threads(kernels::num_threads()) if (kernels::num_threads() > 1)
  for (std::size_t q = 0; q < nq; ++q) {
    std::vector<double> dist(ng);
    for (std::size_t g = 0; g < ng; ++g) {
      double acc = 0.0;
      if (metric == RankMetric::cosine) {
        for (std::size_t j = 0; j < d; ++j) acc += double(query[q * d + j]) * double(gallery[g * d + j]);
        const double denom = qn[q] * gn[g];
        dist[g] = denom > 0.0 ? 1.0 - acc / denom : 1.0;
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = double(query[q * d + j]) - double(gallery[g * d + j]);
          acc += diff * diff;
        }
        dist[g] = std::sqrt(acc);
      }
    }
    std::vector<std::size_t> order(ng);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    out[q] = std::move(order);
  }
  return out;
}

void RetrievalProtocol::validate() const {
  if (query_ids.size() != query_cams.size()) throw DataError("query identities and cameras differ in length");
  if (gallery_ids.size() != gallery_cams.size()) throw DataError("gallery identities and cameras differ in length");
}

std::vector<std::size_t> RetrievalProtocol::retained_queries() const {
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    for (std::size_t g = 0; g < gallery_ids.size(); ++g) {
      if (gallery_ids[g] == query_ids[q] && gallery_cams[g] != query_cams[q]) {
        out.push_back(q);
        break;
      }
    }
  }
  return out;
}

namespace {

// 1-based post-exclusion ranks of the valid matches of query q.
std::vector<std::size_t> match_ranks(const std::vector<std::size_t>& ranking, const RetrievalProtocol& p,
                                     std::size_t q) {
  std::vector<std::size_t> ranks;
  std::size_t rank = 0;
  for (std::size_t g : ranking) {
    const bool same_id = p.gallery_ids[g] == p.query_ids[q];
    const bool same_cam = p.gallery_cams[g] == p.query_cams[q];
    if (same_id && same_cam) continue;
    ++rank;
    if (same_id) ranks.push_back(rank);
  }
  return ranks;
}

void check_rankings(const Rankings& rankings, const RetrievalProtocol& protocol) {
  protocol.validate();
  if (rankings.size() != protocol.query_ids.size()) throw DataError("rankings and queries differ in count");
  for (const auto& r : rankings)
    if (r.size() != protocol.gallery_ids.size()) throw DataError("a ranking does not cover the gallery");
}

}  // namespace

RetrievalMetrics retrieval_metrics(const Rankings& rankings, const RetrievalProtocol& protocol,
                                   const std::vector<std::size_t>& ks) {
  check_rankings(rankings, protocol);
  const auto retained = protocol.retained_queries();
  if (retained.empty()) throw DataError("no query has a cross-camera match in the gallery");
  RetrievalMetrics m;
  m.ks = ks;
  m.cmc.assign(ks.size(), 0.0);
  m.num_queries = retained.size();
  m.dropped_queries = protocol.query_ids.size() - retained.size();
  double ap_sum = 0.0;
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t q : retained) {
    const auto ranks = match_ranks(rankings[q], protocol, q);
    double ap = 0.0;
    for (std::size_t i = 0; i < ranks.size(); ++i) ap += static_cast<double>(i + 1) / static_cast<double>(ranks[i]);
    ap_sum += ap / static_cast<double>(ranks.size());
    for (std::size_t k = 0; k < ks.size(); ++k) hits[k] += ranks.front() <= ks[k];
  }
  m.mean_ap = ap_sum / static_cast<double>(retained.size());
  for (std::size_t k = 0; k < ks.size(); ++k) m.cmc[k] = static_cast<double>(hits[k]) / static_cast<double>(retained.size());
  return m;
}

double mean_average_precision(const Rankings& rankings, const RetrievalProtocol& protocol) {
  return retrieval_metrics(rankings, protocol, {}).mean_ap;
}

std::vector<double> cmc_curve(const Rankings& rankings, const RetrievalProtocol& protocol,
                              const std::vector<std::size_t>& ks) {
  return retrieval_metrics(rankings, protocol, ks).cmc;
}

std::string FeaturePath::name() const { return domain ? "path-" + std::to_string(*domain) : "fused"; }

Tensor<float> extract_embeddings(Backbone<float>& model, const Tensor<float>& images, FeaturePath path,
                                 std::size_t batch_size) {
  const std::size_t n = images.shape().n;
  if (n == 0) throw DataError("no images to embed");
  if (batch_size == 0) batch_size = n;
  if (path.domain && *path.domain >= model.num_domains()) {
    throw ConfigError("path " + std::to_string(*path.domain) + " does not exist in a model with " +
                      std::to_string(model.num_domains()) + " domains");
  }
  std::vector<Tensor<float>> parts;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    const Tensor<float> chunk = slice_batch(images, start, start + count);
    parts.push_back(path.domain ? model.embed(chunk, *path.domain, Mode::eval) : model.forward_fused(chunk));
  }
  return parts.size() == 1 ? std::move(parts.front()) : stack_batch<float>(parts);
}

const PathReport* EvalReport::find(const std::string& path) const {
  for (const auto& p : paths)
    if (p.path == path) return &p;
  return nullptr;
}

std::vector<FeaturePath> all_paths(std::size_t num_domains) {
  std::vector<FeaturePath> out;
  for (std::size_t d = 0; d < num_domains; ++d) out.push_back(FeaturePath::single(d));
  out.push_back(FeaturePath::fused());
  return out;
}

EvalReport evaluate(Backbone<float>& model, const DomainData& target, const std::vector<FeaturePath>& paths) {
  const auto qi = target.indices(Split::query);
  const auto gi = target.indices(Split::gallery);
  if (qi.empty() || gi.empty()) {
    throw DataError("domain '" + target.root.string() + "' has no query or no gallery records");
  }
  RetrievalProtocol protocol{target.identities(qi), target.cameras(qi), target.identities(gi), target.cameras(gi)};
  const Tensor<float> q_images = target.images(qi), g_images = target.images(gi);
  EvalReport report;
  report.target_domain = target.domain_id;
  report.num_query = qi.size();
  report.num_gallery = gi.size();
  for (const FeaturePath& path : paths) {
    const Tensor<float> qf = normalize_rows(extract_embeddings(model, q_images, path));
    const Tensor<float> gf = normalize_rows(extract_embeddings(model, g_images, path));
    PathReport pr{path.name(), retrieval_metrics(rank_gallery(qf, gf), protocol)};
    report.dropped_queries = pr.metrics.dropped_queries;
    report.paths.push_back(std::move(pr));
  }
  return report;
}

std::vector<std::int64_t> with_singleton_noise(std::span<const std::int64_t> labels) {
  std::int64_t next = 0;
  for (auto l : labels) next = std::max(next, l + 1);
  std::vector<std::int64_t> out(labels.begin(), labels.end());
  for (auto& l : out)
    if (l < 0) l = next++;
  return out;
}

ClusterQuality cluster_quality(const Tensor<float>& features, std::span<const std::int64_t> identities,
                               const DbscanConfig& cfg) {
  if (identities.size() != features.shape().n) throw DataError("identity count differs from feature count");
  const ClusterAssignment a = dbscan(features, cfg);
  ClusterQuality out;
  out.num_samples = identities.size();
  out.num_clusters = a.num_clusters;
  out.num_noise = a.num_noise();
  const bool labeled = std::none_of(identities.begin(), identities.end(),
                                    [](std::int64_t id) { return id == kUnknownIdentity; });
  if (labeled && !identities.empty()) {
    const auto predicted = with_singleton_noise(a.labels);
    out.ami = adjusted_mutual_info(predicted, identities);
    out.fmi = fowlkes_mallows(predicted, identities);
  }
  return out;
}

namespace {

using nlohmann::json;

json metrics_json(const RetrievalMetrics& m) {
  json cmc = json::object();
  for (std::size_t k = 0; k < m.ks.size(); ++k) cmc["rank" + std::to_string(m.ks[k])] = m.cmc[k];
  return json{{"mAP", m.mean_ap}, {"cmc", cmc}, {"num_queries", m.num_queries}, {"dropped_queries", m.dropped_queries}};
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  json paths = json::array();
  for (const auto& p : r.paths) {
    json entry = metrics_json(p.metrics);
    entry["path"] = p.path;
    paths.push_back(entry);
  }
  json clustering = json::array();
  for (const auto& c : r.clustering) {
    json entry{{"domain", c.domain},         {"path", c.path},         {"num_samples", c.num_samples},
               {"num_clusters", c.num_clusters}, {"num_noise", c.num_noise}};
    entry["ami"] = c.ami ? json(*c.ami) : json(nullptr);
    entry["fmi"] = c.fmi ? json(*c.fmi) : json(nullptr);
    clustering.push_back(entry);
  }
  json doc{{"target_domain", r.target_domain}, {"num_query", r.num_query},     {"num_gallery", r.num_gallery},
           {"dropped_queries", r.dropped_queries}, {"paths", paths},           {"clustering", clustering}};
  return doc.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    EvalReport r;
    r.target_domain = doc.at("target_domain").get<std::int64_t>();
    r.num_query = doc.at("num_query").get<std::size_t>();
    r.num_gallery = doc.at("num_gallery").get<std::size_t>();
    r.dropped_queries = doc.at("dropped_queries").get<std::size_t>();
    for (const auto& p : doc.at("paths")) {
      PathReport pr;
      pr.path = p.at("path").get<std::string>();
      pr.metrics.mean_ap = p.at("mAP").get<double>();
      pr.metrics.num_queries = p.at("num_queries").get<std::size_t>();
      pr.metrics.dropped_queries = p.at("dropped_queries").get<std::size_t>();
      std::vector<std::pair<std::size_t, double>> cmc;
      for (const auto& [key, value] : p.at("cmc").items()) cmc.emplace_back(std::stoul(key.substr(4)), value.get<double>());
      std::sort(cmc.begin(), cmc.end());
      for (const auto& [k, v] : cmc) {
        pr.metrics.ks.push_back(k);
        pr.metrics.cmc.push_back(v);
      }
      r.paths.push_back(std::move(pr));
    }
    for (const auto& c : doc.at("clustering")) {
      ClusterQuality q;
      q.domain = c.at("domain").get<std::int64_t>();
      q.path = c.at("path").get<std::string>();
      q.num_samples = c.at("num_samples").get<std::size_t>();
      q.num_clusters = c.at("num_clusters").get<std::size_t>();
      q.num_noise = c.at("num_noise").get<std::size_t>();
      if (!c.at("ami").is_null()) q.ami = c.at("ami").get<double>();
      if (!c.at("fmi").is_null()) q.fmi = c.at("fmi").get<double>();
      r.clustering.push_back(q);
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s\n", "path", "mAP", "Rank-1", "Rank-5", "Rank-10");
  os << line;
  for (const auto& p : r.paths) {
    auto rank = [&](std::size_t k) {
      for (std::size_t i = 0; i < p.metrics.ks.size(); ++i)
        if (p.metrics.ks[i] == k) return 100.0 * p.metrics.cmc[i];
      return 0.0;
    };
    std::snprintf(line, sizeof line, "%-10s %8.2f %8.2f %8.2f %8.2f\n", p.path.c_str(), 100.0 * p.metrics.mean_ap,
                  rank(1), rank(5), rank(10));
    os << line;
  }
  return os.str();
}

PcaResult pca_power(const std::vector<std::vector<double>>& rows, std::size_t components, std::size_t max_iterations,
                    double tolerance) {
  if (rows.empty()) throw DataError("PCA needs at least one row");
  const std::size_t n = rows.size(), d = rows.front().size();
  for (const auto& r : rows)
    if (r.size() != d) throw ShapeError("PCA rows differ in length");
  if (components > d) throw ConfigError("cannot extract " + std::to_string(components) + " components from " +
                                        std::to_string(d) + " dimensions");
  PcaResult out;
  out.mean.assign(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += r[j];
  for (double& m : out.mean) m /= static_cast<double>(n);

  std::vector<double> cov(d * d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t a = 0; a < d; ++a) {
      const double da = r[a] - out.mean[a];
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += da * (r[b] - out.mean[b]);
    }
  }
  for (double& c : cov) c /= static_cast<double>(n);

  auto matvec = [&](const std::vector<double>& v) {
    std::vector<double> y(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) y[a] += cov[a * d + b] * v[b];
    return y;
  };
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };

  for (std::size_t c = 0; c < components; ++c) {
    // Start from the covariance column of largest norm (plus a small ramp so
    // the start is never orthogonal to every eigenvector of a zero column).
    std::vector<double> v(d);
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a) s += cov[a * d + j] * cov[a * d + j];
      if (s > best_norm) best_norm = s, best = j;
    }
    for (std::size_t a = 0; a < d; ++a) v[a] = cov[a * d + best] + 1e-3 * static_cast<double>(a + 1) / static_cast<double>(d);
    double nv = norm(v);
    for (double& x : v) x /= nv;
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iterations; ++it) {
      std::vector<double> y = matvec(v);
      const double ny = norm(y);
      if (ny == 0.0) break;
      for (double& x : y) x /= ny;
      double delta = 0.0;
      for (std::size_t a = 0; a < d; ++a) delta = std::max(delta, std::abs(std::abs(y[a]) - std::abs(v[a])));
      v = std::move(y);
      lambda = ny;
      if (delta < tolerance) break;
    }
    const std::size_t lead = static_cast<std::size_t>(
        std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) - v.begin());
    if (v[lead] < 0.0)
      for (double& x : v) x = -x;
    const auto cv = matvec(v);
    lambda = std::inner_product(v.begin(), v.end(), cv.begin(), 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    out.components.push_back(v);
    out.eigenvalues.push_back(lambda);
  }

  for (const auto& r : rows) {
    std::vector<double> p;
    for (const auto& comp : out.components) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (r[j] - out.mean[j]) * comp[j];
      p.push_back(s);
    }
    out.projection.push_back(std::move(p));
  }
  return out;
}

void export_embeddings(Backbone<float>& model, const std::vector<DomainData>& data,
                       const std::filesystem::path& out_path, bool project_2d) {
  struct Row {
    std::int64_t sample_id;
    std::int64_t domain_id;
    std::string path;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  const auto paths = all_paths(model.num_domains());
  for (const auto& dom : data) {
    std::vector<std::size_t> all(dom.records.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Tensor<float> images = dom.images(all);
    for (const auto& path : paths) {
      const Tensor<float> emb = normalize_rows(extract_embeddings(model, images, path));
      const std::size_t k = emb.shape().row();
      for (std::size_t i = 0; i < all.size(); ++i) {
        Row r{dom.records[i].sample_id, dom.domain_id, path.name(), {}};
        for (std::size_t j = 0; j < k; ++j) r.values.push_back(emb[i * k + j]);
        rows.push_back(std::move(r));
      }
    }
  }
  if (rows.empty()) throw DataError("nothing to export");

  if (project_2d) {
    std::vector<std::vector<double>> mat;
    for (const auto& r : rows) mat.push_back(r.values);
    const auto pca = pca_power(mat, std::min<std::size_t>(2, mat.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].values = pca.projection[i];
  }

  std::ostringstream os;
  os << "sample_id,domain_id,path";
  const std::size_t width = rows.front().values.size();
  for (std::size_t j = 0; j < width; ++j) os << ',' << (project_2d ? "pc" + std::to_string(j + 1) : "e" + std::to_string(j));
  os << '\n';
  char buf[40];
  for (const auto& r : rows) {
    os << r.sample_id << ',' << r.domain_id << ',' << r.path;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      os << buf;
    }
    os << '\n';
  }
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + out_path.string() + "'");
  out << os.str();
  if (!out) throw Error("failed writing '" + out_path.string() + "'");
}

}  // namespace dsaf
