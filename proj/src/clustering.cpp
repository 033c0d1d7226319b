#include "dsaf/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dsaf/kernels.hpp"

namespace dsaf {

std::string to_string(ClusterMetric m) { return m == ClusterMetric::cosine ? "cosine" : "euclidean"; }

ClusterMetric parse_cluster_metric(const std::string& name) {
  if (name == "cosine") return ClusterMetric::cosine;
  if (name == "euclidean") return ClusterMetric::euclidean;
  throw ConfigError("unknown cluster metric '" + name + "' (expected cosine or euclidean)");
}

void DbscanConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("dbscan epsilon must be positive");
  if (min_points < 1) throw ConfigError("dbscan min_points must be at least 1");
}

std::size_t ClusterAssignment::num_noise() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
}

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const {
  std::vector<std::vector<std::size_t>> out(num_clusters);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kNoise) out[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return out;
}

template <class T>
ClusterAssignment dbscan(const Tensor<T>& points, const DbscanConfig& cfg) {
  cfg.validate();
  const std::size_t n = points.shape().n;
  const std::size_t d = points.shape().row();
  if (n == 0) throw ShapeError("dbscan: no points");
  if (d == 0) throw ShapeError("dbscan: zero-dimensional points");
  if (!points.all_finite()) throw NumericalError("dbscan: non-finite coordinates");

  std::vector<double> rows(points.data().begin(), points.data().end());
  if (cfg.metric == ClusterMetric::cosine) {
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += rows[i * d + j] * rows[i * d + j];
      const double norm = std::max(std::sqrt(sq), 1e-12);
      for (std::size_t j = 0; j < d; ++j) rows[i * d + j] /= norm;
    }
  }
  std::vector<double> sq(n * n);
  kernels::pairwise_sq_distances<double>(n, n, d, rows, rows, sq);
  // For unit vectors 1 - cos = |a - b|^2 / 2.
  auto within = [&](std::size_t i, std::size_t j) {
    const double s = std::max(sq[i * n + j], 0.0);
    const double dist = cfg.metric == ClusterMetric::cosine ? 0.5 * s : std::sqrt(s);
    return dist <= cfg.epsilon;
  };

  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || within(i, j)) neighbors[i].push_back(j);
    }
  }

  ClusterAssignment out;
  out.labels.assign(n, kNoise);
  out.is_core.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) out.is_core[i] = neighbors[i].size() >= cfg.min_points;

  // Connected components over core points, seeded in index order.
  std::int64_t next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!out.is_core[seed] || out.labels[seed] != kNoise) continue;
    out.labels[seed] = next;
    stack.assign(1, seed);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      for (std::size_t q : neighbors[p]) {
        if (out.is_core[q] && out.labels[q] == kNoise) {
          out.labels[q] = next;
          stack.push_back(q);
        }
      }
    }
    ++next;
  }
  // Border points: neighbor lists are ascending, so the first core is the lowest.
  for (std::size_t i = 0; i < n; ++i) {
    if (out.is_core[i]) continue;
    for (std::size_t q : neighbors[i]) {
      if (out.is_core[q]) {
        out.labels[i] = out.labels[q];
        break;
      }
    }
  }
  out.num_clusters = static_cast<std::size_t>(next);
  return out;
}

template ClusterAssignment dbscan(const Tensor<float>&, const DbscanConfig&);
template ClusterAssignment dbscan(const Tensor<double>&, const DbscanConfig&);

namespace {

struct Contingency {
  std::vector<std::size_t> a_sizes;
  std::vector<std::size_t> b_sizes;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> cells;
  std::size_t n = 0;
};

Contingency contingency(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  if (a.size() != b.size()) {
    throw Error("label vectors differ in length: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw Error("label vectors are empty");
  std::map<std::int64_t, std::size_t> ia, ib;
  for (std::int64_t v : a) ia.emplace(v, ia.size());
  for (std::int64_t v : b) ib.emplace(v, ib.size());
  Contingency c;
  c.n = a.size();
  c.a_sizes.assign(ia.size(), 0);
  c.b_sizes.assign(ib.size(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t r = ia[a[i]], s = ib[b[i]];
    ++c.a_sizes[r];
    ++c.b_sizes[s];
    ++c.cells[{r, s}];
  }
  return c;
}

double entropy(const std::vector<std::size_t>& sizes, double n) {
  double h = 0.0;
  for (std::size_t s : sizes) {
    if (s == 0) continue;
    const double p = static_cast<double>(s) / n;
    h -= p * std::log(p);
  }
  return h;
}

double expected_mutual_info(const Contingency& c) {
  const double n = static_cast<double>(c.n);
  const double lg_n = std::lgamma(n + 1.0);
  double emi = 0.0;
  for (std::size_t ai : c.a_sizes) {
    for (std::size_t bj : c.b_sizes) {
      const std::size_t lo = std::max<std::size_t>(1, ai + bj > c.n ? ai + bj - c.n : 0);
      const std::size_t hi = std::min(ai, bj);
      const double a = static_cast<double>(ai), b = static_cast<double>(bj);
      // log of the constant part of the hypergeometric probability
      const double base = std::lgamma(a + 1) + std::lgamma(b + 1) + std::lgamma(n - a + 1) +
                          std::lgamma(n - b + 1) - lg_n;
      for (std::size_t k = lo; k <= hi; ++k) {
        const double kk = static_cast<double>(k);
        const double log_p = base - std::lgamma(kk + 1) - std::lgamma(a - kk + 1) - std::lgamma(b - kk + 1) -
                             std::lgamma(n - a - b + kk + 1);
        emi += (kk / n) * std::log(n * kk / (a * b)) * std::exp(log_p);
      }
    }
  }
  return emi;
}

bool same_partition(const Contingency& c) {
  return c.cells.size() == c.a_sizes.size() && c.cells.size() == c.b_sizes.size();
}

}  // namespace

double adjusted_mutual_info(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  const Contingency c = contingency(a, b);
  // Covers the 0/0 cases (two single-cluster or two all-singleton partitions).
  if (same_partition(c)) return 1.0;
  const double n = static_cast<double>(c.n);
  double mi = 0.0;
  for (const auto& [rs, count] : c.cells) {
    const double nij = static_cast<double>(count);
    mi += (nij / n) *
          std::log(n * nij / (static_cast<double>(c.a_sizes[rs.first]) * static_cast<double>(c.b_sizes[rs.second])));
  }
  const double emi = expected_mutual_info(c);
  const double mean_h = 0.5 * (entropy(c.a_sizes, n) + entropy(c.b_sizes, n));
  const double denom = mean_h - emi;
  if (std::abs(denom) < 1e-12) return 0.0;
  return (mi - emi) / denom;
}

double fowlkes_mallows(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  const Contingency c = contingency(a, b);
  // Every count here is at least 1.
  auto pairs = [](std::size_t k) { return static_cast<double>(k) * static_cast<double>(k - 1) / 2.0; };
  double tp = 0.0, pa = 0.0, pb = 0.0;
  for (const auto& [rs, count] : c.cells) tp += pairs(count);
  for (std::size_t s : c.a_sizes) pa += pairs(s);
  for (std::size_t s : c.b_sizes) pb += pairs(s);
  if (pa == 0.0 || pb == 0.0) return 0.0;
  return tp / std::sqrt(pa * pb);
}

}  // namespace dsaf
