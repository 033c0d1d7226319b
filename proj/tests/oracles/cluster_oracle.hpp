#pragma once

// Independent reference implementations for clustering and its metrics.
// Textbook algorithms, no shared code with the library.

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <vector>

namespace dsaf::testing {

using Points = std::vector<std::vector<double>>;

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double cosine_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

// Classical DBSCAN with a queue-based expansion, then the lowest-core border
// rule applied as a post-pass.
inline std::vector<std::int64_t> reference_dbscan(const Points& pts, double eps, std::size_t min_pts, bool cosine) {
  const std::size_t n = pts.size();
  auto dist = [&](std::size_t i, std::size_t j) { return cosine ? cosine_dist(pts[i], pts[j]) : euclid(pts[i], pts[j]); };
  auto region = [&](std::size_t p) {
    std::vector<std::size_t> r;
    for (std::size_t q = 0; q < n; ++q)
      if (q == p || dist(p, q) <= eps) r.push_back(q);
    return r;
  };
  std::vector<bool> core(n);
  for (std::size_t p = 0; p < n; ++p) core[p] = region(p).size() >= min_pts;

  std::vector<std::int64_t> label(n, -2);  // -2 undefined, -1 noise
  std::int64_t c = -1;
  for (std::size_t p = 0; p < n; ++p) {
    if (label[p] != -2) continue;
    if (!core[p]) {
      label[p] = -1;
      continue;
    }
    ++c;
    label[p] = c;
    std::deque<std::size_t> seeds;
    for (std::size_t q : region(p)) seeds.push_back(q);
    while (!seeds.empty()) {
      const std::size_t q = seeds.front();
      seeds.pop_front();
      if (label[q] == -1) label[q] = c;
      if (label[q] != -2) continue;
      label[q] = c;
      if (core[q])
        for (std::size_t r : region(q)) seeds.push_back(r);
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (core[p]) continue;
    label[p] = -1;
    for (std::size_t q = 0; q < n; ++q) {
      if (core[q] && dist(p, q) <= eps) {
        label[p] = label[q];
        break;
      }
    }
  }
  return label;
}

// Relabels clusters by order of first appearance; noise stays -1.
inline std::vector<std::int64_t> canonical(const std::vector<std::int64_t>& labels) {
  std::map<std::int64_t, std::int64_t> ids;
  std::vector<std::int64_t> out;
  for (std::int64_t l : labels) {
    if (l < 0) {
      out.push_back(-1);
      continue;
    }
    auto it = ids.find(l);
    if (it == ids.end()) it = ids.emplace(l, static_cast<std::int64_t>(ids.size())).first;
    out.push_back(it->second);
  }
  return out;
}

// Binomial coefficient as an exact-ish long double product.
inline long double binom(long n, long k) {
  if (k < 0 || k > n) return 0.0L;
  long double r = 1.0L;
  for (long i = 1; i <= k; ++i) r = r * static_cast<long double>(n - k + i) / static_cast<long double>(i);
  return r;
}

// AMI straight from the definition: contingency table, MI, entropies, and the
// expected MI as a sum over hypergeometric cell counts.
inline double reference_ami(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  std::map<std::int64_t, long> ca, cb;
  std::map<std::pair<std::int64_t, std::int64_t>, long> cab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    ++cab[{a[i], b[i]}];
  }
  if (cab.size() == ca.size() && cab.size() == cb.size()) return 1.0;
  const long n = static_cast<long>(a.size());
  const long double N = n;
  long double mi = 0.0L, ha = 0.0L, hb = 0.0L, emi = 0.0L;
  for (const auto& [key, nij] : cab)
    mi += (nij / N) * std::log(N * nij / (static_cast<long double>(ca[key.first]) * cb[key.second]));
  for (const auto& [k, v] : ca) ha -= (v / N) * std::log(v / N);
  for (const auto& [k, v] : cb) hb -= (v / N) * std::log(v / N);
  for (const auto& [ka, ai] : ca) {
    for (const auto& [kb, bj] : cb) {
      const long double denom = binom(n, bj);
      for (long nij = std::max(1L, ai + bj - n); nij <= std::min(ai, bj); ++nij) {
        const long double p = binom(ai, nij) * binom(n - ai, bj - nij) / denom;
        emi += p * (nij / N) * std::log(N * nij / (static_cast<long double>(ai) * bj));
      }
    }
  }
  const long double mean_h = 0.5L * (ha + hb);
  if (std::abs(static_cast<double>(mean_h - emi)) < 1e-12) return 0.0;
  return static_cast<double>((mi - emi) / (mean_h - emi));
}

// Fowlkes-Mallows by enumerating every unordered sample pair.
inline double reference_fmi(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      if (sa && sb) ++tp;
      else if (sa) ++fp;
      else if (sb) ++fn;
    }
  }
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  return tp / std::sqrt((tp + fp) * (tp + fn));
}

}  // namespace dsaf::testing
