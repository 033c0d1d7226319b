#pragma once

// Straight-line recomputations of normalization outputs, independent of the
// library's tape nodes.

#include <cmath>
#include <vector>

#include "dsaf/tensor.hpp"

namespace dsaf::testing {

struct Stats {
  std::vector<double> mean;
  std::vector<double> var;
};

// Statistics of each (sample, channel) plane, indexed n*C + c.
inline Stats plane_stats(const Tensor<double>& x) {
  const Shape s = x.shape();
  Stats st;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0, sq = 0;
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) sum += x.at(n, c, i, j);
      const double mu = sum / static_cast<double>(s.plane());
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) sq += (x.at(n, c, i, j) - mu) * (x.at(n, c, i, j) - mu);
      st.mean.push_back(mu);
      st.var.push_back(sq / static_cast<double>(s.plane()));
    }
  return st;
}

// Per-channel statistics over (n, h, w).
inline Stats channel_stats(const Tensor<double>& x) {
  const Shape s = x.shape();
  Stats st;
  const double count = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) sum += x.at(n, c, i, j);
    const double mu = sum / count;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) sq += (x.at(n, c, i, j) - mu) * (x.at(n, c, i, j) - mu);
    st.mean.push_back(mu);
    st.var.push_back(sq / count);
  }
  return st;
}

// gamma/beta may be empty (identity affine). `mean`/`var` are indexed by
// `index(n, c)`.
template <class IndexFn>
Tensor<double> normalize_with(const Tensor<double>& x, const std::vector<double>& mean,
                              const std::vector<double>& var, IndexFn index, double eps,
                              const std::vector<double>& gamma = {},
                              const std::vector<double>& beta = {}) {
  const Shape s = x.shape();
  Tensor<double> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t k = index(n, c);
      const double g = gamma.empty() ? 1.0 : gamma[c];
      const double b = beta.empty() ? 0.0 : beta[c];
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j)
          out.at(n, c, i, j) = g * (x.at(n, c, i, j) - mean[k]) / std::sqrt(var[k] + eps) + b;
    }
  return out;
}

inline Tensor<double> reference_instance_norm(const Tensor<double>& x, double eps,
                                              const std::vector<double>& gamma = {},
                                              const std::vector<double>& beta = {}) {
  const Stats st = plane_stats(x);
  const std::size_t c = x.shape().c;
  return normalize_with(x, st.mean, st.var, [c](std::size_t n, std::size_t ch) { return n * c + ch; },
                        eps, gamma, beta);
}

inline Tensor<double> reference_batch_norm(const Tensor<double>& x, const std::vector<double>& mean,
                                           const std::vector<double>& var, double eps,
                                           const std::vector<double>& gamma = {},
                                           const std::vector<double>& beta = {}) {
  return normalize_with(x, mean, var, [](std::size_t, std::size_t ch) { return ch; }, eps, gamma, beta);
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dsaf::testing
