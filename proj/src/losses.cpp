#include "dsaf/losses.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "dsaf/ops.hpp"

namespace dsaf {

std::string to_string(TripletDistance d) { return d == TripletDistance::euclidean ? "euclidean" : "cosine"; }

TripletDistance parse_triplet_distance(const std::string& name) {
  if (name == "euclidean") return TripletDistance::euclidean;
  if (name == "cosine") return TripletDistance::cosine;
  throw ConfigError("unknown triplet distance '" + name + "' (expected euclidean or cosine)");
}

namespace losses {

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int64_t> labels) {
  const Shape s = logits.shape();
  if (s.empty()) throw ShapeError("cross_entropy: empty logits");
  const std::size_t n = s.n;
  const std::size_t k = s.row();
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  for (std::int64_t l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw Error("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const Tensor<T>& x = logits.value();
  // Probabilities are kept for the backward pass.
  Tensor<T> probs(Shape{n, k, 1, 1});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(i);
    T mx = row[0];
    for (T v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (T v : row) z += std::exp(static_cast<double>(v - mx));
    const double log_z = std::log(z) + static_cast<double>(mx);
    total += log_z - static_cast<double>(row[static_cast<std::size_t>(labels[i])]);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - log_z));
  }
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  return logits.tape->record(
      Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n))), {logits},
      [logits, probs = std::move(probs), lab = std::move(lab), n, k](Tape<T>& t, Var<T> self) {
        const T g = t.grad(self)[0] / static_cast<T>(n);
        auto gx = t.grad(logits).data();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T target = static_cast<std::size_t>(lab[i]) == j ? T(1) : T(0);
            gx[i * k + j] += g * (probs[i * k + j] - target);
          }
        }
      },
      "cross_entropy");
}

namespace {

struct HardTriplet {
  std::size_t anchor, pos, neg;
  double d_pos, d_neg;
};

}  // namespace

template <class T>
Var<T> triplet_batch_hard(Var<T> embeddings, std::span<const std::int64_t> labels, const TripletConfig& cfg) {
  const Shape s = embeddings.shape();
  const std::size_t n = s.n;
  const std::size_t d = s.row();
  if (n < 2) throw ShapeError("triplet_batch_hard: need at least 2 embeddings");
  if (d == 0) throw ShapeError("triplet_batch_hard: zero-dimensional embeddings");
  if (labels.size() != n) throw ShapeError("triplet_batch_hard: label count mismatch");
  if (!(cfg.margin >= 0.0)) throw ConfigError("triplet margin must be non-negative");

  const auto x = embeddings.value().data();
  const bool cosine = cfg.distance == TripletDistance::cosine;
  std::vector<double> norms(n, 0.0);
  if (cosine) {
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += double(x[i * d + j]) * double(x[i * d + j]);
      norms[i] = std::sqrt(sq);
      if (norms[i] == 0.0) throw NumericalError("triplet_batch_hard: zero embedding under cosine distance");
    }
  }
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      double acc = 0.0;
      if (cosine) {
        for (std::size_t j = 0; j < d; ++j) acc += double(x[a * d + j]) * double(x[b * d + j]);
        dist[a * n + b] = 1.0 - acc / (norms[a] * norms[b]);
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = double(x[a * d + j]) - double(x[b * d + j]);
          acc += diff * diff;
        }
        dist[a * n + b] = std::sqrt(acc);
      }
    }
  }

  std::vector<HardTriplet> active;
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      const double dab = dist[a * n + b];
      if (labels[b] == labels[a]) {
        if (pos == n || dab > dist[a * n + pos]) pos = b;
      } else if (neg == n || dab < dist[a * n + neg]) {
        neg = b;
      }
    }
    if (pos == n || neg == n) continue;
    ++valid;
    const double hinge = cfg.margin + dist[a * n + pos] - dist[a * n + neg];
    if (hinge > 0.0) {
      total += hinge;
      active.push_back({a, pos, neg, dist[a * n + pos], dist[a * n + neg]});
    }
  }
  const double value = valid ? total / static_cast<double>(valid) : 0.0;

  return embeddings.tape->record(
      Tensor<T>::scalar(static_cast<T>(value)), {embeddings},
      [embeddings, active = std::move(active), norms = std::move(norms), valid, d, cosine](Tape<T>& t,
                                                                                          Var<T> self) {
        if (valid == 0) return;
        const double g = static_cast<double>(t.grad(self)[0]) / static_cast<double>(valid);
        const auto xv = t.value(embeddings).data();
        auto gx = t.grad(embeddings).data();
        // d dist(a, b) / d x_a and / d x_b, scaled by `coef`.
        auto add_pair = [&](std::size_t a, std::size_t b, double dab, double coef) {
          if (cosine) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += double(xv[a * d + j]) * double(xv[b * d + j]);
            const double na = norms[a], nb = norms[b];
            for (std::size_t j = 0; j < d; ++j) {
              const double xa = xv[a * d + j], xb = xv[b * d + j];
              const double da = -(xb / (na * nb) - dot * xa / (na * na * na * nb));
              const double db = -(xa / (na * nb) - dot * xb / (nb * nb * nb * na));
              gx[a * d + j] += static_cast<T>(coef * da);
              gx[b * d + j] += static_cast<T>(coef * db);
            }
          } else {
            if (dab <= 0.0) return;
            for (std::size_t j = 0; j < d; ++j) {
              const double diff = (double(xv[a * d + j]) - double(xv[b * d + j])) / dab;
              gx[a * d + j] += static_cast<T>(coef * diff);
              gx[b * d + j] -= static_cast<T>(coef * diff);
            }
          }
        };
        for (const HardTriplet& h : active) {
          add_pair(h.anchor, h.pos, h.d_pos, g);
          add_pair(h.anchor, h.neg, h.d_neg, -g);
        }
      },
      "triplet_batch_hard");
}

template <class T>
Var<T> total_loss(Var<T> cls, Var<T> tri) {
  if (cls.value().size() != 1 || tri.value().size() != 1) throw ShapeError("total_loss: terms must be scalars");
  if (!cls.value().all_finite() || !tri.value().all_finite()) {
    throw NumericalError("total_loss: non-finite loss term");
  }
  return ops::add(cls, tri);
}

#define DSAF_INSTANTIATE_LOSSES(T)                                                                   \
  template Var<T> cross_entropy(Var<T>, std::span<const std::int64_t>);                              \
  template Var<T> triplet_batch_hard(Var<T>, std::span<const std::int64_t>, const TripletConfig&);   \
  template Var<T> total_loss(Var<T>, Var<T>);

DSAF_INSTANTIATE_LOSSES(float)
DSAF_INSTANTIATE_LOSSES(double)

}  // namespace losses
}  // namespace dsaf
