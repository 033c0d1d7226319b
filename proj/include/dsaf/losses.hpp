#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "dsaf/autograd.hpp"

namespace dsaf {

enum class TripletDistance { euclidean, cosine };

std::string to_string(TripletDistance d);
TripletDistance parse_triplet_distance(const std::string& name);

struct TripletConfig {
  double margin = 0.3;
  TripletDistance distance = TripletDistance::euclidean;
};

namespace losses {

// Mean over rows of -log softmax(logits)[label]. Logits are (n, k, 1, 1) or
// any shape whose per-sample row has k entries.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int64_t> labels);

// Batch-hard triplet loss. Anchors with no positive or no negative in the
// batch are skipped; with no valid anchor the loss is 0 and carries zero
// gradient. Ties in the hard positive/negative pick the lowest index.
template <class T>
Var<T> triplet_batch_hard(Var<T> embeddings, std::span<const std::int64_t> labels, const TripletConfig& cfg);

// cls + tri.
template <class T>
Var<T> total_loss(Var<T> cls, Var<T> tri);

}  // namespace losses
}  // namespace dsaf
