#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dsaf/norm.hpp"

namespace dsaf {

struct BlockConfig {
  std::size_t out_channels = 32;
  std::size_t stride = 1;  // 1 or 2
  NormKind norm = NormKind::dsan;
};

struct ModelConfig {
  std::vector<BlockConfig> blocks;
  std::size_t input_channels = 3;
  std::size_t input_height = 32;
  std::size_t input_width = 16;
  // conv -> norm -> relu repeated this many times per block; the first conv
  // carries the block stride.
  std::size_t convs_per_block = 1;
  // 0: the pooled features are the embedding. Otherwise a linear projection
  // maps them to this many dimensions.
  std::size_t embedding_dim = 0;
  std::size_t num_domains = 2;
  DsanOptions dsan;
  double dson_initial_weight = 0.5;
  bool dson_learnable = true;
  std::uint64_t seed = 0;

  // Four blocks, channels (32, 64, 128, 256), strides (1, 2, 2, 2), `norm` everywhere.
  static ModelConfig standard(NormKind norm = NormKind::dsan, std::size_t num_domains = 2);
  // Uses `special` at the listed block indices and `base` elsewhere.
  void set_norm_positions(NormKind base, NormKind special, const std::vector<std::size_t>& positions);

  void validate() const;
  std::size_t output_dim() const;
};

template <class T>
struct ConvBlock {
  Parameter<T> weight;  // (c_out, c_in, k, k), no bias: a normalization follows
  std::unique_ptr<NormLayer<T>> norm;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

// Small plain CNN: blocks of conv -> norm -> relu, global average pooling,
// optional linear projection. Domain-specific normalization branches are
// selected by the `domain` argument of every forward.
template <class T>
class Backbone {
 public:
  explicit Backbone(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::size_t num_domains() const { return config_.num_domains; }
  std::size_t embedding_dim() const { return config_.output_dim(); }

  Var<T> forward_embed(Tape<T>& tape, Var<T> images, std::size_t domain, Mode mode);
  Tensor<T> embed(const Tensor<T>& images, std::size_t domain, Mode mode);
  // Mean of the eval-mode embeddings of every domain path. Read-only.
  Tensor<T> forward_fused(const Tensor<T>& images, Mode mode = Mode::eval);

  std::vector<Parameter<T>*> parameters();
  std::vector<DomainBNState<T>*> states();
  // Total elements over all parameters (trainable or not).
  std::size_t parameter_count();
  // Running mean and variance elements over all domains.
  std::size_t buffer_count();

  // Named tensors covering parameters and running statistics; batch counts
  // are returned through `counts`.
  std::map<std::string, Tensor<T>> state_tensors(std::map<std::string, std::int64_t>* counts = nullptr);
  void load_state_tensors(const std::map<std::string, Tensor<T>>& tensors,
                          const std::map<std::string, std::int64_t>& counts);

  std::vector<ConvBlock<T>>& blocks() { return blocks_; }

 private:
  void check_input(const Shape& s, std::size_t domain) const;

  ModelConfig config_;
  std::vector<ConvBlock<T>> blocks_;
  std::optional<Parameter<T>> proj_weight_;
  std::optional<Parameter<T>> proj_bias_;
};

template <class T>
struct LinearHead {
  Parameter<T> weight;  // (classes, dim)
  Parameter<T> bias;    // (1, classes)
};

// One linear head per domain with that domain's number of classes. A domain
// with zero classes has no head.
template <class T>
class ClassifierBank {
 public:
  ClassifierBank() = default;
  ClassifierBank(std::size_t dim, const std::vector<std::size_t>& classes_per_domain, std::mt19937_64& rng);

  // Fresh random heads; previous heads are discarded.
  void rebuild(std::size_t dim, const std::vector<std::size_t>& classes_per_domain, std::mt19937_64& rng);

  bool has_head(std::size_t domain) const;
  LinearHead<T>& head(std::size_t domain);
  std::size_t num_domains() const { return heads_.size(); }
  std::size_t classes(std::size_t domain) const;

  Var<T> classify(Tape<T>& tape, Var<T> embeddings, std::size_t domain);
  std::vector<Parameter<T>*> parameters();

  std::map<std::string, Tensor<T>> state_tensors();
  void load_state_tensors(const std::map<std::string, Tensor<T>>& tensors, std::size_t num_domains);

 private:
  std::size_t dim_ = 0;
  std::vector<std::optional<LinearHead<T>>> heads_;
};

}  // namespace dsaf
