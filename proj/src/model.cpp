#include "dsaf/model.hpp"

#include <algorithm>
#include <cmath>

#include "dsaf/ops.hpp"
#include "dsaf/rng.hpp"

namespace dsaf {

ModelConfig ModelConfig::standard(NormKind norm, std::size_t num_domains) {
  ModelConfig c;
  c.blocks = {{32, 1, norm}, {64, 2, norm}, {128, 2, norm}, {256, 2, norm}};
  c.num_domains = num_domains;
  return c;
}

void ModelConfig::set_norm_positions(NormKind base, NormKind special, const std::vector<std::size_t>& positions) {
  for (auto& b : blocks) b.norm = base;
  for (std::size_t p : positions) {
    if (p >= blocks.size()) {
      throw ConfigError("norm position " + std::to_string(p) + " outside 0.." + std::to_string(blocks.size() - 1));
    }
    blocks[p].norm = special;
  }
}

void ModelConfig::validate() const {
  if (blocks.empty()) throw ConfigError("model.blocks must not be empty");
  if (input_channels == 0 || input_height == 0 || input_width == 0) {
    throw ConfigError("model input dimensions must be positive");
  }
  if (convs_per_block == 0) throw ConfigError("model.convs_per_block must be at least 1");
  if (num_domains == 0) throw ConfigError("model.num_domains must be at least 1");
  if (!(dson_initial_weight > 0.0 && dson_initial_weight < 1.0)) {
    throw ConfigError("model.dson_initial_weight must lie strictly inside (0, 1)");
  }
  std::size_t h = input_height, w = input_width;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string where = "model.blocks[" + std::to_string(i) + "]";
    if (b.out_channels == 0 || b.out_channels % 2 != 0) {
      throw ConfigError(where + ".out_channels must be even and positive");
    }
    if (b.stride != 1 && b.stride != 2) throw ConfigError(where + ".stride must be 1 or 2");
    if (b.stride == 2) {
      if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2) {
        throw ConfigError(where + ": stride 2 needs even spatial size, got " + std::to_string(h) + "x" +
                          std::to_string(w));
      }
      h /= 2;
      w /= 2;
    }
  }
}

std::size_t ModelConfig::output_dim() const {
  return embedding_dim > 0 ? embedding_dim : blocks.back().out_channels;
}

namespace {

template <class T>
Tensor<T> uniform_tensor(Shape s, T bound, std::mt19937_64& rng) {
  Tensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(uniform(rng, -static_cast<double>(bound), static_cast<double>(bound)));
  return t;
}

}  // namespace

template <class T>
Backbone<T>::Backbone(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  std::size_t c_in = config_.input_channels;
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    const BlockConfig& b = config_.blocks[i];
    for (std::size_t j = 0; j < config_.convs_per_block; ++j) {
      const std::size_t stride = j == 0 ? b.stride : 1;
      // 3x3 keeps the size at stride 1; 4x4 halves it exactly at stride 2.
      const std::size_t k = stride == 2 ? 4 : 3;
      const std::string prefix = "block" + std::to_string(i) + ".conv" + std::to_string(j);
      const std::string norm_name = "block" + std::to_string(i) + ".norm" + std::to_string(j);
      ConvBlock<T> unit;
      const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(c_in * k * k)));
      unit.weight = Parameter<T>(prefix + ".weight", uniform_tensor<T>(Shape{b.out_channels, c_in, k, k}, bound, rng));
      if (b.norm == NormKind::dson) {
        unit.norm = std::make_unique<DsonLayer<T>>(norm_name, b.out_channels, config_.num_domains,
                                                   static_cast<T>(config_.dson_initial_weight),
                                                   config_.dson_learnable);
      } else {
        unit.norm = make_norm_layer<T>(b.norm, norm_name, b.out_channels, config_.num_domains, config_.dsan);
      }
      unit.stride = stride;
      unit.padding = 1;
      blocks_.push_back(std::move(unit));
      c_in = b.out_channels;
    }
  }
  if (config_.embedding_dim > 0) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c_in)));
    proj_weight_.emplace("proj.weight", uniform_tensor<T>(Shape{config_.embedding_dim, c_in, 1, 1}, bound, rng));
    proj_bias_.emplace("proj.bias", uniform_tensor<T>(Shape{1, config_.embedding_dim, 1, 1}, bound, rng));
  }
}

template <class T>
void Backbone<T>::check_input(const Shape& s, std::size_t domain) const {
  if (domain >= config_.num_domains) {
    throw Error("domain " + std::to_string(domain) + " out of range for a model with " +
                std::to_string(config_.num_domains) + " domains");
  }
  if (s.n == 0 || s.c != config_.input_channels || s.h != config_.input_height || s.w != config_.input_width) {
    throw ShapeError("model expects images of (n, " + std::to_string(config_.input_channels) + ", " +
                     std::to_string(config_.input_height) + ", " + std::to_string(config_.input_width) + "), got " +
                     to_string(s));
  }
}

template <class T>
Var<T> Backbone<T>::forward_embed(Tape<T>& tape, Var<T> images, std::size_t domain, Mode mode) {
  check_input(images.shape(), domain);
  Var<T> x = images;
  for (ConvBlock<T>& unit : blocks_) {
    x = ops::conv2d(x, tape.parameter(unit.weight), std::nullopt, unit.stride, unit.padding);
    x = unit.norm->forward(x, domain, mode);
    x = ops::relu(x);
  }
  x = ops::global_avg_pool(x);
  if (proj_weight_) x = ops::linear(x, tape.parameter(*proj_weight_), tape.parameter(*proj_bias_));
  return x;
}

template <class T>
Tensor<T> Backbone<T>::embed(const Tensor<T>& images, std::size_t domain, Mode mode) {
  Tape<T> tape;
  return forward_embed(tape, tape.input(images, false), domain, mode).value();
}

template <class T>
Tensor<T> Backbone<T>::forward_fused(const Tensor<T>& images, Mode mode) {
  if (mode != Mode::eval) throw Error("forward_fused is eval-only");
  Tensor<T> acc;
  for (std::size_t d = 0; d < config_.num_domains; ++d) {
    Tensor<T> e = embed(images, d, Mode::eval);
    if (d == 0) {
      acc = std::move(e);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
    }
  }
  const T inv = T(1) / static_cast<T>(config_.num_domains);
  if (config_.num_domains > 1) {
    for (T& v : acc.data()) v *= inv;
  }
  return acc;
}

template <class T>
std::vector<Parameter<T>*> Backbone<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (ConvBlock<T>& unit : blocks_) {
    out.push_back(&unit.weight);
    unit.norm->collect_parameters(out);
  }
  if (proj_weight_) {
    out.push_back(&*proj_weight_);
    out.push_back(&*proj_bias_);
  }
  return out;
}

template <class T>
std::vector<DomainBNState<T>*> Backbone<T>::states() {
  std::vector<DomainBNState<T>*> out;
  for (ConvBlock<T>& unit : blocks_) unit.norm->collect_states(out);
  return out;
}

template <class T>
std::size_t Backbone<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <class T>
std::size_t Backbone<T>::buffer_count() {
  std::size_t n = 0;
  for (auto* s : states()) n += 2 * s->num_domains() * s->channels();
  return n;
}

namespace {

std::string state_prefix(std::size_t unit_index, std::size_t state_index) {
  return "stats.unit" + std::to_string(unit_index) + ".s" + std::to_string(state_index);
}

}  // namespace

template <class T>
std::map<std::string, Tensor<T>> Backbone<T>::state_tensors(std::map<std::string, std::int64_t>* counts) {
  std::map<std::string, Tensor<T>> out;
  for (auto* p : parameters()) out.emplace(p->name, p->value);
  for (std::size_t u = 0; u < blocks_.size(); ++u) {
    std::vector<DomainBNState<T>*> st;
    blocks_[u].norm->collect_states(st);
    for (std::size_t s = 0; s < st.size(); ++s) {
      for (std::size_t d = 0; d < st[s]->num_domains(); ++d) {
        const std::string key = state_prefix(u, s) + ".d" + std::to_string(d);
        const DomainStats<T>& ds = st[s]->at(d);
        const std::size_t c = ds.running_mean.size();
        out.emplace(key + ".mean", Tensor<T>(Shape{1, c, 1, 1}, ds.running_mean));
        out.emplace(key + ".var", Tensor<T>(Shape{1, c, 1, 1}, ds.running_var));
        if (counts) (*counts)[key + ".count"] = ds.batch_count;
      }
    }
  }
  return out;
}

template <class T>
void Backbone<T>::load_state_tensors(const std::map<std::string, Tensor<T>>& tensors,
                                     const std::map<std::string, std::int64_t>& counts) {
  auto fetch = [&](const std::string& key, const Shape& expect) -> const Tensor<T>& {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw DataError("checkpoint is missing tensor '" + key + "'");
    if (!(it->second.shape() == expect)) {
      throw DataError("checkpoint tensor '" + key + "' has shape " + to_string(it->second.shape()) + ", model expects " +
                      to_string(expect));
    }
    return it->second;
  };
  for (auto* p : parameters()) p->value = fetch(p->name, p->value.shape());
  for (std::size_t u = 0; u < blocks_.size(); ++u) {
    std::vector<DomainBNState<T>*> st;
    blocks_[u].norm->collect_states(st);
    for (std::size_t s = 0; s < st.size(); ++s) {
      for (std::size_t d = 0; d < st[s]->num_domains(); ++d) {
        const std::string key = state_prefix(u, s) + ".d" + std::to_string(d);
        DomainStats<T>& ds = st[s]->at(d);
        const Shape shape{1, ds.running_mean.size(), 1, 1};
        ds.running_mean = fetch(key + ".mean", shape).storage();
        ds.running_var = fetch(key + ".var", shape).storage();
        auto it = counts.find(key + ".count");
        if (it == counts.end()) throw DataError("checkpoint is missing '" + key + ".count'");
        ds.batch_count = it->second;
      }
    }
  }
}

template <class T>
ClassifierBank<T>::ClassifierBank(std::size_t dim, const std::vector<std::size_t>& classes_per_domain,
                                  std::mt19937_64& rng) {
  rebuild(dim, classes_per_domain, rng);
}

template <class T>
void ClassifierBank<T>::rebuild(std::size_t dim, const std::vector<std::size_t>& classes_per_domain,
                                std::mt19937_64& rng) {
  if (dim == 0) throw ConfigError("classifier input dimension must be positive");
  dim_ = dim;
  heads_.clear();
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
  for (std::size_t d = 0; d < classes_per_domain.size(); ++d) {
    const std::size_t k = classes_per_domain[d];
    if (k == 0) {
      heads_.emplace_back(std::nullopt);
      continue;
    }
    const std::string prefix = "head.d" + std::to_string(d);
    LinearHead<T> h{Parameter<T>(prefix + ".weight", uniform_tensor<T>(Shape{k, dim, 1, 1}, bound, rng)),
                    Parameter<T>(prefix + ".bias", uniform_tensor<T>(Shape{1, k, 1, 1}, bound, rng))};
    heads_.emplace_back(std::move(h));
  }
}

template <class T>
bool ClassifierBank<T>::has_head(std::size_t domain) const {
  return domain < heads_.size() && heads_[domain].has_value();
}

template <class T>
LinearHead<T>& ClassifierBank<T>::head(std::size_t domain) {
  if (!has_head(domain)) throw Error("no classifier head for domain " + std::to_string(domain));
  return *heads_[domain];
}

template <class T>
std::size_t ClassifierBank<T>::classes(std::size_t domain) const {
  return has_head(domain) ? heads_[domain]->weight.value.shape().n : 0;
}

template <class T>
Var<T> ClassifierBank<T>::classify(Tape<T>& tape, Var<T> embeddings, std::size_t domain) {
  LinearHead<T>& h = head(domain);
  return ops::linear(embeddings, tape.parameter(h.weight), tape.parameter(h.bias));
}

template <class T>
std::vector<Parameter<T>*> ClassifierBank<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& h : heads_) {
    if (!h) continue;
    out.push_back(&h->weight);
    out.push_back(&h->bias);
  }
  return out;
}

template <class T>
std::map<std::string, Tensor<T>> ClassifierBank<T>::state_tensors() {
  std::map<std::string, Tensor<T>> out;
  for (auto* p : parameters()) out.emplace(p->name, p->value);
  return out;
}

template <class T>
void ClassifierBank<T>::load_state_tensors(const std::map<std::string, Tensor<T>>& tensors,
                                           std::size_t num_domains) {
  heads_.assign(num_domains, std::nullopt);
  dim_ = 0;
  for (std::size_t d = 0; d < num_domains; ++d) {
    const std::string prefix = "head.d" + std::to_string(d);
    auto w = tensors.find(prefix + ".weight");
    auto b = tensors.find(prefix + ".bias");
    if (w == tensors.end() && b == tensors.end()) continue;
    if (w == tensors.end() || b == tensors.end()) throw DataError("checkpoint has a partial head for domain " + std::to_string(d));
    if (b->second.size() != w->second.shape().n) throw DataError("checkpoint head bias/weight mismatch for domain " + std::to_string(d));
    dim_ = w->second.shape().row();
    heads_[d] = LinearHead<T>{Parameter<T>(w->first, w->second), Parameter<T>(b->first, b->second)};
  }
}

template class Backbone<float>;
template class Backbone<double>;
template class ClassifierBank<float>;
template class ClassifierBank<double>;

}  // namespace dsaf
