#include "dsaf/norm.hpp"

#include <cmath>

#include "dsaf/ops.hpp"

namespace dsaf {

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::bn: return "bn";
    case NormKind::in: return "in";
    case NormKind::ibn: return "ibn";
    case NormKind::dsbn: return "dsbn";
    case NormKind::dsan: return "dsan";
    case NormKind::dson: return "dson";
  }
  return "?";
}

NormKind parse_norm_kind(const std::string& name) {
  for (NormKind k : {NormKind::bn, NormKind::in, NormKind::ibn, NormKind::dsbn, NormKind::dsan,
                     NormKind::dson}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown norm kind '" + name + "' (expected bn|in|ibn|dsbn|dsan|dson)");
}

template <class T>
AffineParams<T>::AffineParams(const std::string& prefix, std::size_t channels)
    : gamma(prefix + ".gamma", Tensor<T>(Shape{1, channels, 1, 1}, T(1))),
      beta(prefix + ".beta", Tensor<T>(Shape{1, channels, 1, 1}, T(0))) {}

template <class T>
DomainBNState<T>::DomainBNState(std::size_t num_domains, std::size_t channels, T m, T eps)
    : momentum(m), epsilon(eps) {
  if (num_domains == 0) throw ConfigError("normalization state needs at least one domain");
  if (!(m > T(0) && m <= T(1))) throw ConfigError("BN momentum must lie in (0, 1]");
  if (!(eps > T(0))) throw ConfigError("BN epsilon must be positive");
  domains.resize(num_domains);
  for (auto& d : domains) {
    d.running_mean.assign(channels, T(0));
    d.running_var.assign(channels, T(1));
  }
}

template <class T>
const DomainStats<T>& DomainBNState<T>::at(std::size_t domain) const {
  if (domain >= domains.size()) {
    throw Error("domain " + std::to_string(domain) + " out of range for " +
                std::to_string(domains.size()) + " domains");
  }
  return domains[domain];
}

template <class T>
DomainStats<T>& DomainBNState<T>::at(std::size_t domain) {
  if (domain >= domains.size()) {
    throw Error("domain " + std::to_string(domain) + " out of range for " +
                std::to_string(domains.size()) + " domains");
  }
  return domains[domain];
}

namespace norm {

namespace {

void require_spatial(const Shape& s, const char* op) {
  if (s.empty()) throw ShapeError(std::string(op) + ": empty tensor " + to_string(s));
}

// (x - mean) / sqrt(var + eps) over each (sample, channel) plane.
template <class T>
Var<T> normalize_planes(Var<T> x, T eps) {
  const Shape s = x.shape();
  require_spatial(s, "instance_norm");
  const std::size_t m = s.plane();
  const std::size_t planes = s.n * s.c;
  Tensor<T> out(s);
  std::vector<T> inv_std(planes);
  const auto xv = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * m;
    T mu = 0;
    for (std::size_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<T>(m);
    T var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(m);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[p] = is;
    T* dst = out.data().data() + p * m;
    for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mu) * is;
  }
  return x.tape->record(
      std::move(out), {x},
      [x, m, planes, inv_std](Tape<T>& t, Var<T> self) {
        const auto xhat = t.value(self).data();
        const auto g = t.grad(self).data();
        auto gx = t.grad(x).data();
        const T inv_m = T(1) / static_cast<T>(m);
        for (std::size_t p = 0; p < planes; ++p) {
          T sg = 0;
          T sgx = 0;
          for (std::size_t i = 0; i < m; ++i) {
            sg += g[p * m + i];
            sgx += g[p * m + i] * xhat[p * m + i];
          }
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t k = p * m + i;
            gx[k] += inv_std[p] * (g[k] - inv_m * sg - xhat[k] * inv_m * sgx);
          }
        }
      },
      "instance_norm");
}

template <class T>
struct ChannelStats {
  std::vector<T> mean;
  std::vector<T> var;
};

template <class T>
ChannelStats<T> batch_channel_stats(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const std::size_t m = s.plane();
  const T count = static_cast<T>(s.n * m);
  ChannelStats<T> st{std::vector<T>(s.c, T(0)), std::vector<T>(s.c, T(0))};
  for (std::size_t c = 0; c < s.c; ++c) {
    T mu = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = x.data().data() + (n * s.c + c) * m;
      for (std::size_t i = 0; i < m; ++i) mu += src[i];
    }
    mu /= count;
    T var = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = x.data().data() + (n * s.c + c) * m;
      for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    }
    st.mean[c] = mu;
    st.var[c] = var / count;
  }
  return st;
}

// Batch-statistics normalization over (n, h, w) per channel.
template <class T>
Var<T> normalize_batch(Var<T> x, T eps, const ChannelStats<T>& st) {
  const Shape s = x.shape();
  const std::size_t m = s.plane();
  Tensor<T> out(s);
  std::vector<T> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) inv_std[c] = T(1) / std::sqrt(st.var[c] + eps);
  const auto xv = x.value().data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * m;
      for (std::size_t i = 0; i < m; ++i) out[base + i] = (xv[base + i] - st.mean[c]) * inv_std[c];
    }
  }
  return x.tape->record(
      std::move(out), {x},
      [x, s, m, inv_std](Tape<T>& t, Var<T> self) {
        const auto xhat = t.value(self).data();
        const auto g = t.grad(self).data();
        auto gx = t.grad(x).data();
        const T inv_count = T(1) / static_cast<T>(s.n * m);
        for (std::size_t c = 0; c < s.c; ++c) {
          T sg = 0;
          T sgx = 0;
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * m;
            for (std::size_t i = 0; i < m; ++i) {
              sg += g[base + i];
              sgx += g[base + i] * xhat[base + i];
            }
          }
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * m;
            for (std::size_t i = 0; i < m; ++i) {
              const std::size_t k = base + i;
              gx[k] += inv_std[c] * (g[k] - inv_count * sg - xhat[k] * inv_count * sgx);
            }
          }
        }
      },
      "batch_norm");
}

// Normalization with constant per-channel statistics (eval mode).
template <class T>
Var<T> normalize_fixed(Var<T> x, const std::vector<T>& mean, const std::vector<T>& var, T eps) {
  const Shape s = x.shape();
  const std::size_t m = s.plane();
  std::vector<T> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);
  Tensor<T> out(s);
  const auto xv = x.value().data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * m;
      for (std::size_t i = 0; i < m; ++i) out[base + i] = (xv[base + i] - mean[c]) * inv_std[c];
    }
  }
  return x.tape->record(
      std::move(out), {x},
      [x, s, m, inv_std](Tape<T>& t, Var<T> self) {
        const auto g = t.grad(self).data();
        auto gx = t.grad(x).data();
        for (std::size_t n = 0; n < s.n; ++n) {
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = (n * s.c + c) * m;
            for (std::size_t i = 0; i < m; ++i) gx[base + i] += g[base + i] * inv_std[c];
          }
        }
      },
      "batch_norm_eval");
}

template <class T>
void update_running(DomainStats<T>& d, const ChannelStats<T>& st, T momentum) {
  for (std::size_t c = 0; c < st.mean.size(); ++c) {
    d.running_mean[c] = (T(1) - momentum) * d.running_mean[c] + momentum * st.mean[c];
    d.running_var[c] = (T(1) - momentum) * d.running_var[c] + momentum * st.var[c];
  }
  ++d.batch_count;
}

template <class T>
Var<T> apply_affine(Var<T> y, AffineParams<T>* affine) {
  if (affine == nullptr) return y;
  if (affine->channels() != y.shape().c) {
    throw ShapeError("affine has " + std::to_string(affine->channels()) + " channels, input has " +
                     std::to_string(y.shape().c));
  }
  Tape<T>& tape = *y.tape;
  return ops::channel_affine(y, tape.parameter(affine->gamma), tape.parameter(affine->beta));
}

}  // namespace

template <class T>
Var<T> instance_norm(Var<T> x, std::type_identity_t<AffineParams<T>>* affine, std::type_identity_t<T> epsilon) {
  return apply_affine(normalize_planes(x, epsilon), affine);
}

template <class T>
Var<T> batch_norm_domain(Var<T> x, std::size_t domain, std::type_identity_t<AffineParams<T>>* affine,
                         DomainBNState<T>& state, Mode mode) {
  const Shape s = x.shape();
  require_spatial(s, "batch_norm_domain");
  DomainStats<T>& d = state.at(domain);
  if (s.c != state.channels()) {
    throw ShapeError("batch_norm_domain: input has " + std::to_string(s.c) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  if (mode == Mode::eval) {
    return apply_affine(normalize_fixed(x, d.running_mean, d.running_var, state.epsilon), affine);
  }
  if (s.n * s.plane() < 2) {
    throw ShapeError("batch_norm_domain: train mode needs at least 2 values per channel, got " +
                     to_string(s));
  }
  const ChannelStats<T> st = batch_channel_stats(x.value());
  Var<T> y = normalize_batch(x, state.epsilon, st);
  update_running(d, st, state.momentum);
  return apply_affine(y, affine);
}

template <class T>
Var<T> dson_forward(Var<T> x, std::size_t domain, Var<T> mix_weight, std::type_identity_t<AffineParams<T>>* affine,
                    DomainBNState<T>& state, Mode mode) {
  const Shape s = x.shape();
  require_spatial(s, "dson_forward");
  if (mix_weight.value().size() != 1) throw ShapeError("dson_forward: mix weight must be a scalar");
  const T w = mix_weight.value()[0];
  if (!(w >= T(0) && w <= T(1))) {
    throw Error("dson_forward: mix weight " + std::to_string(w) + " outside [0, 1]");
  }
  if (s.c != state.channels()) throw ShapeError("dson_forward: channel count does not match state");
  DomainStats<T>& d = state.at(domain);
  const bool train = mode == Mode::train;
  if (train && s.n * s.plane() < 2) {
    throw ShapeError("dson_forward: train mode needs at least 2 values per channel");
  }
  ChannelStats<T> batch;
  if (train) {
    batch = batch_channel_stats(x.value());
  } else {
    batch = ChannelStats<T>{d.running_mean, d.running_var};
  }

  const std::size_t m = s.plane();
  const std::size_t planes = s.n * s.c;
  std::vector<T> inst_mean(planes);
  std::vector<T> inst_var(planes);
  std::vector<T> mix_mean(planes);
  std::vector<T> inv_std(planes);
  const auto xv = x.value().data();
  Tensor<T> out(s);
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t c = p % s.c;
    const T* src = xv.data() + p * m;
    T mu = 0;
    for (std::size_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<T>(m);
    T var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(m);
    inst_mean[p] = mu;
    inst_var[p] = var;
    mix_mean[p] = w * batch.mean[c] + (T(1) - w) * mu;
    const T mix_var = w * batch.var[c] + (T(1) - w) * var;
    inv_std[p] = T(1) / std::sqrt(mix_var + state.epsilon);
    T* dst = out.data().data() + p * m;
    for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mix_mean[p]) * inv_std[p];
  }
  if (train) update_running(d, batch, state.momentum);

  Var<T> y = x.tape->record(
      std::move(out), {x, mix_weight},
      [x, mix_weight, s, m, planes, train, w, batch, inst_mean, inst_var, mix_mean,
       inv_std](Tape<T>& t, Var<T> self) {
        const auto g = t.grad(self).data();
        const auto xv2 = t.value(x).data();
        std::vector<T> d_mix_mean(planes);
        std::vector<T> d_mix_var(planes);
        T dw = 0;
        for (std::size_t p = 0; p < planes; ++p) {
          const std::size_t c = p % s.c;
          T a = 0;
          T b = 0;
          for (std::size_t i = 0; i < m; ++i) {
            a += g[p * m + i];
            b += g[p * m + i] * (xv2[p * m + i] - mix_mean[p]);
          }
          const T is = inv_std[p];
          d_mix_mean[p] = -a * is;
          d_mix_var[p] = -b * is * is * is / T(2);
          dw += d_mix_mean[p] * (batch.mean[c] - inst_mean[p]) +
                d_mix_var[p] * (batch.var[c] - inst_var[p]);
        }
        if (t.requires_grad(mix_weight)) t.grad(mix_weight)[0] += dw;
        if (!t.requires_grad(x)) return;
        std::vector<T> d_batch_mean(s.c, T(0));
        std::vector<T> d_batch_var(s.c, T(0));
        if (train) {
          for (std::size_t p = 0; p < planes; ++p) {
            d_batch_mean[p % s.c] += w * d_mix_mean[p];
            d_batch_var[p % s.c] += w * d_mix_var[p];
          }
        }
        const T inv_m = T(1) / static_cast<T>(m);
        const T inv_count = T(1) / static_cast<T>(s.n * m);
        auto gx = t.grad(x).data();
        for (std::size_t p = 0; p < planes; ++p) {
          const std::size_t c = p % s.c;
          const T dmi = (T(1) - w) * d_mix_mean[p];
          const T dvi = (T(1) - w) * d_mix_var[p];
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t k = p * m + i;
            T v = g[k] * inv_std[p] + dmi * inv_m + dvi * T(2) * (xv2[k] - inst_mean[p]) * inv_m;
            if (train) {
              v += d_batch_mean[c] * inv_count +
                   d_batch_var[c] * T(2) * (xv2[k] - batch.mean[c]) * inv_count;
            }
            gx[k] += v;
          }
        }
      },
      "dson");
  return apply_affine(y, affine);
}

template <class T>
Var<T> dson_forward(Var<T> x, std::size_t domain, std::type_identity_t<T> mix_weight, std::type_identity_t<AffineParams<T>>* affine,
                    DomainBNState<T>& state, Mode mode) {
  Var<T> w = x.tape->constant(Tensor<T>::scalar(mix_weight));
  return dson_forward(x, domain, w, affine, state, mode);
}

}  // namespace norm

template <class T>
BatchNormLayer<T>::BatchNormLayer(const std::string& name, std::size_t channels)
    : affine_(name, channels), state_(1, channels) {}

template <class T>
Var<T> BatchNormLayer<T>::forward(Var<T> x, std::size_t, Mode mode) {
  return norm::batch_norm_domain(x, 0, &affine_, state_, mode);
}

template <class T>
void BatchNormLayer<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&affine_.gamma);
  out.push_back(&affine_.beta);
}

template <class T>
void BatchNormLayer<T>::collect_states(std::vector<DomainBNState<T>*>& out) {
  out.push_back(&state_);
}

template <class T>
InstanceNormLayer<T>::InstanceNormLayer(const std::string& name, std::size_t channels)
    : affine_(name, channels) {}

template <class T>
Var<T> InstanceNormLayer<T>::forward(Var<T> x, std::size_t, Mode) {
  return norm::instance_norm(x, &affine_, T(1e-5));
}

template <class T>
void InstanceNormLayer<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&affine_.gamma);
  out.push_back(&affine_.beta);
}

namespace {

std::size_t half_of(std::size_t channels, const char* what) {
  if (channels == 0 || channels % 2 != 0) {
    throw ConfigError(std::string(what) + " needs an even, positive channel count; got " +
                      std::to_string(channels));
  }
  return channels / 2;
}

}  // namespace

template <class T>
IbnLayer<T>::IbnLayer(const std::string& name, std::size_t channels)
    : channels_(channels),
      in_affine_(name + ".in", half_of(channels, "IBN")),
      bn_affine_(name + ".bn", channels / 2),
      bn_state_(1, channels / 2) {}

template <class T>
Var<T> IbnLayer<T>::forward(Var<T> x, std::size_t, Mode mode) {
  const std::size_t half = channels_ / 2;
  Var<T> a = norm::instance_norm(ops::slice_channels(x, 0, half), &in_affine_, bn_state_.epsilon);
  Var<T> b = norm::batch_norm_domain(ops::slice_channels(x, half, channels_), 0, &bn_affine_,
                                     bn_state_, mode);
  return ops::concat_channels(a, b);
}

template <class T>
void IbnLayer<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  for (auto* a : {&in_affine_, &bn_affine_}) {
    out.push_back(&a->gamma);
    out.push_back(&a->beta);
  }
}

template <class T>
void IbnLayer<T>::collect_states(std::vector<DomainBNState<T>*>& out) {
  out.push_back(&bn_state_);
}

template <class T>
DsbnLayer<T>::DsbnLayer(const std::string& name, std::size_t channels, std::size_t num_domains)
    : state_(num_domains, channels) {
  for (std::size_t d = 0; d < num_domains; ++d) {
    affines_.emplace_back(name + ".d" + std::to_string(d), channels);
  }
}

template <class T>
Var<T> DsbnLayer<T>::forward(Var<T> x, std::size_t domain, Mode mode) {
  state_.at(domain);
  return norm::batch_norm_domain(x, domain, &affines_[domain], state_, mode);
}

template <class T>
void DsbnLayer<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  for (auto& a : affines_) {
    out.push_back(&a.gamma);
    out.push_back(&a.beta);
  }
}

template <class T>
void DsbnLayer<T>::collect_states(std::vector<DomainBNState<T>*>& out) {
  out.push_back(&state_);
}

template <class T>
DsanLayer<T>::DsanLayer(const std::string& name, std::size_t channels, std::size_t num_domains,
                        DsanOptions options)
    : channels_(channels), options_(options), bn_state_(num_domains, half_of(channels, "DSAN")) {
  const std::size_t half = channels / 2;
  if (options_.enable_in_affine) {
    const std::size_t copies = options_.share_in_affine ? 1 : num_domains;
    for (std::size_t d = 0; d < copies; ++d) {
      in_affines_.emplace_back(options_.share_in_affine ? name + ".in" : name + ".in.d" + std::to_string(d),
                               half);
    }
  }
  for (std::size_t d = 0; d < num_domains; ++d) {
    bn_affines_.emplace_back(name + ".bn.d" + std::to_string(d), half);
  }
}

template <class T>
AffineParams<T>* DsanLayer<T>::in_affine(std::size_t domain) {
  if (in_affines_.empty()) return nullptr;
  return options_.share_in_affine ? &in_affines_.front() : &in_affines_.at(domain);
}

template <class T>
Var<T> DsanLayer<T>::forward(Var<T> x, std::size_t domain, Mode mode) {
  if (x.shape().c != channels_) {
    throw ShapeError("DSAN layer expects " + std::to_string(channels_) + " channels, got " +
                     to_string(x.shape()));
  }
  bn_state_.at(domain);
  const std::size_t half = channels_ / 2;
  Var<T> in_half = norm::instance_norm(ops::slice_channels(x, 0, half), in_affine(domain), epsilon());
  Var<T> bn_half = norm::batch_norm_domain(ops::slice_channels(x, half, channels_), domain,
                                           &bn_affines_[domain], bn_state_, mode);
  return ops::concat_channels(in_half, bn_half);
}

template <class T>
void DsanLayer<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  for (auto& a : in_affines_) {
    out.push_back(&a.gamma);
    out.push_back(&a.beta);
  }
  for (auto& a : bn_affines_) {
    out.push_back(&a.gamma);
    out.push_back(&a.beta);
  }
}

template <class T>
void DsanLayer<T>::collect_states(std::vector<DomainBNState<T>*>& out) {
  out.push_back(&bn_state_);
}

template <class T>
DsonLayer<T>::DsonLayer(const std::string& name, std::size_t channels, std::size_t num_domains,
                        T initial_weight, bool learnable_weight)
    : state_(num_domains, channels) {
  if (!(initial_weight > T(0) && initial_weight < T(1))) {
    throw ConfigError("DSON initial blend weight must lie strictly inside (0, 1)");
  }
  for (std::size_t d = 0; d < num_domains; ++d) {
    affines_.emplace_back(name + ".d" + std::to_string(d), channels);
  }
  const T logit = std::log(initial_weight / (T(1) - initial_weight));
  mix_logit_ = Parameter<T>(name + ".mix_logit", Tensor<T>::scalar(logit), learnable_weight);
}

template <class T>
T DsonLayer<T>::mix_weight() const {
  return T(1) / (T(1) + std::exp(-mix_logit_.value[0]));
}

template <class T>
Var<T> DsonLayer<T>::forward(Var<T> x, std::size_t domain, Mode mode) {
  state_.at(domain);
  Var<T> w = ops::sigmoid(x.tape->parameter(mix_logit_));
  return norm::dson_forward(x, domain, w, &affines_[domain], state_, mode);
}

template <class T>
void DsonLayer<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  for (auto& a : affines_) {
    out.push_back(&a.gamma);
    out.push_back(&a.beta);
  }
  out.push_back(&mix_logit_);
}

template <class T>
void DsonLayer<T>::collect_states(std::vector<DomainBNState<T>*>& out) {
  out.push_back(&state_);
}

template <class T>
std::unique_ptr<NormLayer<T>> make_norm_layer(NormKind kind, const std::string& name,
                                              std::size_t channels, std::size_t num_domains,
                                              DsanOptions dsan_options) {
  switch (kind) {
    case NormKind::bn: return std::make_unique<BatchNormLayer<T>>(name, channels);
    case NormKind::in: return std::make_unique<InstanceNormLayer<T>>(name, channels);
    case NormKind::ibn: return std::make_unique<IbnLayer<T>>(name, channels);
    case NormKind::dsbn: return std::make_unique<DsbnLayer<T>>(name, channels, num_domains);
    case NormKind::dsan: return std::make_unique<DsanLayer<T>>(name, channels, num_domains, dsan_options);
    case NormKind::dson: return std::make_unique<DsonLayer<T>>(name, channels, num_domains);
  }
  throw ConfigError("unknown norm kind");
}

#define DSAF_INSTANTIATE_NORM(T)                                                                  \
  template struct AffineParams<T>;                                                                \
  template struct DomainBNState<T>;                                                               \
  template class BatchNormLayer<T>;                                                               \
  template class InstanceNormLayer<T>;                                                            \
  template class IbnLayer<T>;                                                                     \
  template class DsbnLayer<T>;                                                                    \
  template class DsanLayer<T>;                                                                    \
  template class DsonLayer<T>;                                                                    \
  template std::unique_ptr<NormLayer<T>> make_norm_layer<T>(NormKind, const std::string&,         \
                                                            std::size_t, std::size_t, DsanOptions); \
  template Var<T> norm::instance_norm(Var<T>, AffineParams<T>*, T);                               \
  template Var<T> norm::batch_norm_domain(Var<T>, std::size_t, AffineParams<T>*, DomainBNState<T>&, \
                                          Mode);                                                  \
  template Var<T> norm::dson_forward(Var<T>, std::size_t, Var<T>, AffineParams<T>*,               \
                                     DomainBNState<T>&, Mode);                                    \
  template Var<T> norm::dson_forward(Var<T>, std::size_t, T, AffineParams<T>*, DomainBNState<T>&, \
                                     Mode);

DSAF_INSTANTIATE_NORM(float)
DSAF_INSTANTIATE_NORM(double)

}  // namespace dsaf
