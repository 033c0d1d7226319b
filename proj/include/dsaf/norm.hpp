#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "dsaf/autograd.hpp"

namespace dsaf {

enum class Mode { train, eval };

enum class NormKind { bn, in, ibn, dsbn, dsan, dson };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& name);

// Per-channel scale and shift; gamma starts at 1, beta at 0.
template <class T>
struct AffineParams {
  Parameter<T> gamma;
  Parameter<T> beta;

  AffineParams() = default;
  AffineParams(const std::string& prefix, std::size_t channels);
  std::size_t channels() const { return gamma.value.size(); }
};

template <class T>
struct DomainStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  std::int64_t batch_count = 0;
};

// Running statistics for D domains. Before any training batch, a domain
// normalizes with mean 0 and variance 1.
template <class T>
struct DomainBNState {
  std::vector<DomainStats<T>> domains;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  DomainBNState() = default;
  DomainBNState(std::size_t num_domains, std::size_t channels, T momentum = T(0.1),
                T epsilon = T(1e-5));

  std::size_t num_domains() const { return domains.size(); }
  std::size_t channels() const { return domains.empty() ? 0 : domains.front().running_mean.size(); }
  const DomainStats<T>& at(std::size_t domain) const;
  DomainStats<T>& at(std::size_t domain);
};

// Functional normalization ops. Statistics use the biased variance.
namespace norm {

// Per (sample, channel) plane. `affine` may be null.
template <class T>
Var<T> instance_norm(Var<T> x, std::type_identity_t<AffineParams<T>>* affine, std::type_identity_t<T> epsilon = T(1e-5));

// Train mode normalizes with the batch statistics over (n, h, w) and folds
// them into domain `domain`'s running statistics; eval mode reads them.
// Only domain `domain` is touched.
template <class T>
Var<T> batch_norm_domain(Var<T> x, std::size_t domain, std::type_identity_t<AffineParams<T>>* affine,
                         DomainBNState<T>& state, Mode mode);

// Blends batch (per domain) and instance statistics:
// mean = w*mean_batch + (1-w)*mean_instance, likewise for the variance.
// `mix_weight` is a one-element tensor so it can be learned.
template <class T>
Var<T> dson_forward(Var<T> x, std::size_t domain, Var<T> mix_weight, std::type_identity_t<AffineParams<T>>* affine,
                    DomainBNState<T>& state, Mode mode);

template <class T>
Var<T> dson_forward(Var<T> x, std::size_t domain, std::type_identity_t<T> mix_weight, std::type_identity_t<AffineParams<T>>* affine,
                    DomainBNState<T>& state, Mode mode);

}  // namespace norm

// Normalization layer selected per backbone block. `domain` picks the
// domain-specific branch; shared layers ignore it.
template <class T>
class NormLayer {
 public:
  virtual ~NormLayer() = default;

  virtual NormKind kind() const = 0;
  virtual std::size_t channels() const = 0;
  virtual Var<T> forward(Var<T> x, std::size_t domain, Mode mode) = 0;
  virtual void collect_parameters(std::vector<Parameter<T>*>& out) = 0;
  virtual void collect_states(std::vector<DomainBNState<T>*>& out) = 0;
};

// Shared BN: one set of statistics and affines for all domains.
template <class T>
class BatchNormLayer final : public NormLayer<T> {
 public:
  BatchNormLayer(const std::string& name, std::size_t channels);
  NormKind kind() const override { return NormKind::bn; }
  std::size_t channels() const override { return affine_.channels(); }
  Var<T> forward(Var<T> x, std::size_t domain, Mode mode) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_states(std::vector<DomainBNState<T>*>& out) override;

 private:
  AffineParams<T> affine_;
  DomainBNState<T> state_;
};

template <class T>
class InstanceNormLayer final : public NormLayer<T> {
 public:
  InstanceNormLayer(const std::string& name, std::size_t channels);
  NormKind kind() const override { return NormKind::in; }
  std::size_t channels() const override { return affine_.channels(); }
  Var<T> forward(Var<T> x, std::size_t domain, Mode mode) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_states(std::vector<DomainBNState<T>*>&) override {}

 private:
  AffineParams<T> affine_;
};

// IN (with affine) on the first half of the channels, shared BN on the rest.
template <class T>
class IbnLayer final : public NormLayer<T> {
 public:
  IbnLayer(const std::string& name, std::size_t channels);
  NormKind kind() const override { return NormKind::ibn; }
  std::size_t channels() const override { return channels_; }
  Var<T> forward(Var<T> x, std::size_t domain, Mode mode) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_states(std::vector<DomainBNState<T>*>& out) override;

 private:
  std::size_t channels_;
  AffineParams<T> in_affine_;
  AffineParams<T> bn_affine_;
  DomainBNState<T> bn_state_;
};

// Domain-specific BN: independent statistics and affines per domain.
template <class T>
class DsbnLayer final : public NormLayer<T> {
 public:
  DsbnLayer(const std::string& name, std::size_t channels, std::size_t num_domains);
  NormKind kind() const override { return NormKind::dsbn; }
  std::size_t channels() const override { return state_.channels(); }
  Var<T> forward(Var<T> x, std::size_t domain, Mode mode) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_states(std::vector<DomainBNState<T>*>& out) override;

 private:
  std::vector<AffineParams<T>> affines_;
  DomainBNState<T> state_;
};

struct DsanOptions {
  bool share_in_affine = true;
  bool enable_in_affine = true;
};

// Domain-specific adaptive normalization: channels [0, C/2) go through
// instance normalization, channels [C/2, C) through the BN of the sample's
// domain, and the halves are concatenated in that order.
template <class T>
class DsanLayer final : public NormLayer<T> {
 public:
  DsanLayer(const std::string& name, std::size_t channels, std::size_t num_domains,
            DsanOptions options = {});
  NormKind kind() const override { return NormKind::dsan; }
  std::size_t channels() const override { return channels_; }
  Var<T> forward(Var<T> x, std::size_t domain, Mode mode) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_states(std::vector<DomainBNState<T>*>& out) override;

  const DsanOptions& options() const { return options_; }
  std::size_t num_domains() const { return bn_state_.num_domains(); }
  // Null when the IN affine is disabled.
  AffineParams<T>* in_affine(std::size_t domain);
  AffineParams<T>& bn_affine(std::size_t domain) { return bn_affines_.at(domain); }
  DomainBNState<T>& bn_state() { return bn_state_; }
  T epsilon() const { return bn_state_.epsilon; }

 private:
  std::size_t channels_;
  DsanOptions options_;
  std::vector<AffineParams<T>> in_affines_;
  std::vector<AffineParams<T>> bn_affines_;
  DomainBNState<T> bn_state_;
};

// Per-domain blended batch/instance normalization with one blend weight per
// layer, w = sigmoid(logit), optionally learnable.
template <class T>
class DsonLayer final : public NormLayer<T> {
 public:
  DsonLayer(const std::string& name, std::size_t channels, std::size_t num_domains,
            T initial_weight = T(0.5), bool learnable_weight = true);
  NormKind kind() const override { return NormKind::dson; }
  std::size_t channels() const override { return state_.channels(); }
  Var<T> forward(Var<T> x, std::size_t domain, Mode mode) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_states(std::vector<DomainBNState<T>*>& out) override;

  T mix_weight() const;

 private:
  std::vector<AffineParams<T>> affines_;
  DomainBNState<T> state_;
  Parameter<T> mix_logit_;
};

template <class T>
std::unique_ptr<NormLayer<T>> make_norm_layer(NormKind kind, const std::string& name,
                                              std::size_t channels, std::size_t num_domains,
                                              DsanOptions dsan_options = {});

}  // namespace dsaf
