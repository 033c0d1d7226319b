#include "dsaf/optim.hpp"

#include <cmath>

namespace dsaf {

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg_.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(cfg_.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

void Adam::step(const std::vector<Parameter<float>*>& params) {
  for (Parameter<float>* p : params) {
    if (!p->trainable) continue;
    Slot& s = slots_[p->name];
    if (s.m.size() != p->value.size()) {
      s.m = Tensor<float>(p->value.shape());
      s.v = Tensor<float>(p->value.shape());
      s.steps = 0;
    }
    ++s.steps;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.steps));
    auto value = p->value.data();
    auto grad = p->grad.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * static_cast<double>(value[i]);
      const double m = b1 * s.m[i] + (1.0 - b1) * g;
      const double v = b2 * s.v[i] + (1.0 - b2) * g * g;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      const double update = cfg_.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
      value[i] = static_cast<float>(static_cast<double>(value[i]) - update);
    }
  }
}

void Adam::forget(const std::string& prefix) {
  for (auto it = slots_.begin(); it != slots_.end();) {
    if (it->first.starts_with(prefix)) {
      it = slots_.erase(it);
    } else {
      ++it;
    }
  }
}

void Adam::export_state(std::map<std::string, Tensor<float>>& tensors,
                        std::map<std::string, std::int64_t>& counters) const {
  for (const auto& [name, s] : slots_) {
    tensors["adam.m." + name] = s.m;
    tensors["adam.v." + name] = s.v;
    counters["adam.steps." + name] = s.steps;
  }
}

void Adam::import_state(const std::map<std::string, Tensor<float>>& tensors,
                        const std::map<std::string, std::int64_t>& counters) {
  slots_.clear();
  const std::string steps_prefix = "adam.steps.";
  for (const auto& [key, steps] : counters) {
    if (!key.starts_with(steps_prefix)) continue;
    const std::string name = key.substr(steps_prefix.size());
    auto m = tensors.find("adam.m." + name);
    auto v = tensors.find("adam.v." + name);
    if (m == tensors.end() || v == tensors.end()) throw DataError("checkpoint optimizer state incomplete for '" + name + "'");
    slots_[name] = Slot{m->second, v->second, steps};
  }
}

}  // namespace dsaf
