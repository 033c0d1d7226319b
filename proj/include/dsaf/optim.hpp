#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dsaf/autograd.hpp"

namespace dsaf {

struct AdamConfig {
  double learning_rate = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

// Adam with moments keyed by parameter name. Each parameter keeps its own
// step count, so parameters that appear later (rebuilt classifier heads)
// start with fresh bias correction.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});

  const AdamConfig& config() const { return cfg_; }

  // Updates every trainable parameter from its accumulated gradient.
  void step(const std::vector<Parameter<float>*>& params);
  // Drops moment state for names starting with `prefix`.
  void forget(const std::string& prefix);

  struct Slot {
    Tensor<float> m;
    Tensor<float> v;
    std::int64_t steps = 0;
  };
  const std::map<std::string, Slot>& slots() const { return slots_; }

  // Flattened state for checkpoints: tensors "adam.m.<name>", "adam.v.<name>"
  // and counters "adam.steps.<name>".
  void export_state(std::map<std::string, Tensor<float>>& tensors, std::map<std::string, std::int64_t>& counters) const;
  void import_state(const std::map<std::string, Tensor<float>>& tensors,
                    const std::map<std::string, std::int64_t>& counters);

 private:
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
};

}  // namespace dsaf
