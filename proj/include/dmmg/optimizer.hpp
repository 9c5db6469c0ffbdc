#pragma once

#include <string>
#include <vector>

#include "dmmg/tensor.hpp"

namespace dmmg {

struct NamedParam {
  std::string name;
  Tensor value;
};

/// Ordered collection of named trainable tensors. Order is insertion order
/// and is the serialization order for checkpoints and optimizer buffers.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  NamedParam& operator[](size_t i) { return items_[i]; }
  const NamedParam& operator[](size_t i) const { return items_[i]; }
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  void set_requires_grad(bool rg);
  std::int64_t total_numel() const;
  std::vector<NamedParam>::iterator begin() { return items_.begin(); }
  std::vector<NamedParam>::iterator end() { return items_.end(); }
  std::vector<NamedParam>::const_iterator begin() const { return items_.begin(); }
  std::vector<NamedParam>::const_iterator end() const { return items_.end(); }

 private:
  std::vector<NamedParam> items_;
};

enum class OptimizerKind { SgdMomentum, Adam };
enum class StepMode { Descent, Ascent };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  float learning_rate = 0.0f;
  float weight_decay = 0.0f;
  float momentum = 0.0f;  // sgd
  float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;  // adam
  std::int64_t step_count = 0;
  std::vector<std::vector<float>> moment1;  // sgd velocity or adam first moment
  std::vector<std::vector<float>> moment2;  // adam second moment

  static OptimizerState sgd(float lr, float momentum = 0.0f, float weight_decay = 0.0f);
  static OptimizerState adam(float lr, float weight_decay = 0.0f, float beta1 = 0.9f,
                             float beta2 = 0.999f, float eps = 1e-8f);
};

/// One first-order update over all parameters. Gradients are given per
/// parameter in set order; Ascent flips their sign before any other use, so
/// ascent on J is bitwise identical to descent on -J.
void optimizer_step(OptimizerState& state, ParameterSet& params,
                    const std::vector<std::vector<float>>& grads, StepMode mode);

/// Convenience form reading each parameter's gradient from its tensor
/// (i.e. from the most recent backward pass).
void optimizer_step(OptimizerState& state, ParameterSet& params, StepMode mode);

}  // namespace dmmg
