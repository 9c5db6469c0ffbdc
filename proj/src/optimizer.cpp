#include "dmmg/optimizer.hpp"

#include <cmath>

#include "dmmg/errors.hpp"

namespace dmmg {

void ParameterSet::add(std::string name, Tensor value) {
  if (find(name))
    throw ContractError("parameter set already contains '" + name + "'");
  value.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(value)});
}

Tensor* ParameterSet::find(const std::string& name) {
  for (auto& it : items_)
    if (it.name == name) return &it.value;
  return nullptr;
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& it : items_)
    if (it.name == name) return &it.value;
  return nullptr;
}

void ParameterSet::set_requires_grad(bool rg) {
  for (auto& it : items_) it.value.set_requires_grad(rg);
}

std::int64_t ParameterSet::total_numel() const {
  std::int64_t n = 0;
  for (const auto& it : items_) n += it.value.numel();
  return n;
}

OptimizerState OptimizerState::sgd(float lr, float momentum, float weight_decay) {
  if (!(lr > 0.0f)) throw ConfigError("sgd: learning rate must be positive");
  OptimizerState s;
  s.kind = OptimizerKind::SgdMomentum;
  s.learning_rate = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  return s;
}

OptimizerState OptimizerState::adam(float lr, float weight_decay, float beta1, float beta2,
                                    float eps) {
  if (!(lr > 0.0f)) throw ConfigError("adam: learning rate must be positive");
  OptimizerState s;
  s.kind = OptimizerKind::Adam;
  s.learning_rate = lr;
  s.weight_decay = weight_decay;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void optimizer_step(OptimizerState& state, ParameterSet& params,
                    const std::vector<std::vector<float>>& grads, StepMode mode) {
  if (grads.size() != params.size())
    throw ShapeError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  if (state.moment1.empty()) state.moment1.resize(params.size());
  if (state.kind == OptimizerKind::Adam && state.moment2.empty())
    state.moment2.resize(params.size());
  if (state.moment1.size() != params.size())
    throw ContractError("optimizer_step: moment buffers track a different parameter set");

  state.step_count += 1;
  const float lr = state.learning_rate;
  const float wd = state.weight_decay;
  const float sign = mode == StepMode::Ascent ? -1.0f : 1.0f;

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi].value;
    const auto& g = grads[pi];
    const size_t n = static_cast<size_t>(p.numel());
    if (g.size() != n)
      throw ShapeError("optimizer_step: gradient size " + std::to_string(g.size()) +
                       " does not match parameter '" + params[pi].name + "'");
    for (float gv : g)
      if (!std::isfinite(gv))
        throw NumericError("optimizer_step: gradient for '" + params[pi].name +
                           "' is not finite");

    float* pd = p.mutable_data();
    if (state.kind == OptimizerKind::SgdMomentum) {
      auto& buf = state.moment1[pi];
      if (buf.empty()) buf.assign(n, 0.0f);
      if (buf.size() != n)
        throw ShapeError("optimizer_step: velocity buffer mismatch for '" + params[pi].name + "'");
      for (size_t i = 0; i < n; ++i) {
        buf[i] = state.momentum * buf[i] + sign * g[i];
        pd[i] -= lr * (buf[i] + wd * pd[i]);
      }
    } else {
      auto& m1 = state.moment1[pi];
      auto& m2 = state.moment2[pi];
      if (m1.empty()) m1.assign(n, 0.0f);
      if (m2.empty()) m2.assign(n, 0.0f);
      if (m1.size() != n || m2.size() != n)
        throw ShapeError("optimizer_step: moment buffer mismatch for '" + params[pi].name + "'");
      const float c1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.step_count));
      const float c2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.step_count));
      for (size_t i = 0; i < n; ++i) {
        float gv = sign * g[i] + wd * pd[i];
        m1[i] = state.beta1 * m1[i] + (1.0f - state.beta1) * gv;
        m2[i] = state.beta2 * m2[i] + (1.0f - state.beta2) * gv * gv;
        float mhat = m1[i] / c1;
        float vhat = m2[i] / c2;
        pd[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
  }
}

void optimizer_step(OptimizerState& state, ParameterSet& params, StepMode mode) {
  std::vector<std::vector<float>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(p.value.grad());
  optimizer_step(state, params, grads, mode);
}

}  // namespace dmmg
