#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hsr/tensor.hpp"

namespace hsr {

template <class S>
struct NamedTensor {
  std::string name;
  Tensor<S>* tensor;
};

template <class S>
struct AdamConfig {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

// First/second moment accumulators mirroring one fixed parameter list.
template <class S>
class AdamState {
 public:
  AdamState(AdamConfig<S> cfg, std::span<const NamedTensor<S>> params) : cfg_(cfg) {
    if (!(cfg_.lr > S(0))) throw ContractError("adam: lr must be positive");
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.push_back(Tensor<S>::zeros(p.tensor->shape()));
      v_.push_back(Tensor<S>::zeros(p.tensor->shape()));
    }
  }

  long step_count() const { return t_; }
  const AdamConfig<S>& config() const { return cfg_; }
  const Tensor<S>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<S>& second_moment(std::size_t i) const { return v_[i]; }

  template <class T>
  friend void adam_step(std::span<const NamedTensor<T>> params,
                        std::span<const Tensor<T>> grads, AdamState<T>& state);

 private:
  AdamConfig<S> cfg_;
  std::vector<Tensor<S>> m_;
  std::vector<Tensor<S>> v_;
  long t_ = 0;
};

// One bias-corrected Adam update over the whole parameter list.
template <class S>
void adam_step(std::span<const NamedTensor<S>> params, std::span<const Tensor<S>> grads,
               AdamState<S>& state) {
  if (params.size() != grads.size() || params.size() != state.m_.size())
    throw ContractError("adam: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor->same_shape(grads[i]))
      throw DimensionError("adam: gradient shape mismatch for " + params[i].name);
    if (!grads[i].all_finite())
      throw NumericError("adam: non-finite gradient for " + params[i].name);
  }
  state.t_ += 1;
  const auto& c = state.cfg_;
  const S bc1 = S(1) - std::pow(c.beta1, S(state.t_));
  const S bc2 = S(1) - std::pow(c.beta2, S(state.t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m_[i].mat();
    auto& v = state.v_[i].mat();
    const auto& g = grads[i].mat();
    m = c.beta1 * m + (S(1) - c.beta1) * g;
    v = c.beta2 * v + (S(1) - c.beta2) * g.cwiseProduct(g);
    auto m_hat = m.array() / bc1;
    auto v_hat = v.array() / bc2;
    params[i].tensor->mat().array() -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
  }
}

}  // namespace hsr
