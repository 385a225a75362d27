#pragma once

#include <cstddef>
#include <vector>

#include "cstnet/error.hpp"
#include "cstnet/network.hpp"
#include "cstnet/tensor.hpp"

namespace cstnet {

/// v ← momentum·v + grad; param ← param − lr·v.
template <class T>
void sgd_step(BasicTensor<T>& param, const BasicTensor<T>& grad, BasicTensor<T>& velocity, double lr,
              double momentum) {
  if (!(param.shape() == grad.shape()) || !(param.shape() == velocity.shape())) {
    throw ShapeError("sgd_step: parameter " + param.shape().str() + ", gradient " + grad.shape().str() +
                     " and velocity " + velocity.shape().str() + " differ");
  }
  const T mu = static_cast<T>(momentum), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mu * velocity[i] + grad[i];
    param[i] -= rate * velocity[i];
  }
}

/// Momentum SGD over every trainable parameter of a model.
template <class T>
class SgdMomentum {
 public:
  SgdMomentum(const Model<T>& model, double lr, double momentum) : lr_(lr), momentum_(momentum) {
    for (const auto& p : model.parameters()) velocity_.emplace_back(p.value.shape());
  }

  void step(Model<T>& model) {
    auto& params = model.parameters();
    if (params.size() != velocity_.size()) throw ShapeError("optimizer state does not match model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].trainable) sgd_step(params[i].value, params[i].grad, velocity_[i], lr_, momentum_);
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<BasicTensor<T>> velocity_;
};

}  // namespace cstnet
