#pragma once

#include <map>
#include <string>

#include "dforge/layers.hpp"

namespace dforge::optim {

// Adam with bias correction; moments keyed by parameter name.
template <typename T>
class Adam {
 public:
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(double learning_rate = 1e-4) : lr(learning_rate) {}

  // Applies one update to every trainable parameter that has a gradient.
  void step(net::ParameterStore<T>& params);

  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }
  std::map<std::string, Tensor<T>>& m() { return m_; }
  std::map<std::string, Tensor<T>>& v() { return v_; }
  const std::map<std::string, Tensor<T>>& m() const { return m_; }
  const std::map<std::string, Tensor<T>>& v() const { return v_; }

 private:
  int64_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace dforge::optim
