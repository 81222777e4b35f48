#include "dforge/optim.hpp"

#include <cmath>

namespace dforge::optim {

template <typename T>
void Adam<T>::step(net::ParameterStore<T>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  const T step_size = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2), e = static_cast<T>(eps);
  for (auto& [name, p] : params.entries()) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m = Tensor<T>(p.shape());
    if (v.empty()) v = Tensor<T>(p.shape());
    T* w = p.mutable_value().data();
    const T* g = p.grad().data();
    T* mp = m.data();
    T* vp = v.data();
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      mp[i] = b1 * mp[i] + (T(1) - b1) * g[i];
      vp[i] = b2 * vp[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step_size * mp[i] / (std::sqrt(vp[i] * inv_c2) + e);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dforge::optim
