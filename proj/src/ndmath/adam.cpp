#include "jebgfn/ndmath/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace jebgfn::nd {

AdamState make_adam(const ParamSet& params, AdamConfig config) {
  if (!(config.lr > 0.0) || config.weight_decay < 0.0)
    throw std::invalid_argument("Adam: learning rate must be > 0 and weight decay >= 0");
  AdamState s;
  s.config = config;
  for (const auto& [_, t] : params) {
    s.m.emplace_back(t.size(), 0.0);
    s.v.emplace_back(t.size(), 0.0);
  }
  return s;
}

void adam_step(ParamSet& params, AdamState& state, const std::vector<double>& lr_scale) {
  if (state.m.size() != params.size()) throw std::invalid_argument("Adam: state/parameter mismatch");
  if (!lr_scale.empty() && lr_scale.size() != params.size())
    throw std::invalid_argument("Adam: lr_scale size mismatch");
  for (const auto& [name, t] : params)
    if (!t.has_grad()) throw std::logic_error("Adam: parameter '" + name + "' has no gradient");

  const AdamConfig& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  std::size_t p = 0;
  for (auto& [name, t] : params) {
    const double lr = c.lr * (lr_scale.empty() ? 1.0 : lr_scale[p]);
    auto w = t.mutable_values();
    auto g = t.mutable_grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != w.size()) throw std::invalid_argument("Adam: moment shape mismatch for " + name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * w[i]);
      g[i] = 0.0;
    }
    ++p;
  }
}

}  // namespace jebgfn::nd
