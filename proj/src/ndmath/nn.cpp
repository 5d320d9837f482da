#include "jebgfn/ndmath/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "jebgfn/ndmath/ops.hpp"

namespace jebgfn::nd {

Tensor& ParamSet::add(std::string name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
  if (!t.requires_grad()) t = Tensor::parameter(t.shape(), {t.values().begin(), t.values().end()});
  items_.emplace_back(std::move(name), std::move(t));
  return items_.back().second;
}

Tensor& ParamSet::get(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw std::out_of_range("ParamSet: no parameter '" + name + "'");
}

const Tensor& ParamSet::get(const std::string& name) const {
  return const_cast<ParamSet*>(this)->get(name);
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const auto& p) { return p.first == name; });
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

void ParamSet::fill(double v) {
  for (auto& [_, t] : items_) std::fill(t.mutable_values().begin(), t.mutable_values().end(), v);
}

std::vector<double> ParamSet::flat_values() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& [_, t] : items_) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

void ParamSet::set_flat_values(const std::vector<double>& flat) {
  if (flat.size() != scalar_count()) throw std::invalid_argument("ParamSet: flat size mismatch");
  std::size_t off = 0;
  for (auto& [_, t] : items_) {
    auto v = t.mutable_values();
    std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.begin());
    off += v.size();
  }
}

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(values));
}

Linear Linear::make(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                    Rng& rng) {
  Linear l;
  l.weight = params.add(name + ".weight", init_uniform({in, out}, in, rng));
  l.bias = params.add(name + ".bias", init_uniform({out}, in, rng));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

Mlp Mlp::make(ParamSet& params, const std::string& name, const std::vector<std::size_t>& widths,
              Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    mlp.layers.push_back(
        Linear::make(params, name + "." + std::to_string(i), widths[i], widths[i + 1], rng));
  return mlp;
}

Tensor Mlp::operator()(Tensor x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](x);
    if (i + 1 < layers.size()) x = relu(x);
  }
  return x;
}

}  // namespace jebgfn::nd
