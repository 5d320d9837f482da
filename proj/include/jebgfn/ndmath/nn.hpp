#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "jebgfn/ndmath/tensor.hpp"

namespace jebgfn::nd {

using Rng = std::mt19937_64;

/// Named learnable tensors in construction order.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad();
  void fill(double v);
  /// Flattened values in iteration order.
  std::vector<double> flat_values() const;
  void set_flat_values(const std::vector<double>& flat);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear make(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                     Rng& rng);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
};

/// Stack of Linear layers with relu between consecutive layers (none after
/// the last).
struct Mlp {
  std::vector<Linear> layers;

  static Mlp make(ParamSet& params, const std::string& name, const std::vector<std::size_t>& widths,
                  Rng& rng);
  Tensor operator()(Tensor x) const;
};

}  // namespace jebgfn::nd
