#pragma once

// Central finite-difference gradient oracle shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>

#include "jebgfn/ndmath/nn.hpp"
#include "jebgfn/ndmath/tensor.hpp"

namespace testsupport {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Gradients smaller than `floor` are compared on an absolute scale of
// `floor`; below that the difference quotient is dominated by rounding.
inline GradCheck check_gradients(jebgfn::nd::ParamSet& params,
                                 const std::function<jebgfn::nd::Tensor()>& loss_fn,
                                 double step = 1e-5, double floor = 1e-3) {
  using namespace jebgfn::nd;
  params.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss_fn());
  }
  GradCheck out;
  for (auto& [name, t] : params) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto w = t.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + step;
      const double up = loss_fn().item();
      w[i] = keep - step;
      const double down = loss_fn().item();
      w[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - numeric) / scale);
      ++out.checked;
    }
  }
  params.zero_grad();
  return out;
}

}  // namespace testsupport
