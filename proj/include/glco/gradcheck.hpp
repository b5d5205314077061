#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "glco/autograd.hpp"
#include "glco/error.hpp"
#include "glco/tensor.hpp"

namespace glco {

using ScalarFn = std::function<Var<double>(Graph<double>&, Var<double>)>;

struct GradcheckOptions {
  double step = 1e-5;
  // 0 = every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Fixture hook: corrupt the backward rule of this op kind.
  std::string corrupt_op;
};

/// Max over checked coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// numeric gradient by central differences.
inline double gradcheck(const ScalarFn& f, const Tensor<double>& x, const GradcheckOptions& opt = {}) {
  if (!x.all_finite()) throw ContractError("gradcheck: input must be finite");

  Tensor<double> analytic;
  {
    Graph<double> g;
    if (!opt.corrupt_op.empty()) g.corrupt_backward(opt.corrupt_op);
    Var<double> xv = g.leaf(x, true);
    Var<double> y = f(g, xv);
    if (y.value().size() != 1 || y.value().rank() != 0)
      throw ContractError("gradcheck: function must return a 0-dimensional scalar, got " +
                          shape_str(y.shape()));
    g.backward(y);
    analytic = g.grad(xv);
  }

  auto eval = [&](const Tensor<double>& at) {
    Graph<double> g;
    return f(g, g.constant(at)).value().item();
  };

  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opt.max_coords && opt.max_coords < coords.size()) {
    Rng rng(opt.seed);
    for (std::size_t i = 0; i < opt.max_coords; ++i)
      std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
    coords.resize(opt.max_coords);
  }

  double worst = 0;
  Tensor<double> probe = x;
  for (std::size_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + opt.step;
    const double fp = eval(probe);
    probe[i] = orig - opt.step;
    const double fm = eval(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2 * opt.step);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace glco
