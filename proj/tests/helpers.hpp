#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "lgt/autograd.hpp"
#include "lgt/rng.hpp"

namespace lgt_test {

using lgt::Rand;
using lgt::Tensor;
using lgt::Var;

// Directional-derivative gradient check: rebuilds the scalar loss through
// `build` (so forward values refresh after each perturbation) and compares
// the autodiff gradient against central finite differences along random
// unit directions.
inline void gradcheck(const std::function<Var<double>()>& build,
                      const std::vector<Var<double>>& leaves, int directions = 20,
                      double rel_tol = 1e-3, double eps = 1e-5, uint64_t seed = 42) {
  auto loss = build();
  for (const auto& l : leaves) l->zero_grad();
  lgt::backward(loss);

  int64_t total = 0;
  for (const auto& l : leaves) total += l->val.numel();
  REQUIRE(total > 0);

  Rand rng(lgt::derive_seed(seed, "gradcheck"));
  for (int k = 0; k < directions; ++k) {
    std::vector<double> dir(static_cast<size_t>(total));
    double norm = 0;
    for (auto& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;

    double analytic = 0;
    {
      int64_t off = 0;
      for (const auto& l : leaves) {
        l->ensure_grad();
        for (int64_t i = 0; i < l->val.numel(); ++i)
          analytic += l->grad[i] * dir[static_cast<size_t>(off + i)];
        off += l->val.numel();
      }
    }

    auto shift = [&](double scale) {
      int64_t off = 0;
      for (const auto& l : leaves) {
        for (int64_t i = 0; i < l->val.numel(); ++i)
          l->val[i] += scale * dir[static_cast<size_t>(off + i)];
        off += l->val.numel();
      }
    };
    shift(eps);
    double f_plus = build()->val[0];
    shift(-2 * eps);
    double f_minus = build()->val[0];
    shift(eps);

    double numeric = (f_plus - f_minus) / (2 * eps);
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    INFO("direction ", k, ": analytic=", analytic, " numeric=", numeric);
    CHECK(std::abs(analytic - numeric) / denom < rel_tol);
  }
}

inline Var<double> randn_leaf(std::vector<int64_t> dims, Rand& rng, double stddev = 1.0) {
  return lgt::leaf<double>(Tensor<double>::randn(std::move(dims), rng, 0.0, stddev));
}

}  // namespace lgt_test
