#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "platerec/tensor.hpp"

namespace platerec {

/// Central-difference gradient of a scalar function:
/// (f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps) for every element i.
/// `x` is perturbed in place and restored before returning.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T>& x, T eps) {
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = x[i];
    x[i] = saved + eps;
    const T plus = f(x);
    x[i] = saved - eps;
    const T minus = f(x);
    x[i] = saved;
    grad[i] = (plus - minus) / (T(2) * eps);
  }
  return grad;
}

/// Largest elementwise relative error |a − b| / max(|a|, |b|, floor). The
/// floor keeps near-zero entries from dominating.
template <typename T>
T max_relative_error(const Tensor<T>& analytic, const Tensor<T>& numeric, T floor = T(1e-6)) {
  T worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const T scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace platerec
