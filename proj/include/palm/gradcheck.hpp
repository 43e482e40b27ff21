#pragma once

#include <functional>
#include <string>
#include <vector>

#include "palm/tensor.hpp"

namespace palm {

// Central finite differences against the tape, at the precision of T
// (only meaningful at 64-bit). forward() must rebuild the graph from the
// current leaf values and return a scalar.
template <typename T>
struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

template <typename T>
FdReport<T> fd_check(const std::function<Tensor<T>()>& forward, std::vector<Tensor<T>> leaves, double step = 1e-3) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
  }
  Tensor<T> loss = forward();
  loss.backward();

  FdReport<T> rep;
  for (auto& leaf : leaves) {
    std::vector<T> analytic = leaf.grad();
    double scale = 1e-8;  // relative to the leaf's gradient magnitude
    double abs_err = 0.0;
    for (size_t i = 0; i < leaf.numel(); ++i) {
      T saved = leaf.values()[i];
      leaf.values()[i] = saved + static_cast<T>(step);
      T up = forward().item();
      leaf.values()[i] = saved - static_cast<T>(step);
      T down = forward().item();
      leaf.values()[i] = saved;
      double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * step);
      double a = static_cast<double>(analytic[i]);
      abs_err = std::max(abs_err, std::abs(a - numeric));
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
    }
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    rep.max_rel_err = std::max(rep.max_rel_err, abs_err / scale);
  }
  return rep;
}

struct GradCheckCase {
  std::string op;
  int instances = 0;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass() const { return max_rel_err < tolerance; }
};

}  // namespace palm
