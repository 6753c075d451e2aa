#pragma once

// Central finite-difference verification of backward().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "raliflow/tensor.hpp"

namespace raliflow::ad {

struct GradCheckOptions {
  double h = 1e-6;
  double tol = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-3;
  /// Coordinates probed per input; 0 = all of them.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::size_t input = 0;
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckEntry> excluded;  // coordinates within 10h of a kink
  GradCheckEntry worst;
  bool passed = false;
};

/// Compares backward() gradients of the scalar `f()` w.r.t. `inputs` against
/// central differences. `f` must rebuild its graph from the current contents
/// of the inputs on every call. A coordinate is excluded when perturbing it
/// moves some recorded kink site (ReLU input, max-pool gap, zero norm) that
/// sits within 10h of its non-differentiable point.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opt = {}) {
  for (auto& t : inputs) t.zero_grad();
  KinkRecorder base;
  Tensor loss;
  {
    KinkRecorder::Scope scope(base);
    loss = f();
  }
  if (!all_finite(loss)) throw Error(ErrorCode::NonFinite, "objective is not finite");
  backward(loss);

  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    const std::vector<double> analytic = x.grad();
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (opt.max_coords_per_input > 0 && coords.size() > opt.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      auto data = x.mutable_data();
      const double saved = data[c];
      KinkRecorder plus_sites;
      KinkRecorder minus_sites;
      double fp = 0.0;
      double fm = 0.0;
      {
        KinkRecorder::Scope scope(plus_sites);
        data[c] = saved + opt.h;
        fp = f().item();
      }
      {
        KinkRecorder::Scope scope(minus_sites);
        data[c] = saved - opt.h;
        fm = f().item();
      }
      data[c] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw Error(ErrorCode::NonFinite, "objective is not finite under perturbation");
      }
      GradCheckEntry e{k, c, analytic[c], (fp - fm) / (2.0 * opt.h), 0.0};
      e.rel_error = std::abs(e.analytic - e.numeric) /
                    std::max({std::abs(e.analytic), std::abs(e.numeric), opt.abs_floor});

      bool near_kink = plus_sites.sites.size() != base.sites.size() ||
                       minus_sites.sites.size() != base.sites.size();
      for (std::size_t i = 0; !near_kink && i < base.sites.size(); ++i) {
        const bool moved = plus_sites.sites[i] != base.sites[i] || minus_sites.sites[i] != base.sites[i];
        near_kink = moved && base.sites[i] < 10.0 * opt.h;
      }
      if (near_kink) {
        report.excluded.push_back(e);
        continue;
      }
      ++report.checked;
      if (e.rel_error >= report.max_rel_error) {
        report.max_rel_error = e.rel_error;
        report.worst = e;
      }
    }
  }
  report.passed = report.max_rel_error <= opt.tol;
  return report;
}

}  // namespace raliflow::ad
