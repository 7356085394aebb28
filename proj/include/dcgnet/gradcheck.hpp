#pragma once

// Central finite-difference verification of reverse-mode gradients. The
// forward callback rebuilds the scalar loss from the parameters' current
// values, so perturbing a parameter element and re-running it yields the
// directional derivative.

#include <functional>
#include <string>
#include <vector>

#include "dcgnet/autodiff.hpp"
#include "dcgnet/rng.hpp"
#include "dcgnet/util.hpp"

namespace dcgnet {

struct FiniteDiffOptions {
  double step = 1e-5;
  double tol_rel = 1e-4;
  double tol_abs = 1e-6;
  // 0 checks every entry; otherwise a per-parameter random subsample, for
  // networks whose full parameter count would make exhaustive FD too slow.
  int max_entries_per_param = 0;
  std::uint64_t seed = 0;
  // When set, each entry is additionally differenced at step/2 and entries
  // where the two estimates disagree beyond the pass threshold are skipped
  // as unmeasurable rather than compared. For a smooth function the two
  // estimates differ by 3/4 of the h^2 truncation term, so the filter
  // triggers exactly when truncation alone would fail the entry; a crossed
  // relu kink triggers it violently. A wrong analytic gradient leaves both
  // estimates consistent with each other and is still caught. Intended for
  // deep end-to-end checks, where a few sampled directions inevitably carry
  // curvature too strong for the fixed step.
  bool validate_step = false;
};

struct FiniteDiffReport {
  bool passed = true;
  int entries_checked = 0;
  int entries_skipped = 0;  // unmeasurable at this step; validate_step only
  // Largest relative deviation |analytic - fd| / (|analytic| + 1e-8) among
  // entries that exceeded the absolute tolerance; 0 when none did.
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::string worst;  // description of the worst entry, empty if all clean
};

// An entry passes when its deviation is below tol_rel relatively or tol_abs
// absolutely (the absolute escape covers near-zero analytic gradients, where
// FD noise dominates any ratio).
inline FiniteDiffReport finite_difference_check(const std::function<Tensor()>& forward,
                                                const std::vector<Tensor>& params,
                                                const FiniteDiffOptions& opt = {}) {
  if (!forward) {
    throw AutodiffError(AutodiffErrorKind::invalid_argument,
                        "finite_difference_check: null forward callback");
  }
  for (const Tensor& p : params) {
    if (!p.defined() || !p.requires_grad()) {
      throw AutodiffError(AutodiffErrorKind::invalid_argument,
                          "finite_difference_check: params must be differentiable leaves");
    }
  }
  std::vector<std::vector<double>> analytic;
  {
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    const Tensor loss = forward();
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw AutodiffError(AutodiffErrorKind::invalid_argument,
                          strfmt("finite_difference_check: loss must be 1x1, got %dx%d",
                                 loss.rows(), loss.cols()));
    }
    backward(loss);
    for (const Tensor& p : params) {
      analytic.push_back(p.grad().empty() ? std::vector<double>(p.size(), 0.0) : p.grad());
    }
  }
  auto eval = [&]() {
    NoGradGuard guard;
    return forward().values()[0];
  };
  Rng rng(opt.seed);
  FiniteDiffReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::vector<std::size_t> entries;
    if (opt.max_entries_per_param > 0 &&
        p.size() > static_cast<std::size_t>(opt.max_entries_per_param)) {
      const std::vector<int> perm = rng.permutation(static_cast<int>(p.size()));
      for (int k = 0; k < opt.max_entries_per_param; ++k) {
        entries.push_back(static_cast<std::size_t>(perm[static_cast<std::size_t>(k)]));
      }
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) entries.push_back(i);
    }
    for (std::size_t i : entries) {
      const double saved = p.mutable_values()[i];
      auto central = [&](double h) {
        p.mutable_values()[i] = saved + h;
        const double f_plus = eval();
        p.mutable_values()[i] = saved - h;
        const double f_minus = eval();
        p.mutable_values()[i] = saved;
        return (f_plus - f_minus) / (2.0 * h);
      };
      const double fd = central(opt.step);
      const double a = analytic[pi][i];
      if (opt.validate_step) {
        const double fd_half = central(opt.step / 2.0);
        const double scale = std::max(std::abs(a), std::abs(fd_half));
        if (std::abs(fd - fd_half) > 0.75 * std::max(opt.tol_abs, opt.tol_rel * scale)) {
          ++report.entries_skipped;
          continue;
        }
      }
      const double abs_err = std::abs(a - fd);
      const double rel_err = abs_err / (std::abs(a) + 1e-8);
      ++report.entries_checked;
      report.max_abs = std::max(report.max_abs, abs_err);
      if (abs_err >= opt.tol_abs) report.max_rel = std::max(report.max_rel, rel_err);
      if (rel_err >= opt.tol_rel && abs_err >= opt.tol_abs) {
        report.passed = false;
        if (report.worst.empty() || rel_err >= report.max_rel) {
          report.worst = strfmt("param %zu entry %zu: analytic %.12g vs fd %.12g (rel %.3g)", pi,
                                i, a, fd, rel_err);
        }
      }
    }
  }
  return report;
}

}  // namespace dcgnet
