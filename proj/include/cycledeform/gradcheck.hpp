#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cycledeform/autodiff.hpp"

namespace cycledeform::ad {

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // checked entries only
  std::size_t skipped = 0;              // both magnitudes below the floor
  double max_rel_error = 0;
  bool passed = false;

  const GradCheckEntry* worst() const {
    auto it = std::max_element(entries.begin(), entries.end(),
                               [](const auto& a, const auto& b) { return a.rel_error < b.rel_error; });
    return it == entries.end() ? nullptr : &*it;
  }
};

struct GradCheckOptions {
  double step = 1e-4;
  double tol_rel = 1e-6;
  double magnitude_floor = 1e-8;
  std::size_t stride = 1;  // check every stride-th entry of each parameter
  // Entries whose magnitude is below roundoff_factor * eps * |f| / step are
  // skipped as well: there the central difference is dominated by rounding.
  double roundoff_factor = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// `f(tape, params)` must build its value on `tape` from the given parameter
/// handles and return a 1 x 1 node. The discrete choices of the unperturbed
/// pass are replayed for the perturbed ones, so kinks crossed by a
/// perturbation (ReLU, max-pool, projections) do not pollute the estimate.
template <typename F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor<double>>& params, const GradCheckOptions& opt = {}) {
  DecisionLog log;
  std::vector<Tensor<double>> analytic;
  double base_value = 0;
  {
    Tape<double> tape;
    tape.attach(&log);
    log.set_mode(DecisionLog::Mode::Record);
    std::vector<Var<double>> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const Var<double> loss = f(tape, vars);
    if (loss.rows() != 1 || loss.cols() != 1) throw ShapeMismatch("grad_check needs a scalar function");
    base_value = loss.scalar();
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v.id()));
  }

  std::vector<Tensor<double>> work = params;
  auto evaluate = [&] {
    Tape<double> tape;
    tape.attach(&log);
    log.set_mode(DecisionLog::Mode::Replay);
    std::vector<Var<double>> vars;
    vars.reserve(work.size());
    for (const auto& p : work) vars.push_back(tape.parameter(p));
    const double v = f(tape, vars).scalar();
    if (!std::isfinite(v)) throw NonFiniteValue("grad_check: function value is not finite");
    return v;
  };

  const double floor = std::max(opt.magnitude_floor, opt.roundoff_factor * std::numeric_limits<double>::epsilon() *
                                                        std::abs(base_value) / opt.step);
  GradCheckReport report;
  const std::size_t stride = std::max<std::size_t>(1, opt.stride);
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (Eigen::Index e = 0; e < work[p].size(); e += static_cast<Eigen::Index>(stride)) {
      double& x = work[p].data()[e];
      const double saved = x;
      x = saved + opt.step;
      const double up = evaluate();
      x = saved - opt.step;
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[p].data()[e];
      const double mag = std::max(std::abs(a), std::abs(numeric));
      if (mag < floor) {
        ++report.skipped;
        continue;
      }
      const double rel = std::abs(a - numeric) / mag;
      report.entries.push_back({p, static_cast<std::size_t>(e), a, numeric, rel});
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  report.passed = report.max_rel_error < opt.tol_rel;
  return report;
}

}  // namespace cycledeform::ad
