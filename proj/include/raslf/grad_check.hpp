#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "raslf/random.hpp"
#include "raslf/tensor.hpp"

namespace raslf {

struct GradCheckOptions {
  // Central-difference step for double; at 1e-3 the truncation term alone can
  // exceed 1e-3 relative.
  double step = 1e-5;
  // Above this many coordinates a seeded random subsample is checked.
  std::size_t max_coordinates = 10000;
  std::uint64_t seed = 0x5eed;
  // Denominator floor of the relative error: gradients smaller than this in
  // magnitude are compared in absolute terms against floor * tolerance.
  double magnitude_floor = 1e-3;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of the scalar `fn` with central finite
/// differences for every coordinate of `params`.
template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& fn,
                           const ParameterList<T>& params, double tolerance,
                           const GradCheckOptions& options = {}) {
  if (!(tolerance > 0)) throw ConfigError("grad_check: tolerance must be > 0");
  auto evaluate = [&] {
    NoTapeScope<T> no_tape;
    return static_cast<double>(fn().item());
  };
  const double first = evaluate();
  const double second = evaluate();
  if (!(first == second) && !(std::isnan(first) && std::isnan(second))) {
    throw NumericError("grad_check: non-reproducible function (" +
                       std::to_string(first) + " vs " +
                       std::to_string(second) + ")");
  }

  zero_grads(params);
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> loss = fn();
    if (!tape.empty() && loss.requires_grad()) tape.backward(loss);
  }

  struct Coordinate {
    std::size_t param;
    std::size_t index;
  };
  std::vector<Coordinate> coords;
  const std::size_t total = count_scalars(params);
  if (total <= options.max_coordinates) {
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t i = 0; i < params[p]->numel(); ++i)
        coords.push_back({p, i});
  } else {
    Rng rng(options.seed);
    std::vector<std::size_t> offsets(params.size() + 1, 0);
    for (std::size_t p = 0; p < params.size(); ++p)
      offsets[p + 1] = offsets[p] + params[p]->numel();
    for (std::size_t k = 0; k < options.max_coordinates; ++k) {
      const std::size_t flat = rng.below(total);
      const auto it =
          std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
      const auto p = static_cast<std::size_t>(it - offsets.begin());
      coords.push_back({p, flat - offsets[p]});
    }
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  report.coordinates = coords.size();
  const T h = static_cast<T>(options.step);
  for (const auto& [p, i] : coords) {
    Parameter<T>& param = *params[p];
    const T saved = param.value()[i];
    param.value()[i] = saved + h;
    const double plus = evaluate();
    param.value()[i] = saved - h;
    const double minus = evaluate();
    param.value()[i] = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double analytic = param.grad()[i];
    const double err =
        relative_error(analytic, numeric, options.magnitude_floor);
    if (err > report.max_relative_error || report.worst_parameter.empty()) {
      report.max_relative_error = std::max(err, report.max_relative_error);
      if (err >= report.max_relative_error) {
        report.worst_parameter = param.name();
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace raslf
