#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "mtr/errors.hpp"
#include "mtr/numerics/tensor.hpp"

namespace mtr {

struct ParameterGradientCheck {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double tape_gradient = 0.0;
  double numeric_gradient = 0.0;
};

struct GradientCheckReport {
  std::vector<ParameterGradientCheck> parameters;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Denominator floor for the relative error, so that gradients that are
  // zero up to rounding do not register as large relative errors.
  double scale_floor = 1e-4;
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

// Compares tape gradients of a scalar function against central finite
// differences. `f` must be deterministic: it is evaluated twice at the
// unperturbed point and must give bitwise-identical results.
template <class Fn>
GradientCheckReport check_gradient(Fn&& f, std::vector<NamedTensor> params,
                                   const GradientCheckOptions& options = {}) {
  if (!(options.step > 0.0)) throw ConfigError("gradient check step must be > 0");

  for (auto& [name, p] : params) p.zero_grad();
  Tensor<double> loss = f();
  const double first = loss.item();
  const double second = f().item();
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw OracleInvalidError(
        "function is not deterministic across probe evaluations (" +
        std::to_string(first) + " vs " + std::to_string(second) + ")");
  }
  backward(loss);

  GradientCheckReport report;
  report.tolerance = options.tolerance;
  for (auto& [name, p] : params) {
    ParameterGradientCheck check;
    check.name = name;
    const std::vector<double> tape(p.grad().begin(), p.grad().end());
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + options.step;
      const double up = f().item();
      values[i] = original - options.step;
      const double down = f().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double denom =
          std::max({std::abs(tape[i]), std::abs(numeric), options.scale_floor});
      const double rel = std::abs(tape[i] - numeric) / denom;
      if (i == 0 || rel > check.max_relative_error) {
        check.max_relative_error = rel;
        check.worst_index = i;
        check.tape_gradient = tape[i];
        check.numeric_gradient = numeric;
      }
    }
    report.max_relative_error =
        std::max(report.max_relative_error, check.max_relative_error);
    report.parameters.push_back(std::move(check));
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace mtr
