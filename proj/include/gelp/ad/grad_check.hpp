#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "gelp/ad/backward.hpp"

namespace gelp::ad {

struct NamedParameter {
  std::string name;
  Tensor<double> tensor;
};

struct GradCheckReport {
  std::string output;
  double max_rel_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t coordinates = 0;
};

/// Compares analytic gradients of each scalar returned by `f` against central
/// differences (f(x+h) - f(x-h)) / 2h for every coordinate of every parameter.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8); absent gradients count as
/// zero. `f` must rebuild its graph from the current parameter values, which
/// are perturbed in place and restored. Perturbed evaluations keep gradient
/// recording on so that `f` may itself call grad(). Runs in 64-bit only.
inline std::vector<GradCheckReport> grad_check(const std::function<std::vector<Tensor<double>>()>& f,
                                               std::vector<NamedParameter> params, double step,
                                               const std::vector<std::string>& output_names = {}) {
  require(step > 0, "finite-difference step must be positive");
  for (auto& p : params) require(p.tensor.is_leaf() && p.tensor.requires_grad(), p.name + " is not a trainable leaf");

  std::vector<Tensor<double>> leaves;
  for (const auto& p : params) leaves.push_back(p.tensor);
  const auto outputs = f();
  const std::size_t count = outputs.size();
  std::vector<std::vector<std::optional<Tensor<double>>>> analytic;
  for (const auto& out : outputs) analytic.push_back(grad(out, leaves));

  std::vector<GradCheckReport> reports(count);
  for (std::size_t o = 0; o < count; ++o)
    reports[o].output = o < output_names.size() ? output_names[o] : "output " + std::to_string(o);

  auto evaluate = [&] {
    std::vector<double> v;
    for (const auto& t : f()) v.push_back(t.item());
    return v;
  };

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const auto plus = evaluate();
      values[i] = saved - step;
      const auto minus = evaluate();
      values[i] = saved;
      for (std::size_t o = 0; o < count; ++o) {
        const double numeric = (plus[o] - minus[o]) / (2 * step);
        const double a = analytic[o][p] ? (*analytic[o][p])[i] : 0.0;
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        auto& r = reports[o];
        ++r.coordinates;
        if (r.coordinates == 1 || rel > r.max_rel_error) {
          r.max_rel_error = rel;
          r.worst_parameter = params[p].name;
          r.worst_index = i;
          r.analytic = a;
          r.numeric = numeric;
        }
      }
    }
  }
  return reports;
}

/// Single-output convenience form.
inline double grad_check(const std::function<Tensor<double>()>& f, std::vector<NamedParameter> params, double step) {
  const auto reports = grad_check([&] { return std::vector<Tensor<double>>{f()}; }, std::move(params), step);
  return reports.front().max_rel_error;
}

}  // namespace gelp::ad
