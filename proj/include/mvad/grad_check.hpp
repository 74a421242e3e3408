#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mvad/tensor.hpp"

namespace mvad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::pair<std::string, double>> per_param;  // max rel err per param
  std::int64_t checked = 0;

  bool pass(double tolerance) const { return max_rel_err <= tolerance; }
};

// Central-difference check of d(loss)/d(param) for every element of every named
// parameter, in double precision. `forward` must rebuild the graph from the
// current parameter values and return a scalar loss; it is re-run twice up
// front and must produce bit-identical losses (i.e. consume no hidden RNG),
// otherwise the numeric differences would be meaningless.
inline GradCheckReport grad_check(std::vector<std::pair<std::string, Tensor<double>>>& params,
                                  const std::function<Tensor<double>()>& forward,
                                  double step = 1e-5) {
  Tensor<double> loss = forward();
  if (loss.numel() != 1)
    throw TensorError("grad_check: forward must return a scalar loss, got " +
                      shape_str(loss.shape()));
  {
    Tensor<double> again = forward();
    if (again.data()[0] != loss.data()[0])
      throw TensorError("grad_check: forward is not deterministic (two runs disagree)");
  }

  for (auto& [name, p] : params) p.zero_grad();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p.grad());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    double param_worst = 0.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + step;
      const double up = forward().data()[0];
      p.data()[i] = saved - step;
      const double down = forward().data()[0];
      p.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][static_cast<std::size_t>(i)];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.checked;
      param_worst = std::max(param_worst, rel);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
    report.per_param.emplace_back(name, param_worst);
  }
  return report;
}

}  // namespace mvad
