#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "lnn/tensor.hpp"

namespace lnn {

/// Builds a scalar loss from its inputs. Inputs are tape variables during the
/// analytic pass and plain constants during finite differencing.
using GraphBuilder = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
/// dominating.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares backward() against central differences at `point`.
inline GradCheckResult grad_check_detail(const GraphBuilder& f, std::span<const Tensor> point,
                                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  Tape tape;
  std::vector<Tensor> vars;
  vars.reserve(point.size());
  for (const auto& p : point) vars.push_back(tape.variable(p));
  const Tensor loss = f(vars);
  const Gradients grads = tape.backward(loss);

  GradCheckResult res;
  std::vector<Tensor> probe(point.begin(), point.end());
  for (auto& t : probe) t = t.detach();
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Tensor analytic = grads.of(vars[i]);
    const std::vector<double> base = point[i].vec();
    for (std::size_t j = 0; j < base.size(); ++j) {
      std::vector<double> d = base;
      d[j] = base[j] + step;
      probe[i] = Tensor(point[i].shape(), d);
      const double up = f(probe).item();
      d[j] = base[j] - step;
      probe[i] = Tensor(point[i].shape(), d);
      const double down = f(probe).item();
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[j], numeric);
      if (err > res.max_rel_error || (i == 0 && j == 0)) {
        res.max_rel_error = std::max(res.max_rel_error, err);
        if (err >= res.max_rel_error) {
          res.worst_input = i;
          res.worst_element = j;
          res.analytic = analytic[j];
          res.numeric = numeric;
        }
      }
    }
    probe[i] = point[i].detach();
  }
  return res;
}

inline double grad_check(const GraphBuilder& f, std::span<const Tensor> point, double step = 1e-5) {
  return grad_check_detail(f, point, step).max_rel_error;
}

}  // namespace lnn
