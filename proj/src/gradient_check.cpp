#include "deepred/gradient_check.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "deepred/tape.hpp"

namespace deepred {

double gradient_check(const std::function<double()>& loss_fn,
                      std::span<Parameter* const> params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("gradient_check: eps must be positive");

  auto run = [&]() {
    for (Parameter* p : params) p->zero_grad();
    double loss = loss_fn();
    if (!std::isfinite(loss)) throw NonFiniteError("gradient_check: non-finite loss");
    return loss;
  };

  run();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (size_t i = 0; i < p->value.size(); ++i) {
      double saved = p->value.data[i];
      p->value.data[i] = saved + eps;
      double up = run();
      p->value.data[i] = saved - eps;
      double down = run();
      p->value.data[i] = saved;
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[pi].data[i];
      double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace deepred
