#include "deepred/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace deepred {

AdamState AdamState::init(std::span<Parameter* const> params, double beta1, double beta2,
                          double epsilon) {
  AdamState st;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.epsilon = epsilon;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Parameter* p : params) {
    st.m.emplace_back(p->value.rows, p->value.cols);
    st.v.emplace_back(p->value.rows, p->value.cols);
  }
  return st;
}

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter list");
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    for (size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad.data[i];
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g;
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g * g;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad.data) g *= scale;
    }
  }
  return norm;
}

}  // namespace deepred
