#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/errors.hpp"
#include "dqs/mlp.hpp"

namespace dqs {

// Bias-corrected Adam over an ordered list of parameter arrays.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 3e-4;
  std::int64_t step_count = 0;
  std::vector<DenseArray> first_moment;
  std::vector<DenseArray> second_moment;

  static AdamState like(const MlpNetwork& net, double lr = 3e-4) {
    AdamState st;
    st.learning_rate = lr;
    for (const auto& w : net.weights) {
      st.first_moment.emplace_back(w.shape());
      st.second_moment.emplace_back(w.shape());
    }
    for (const auto& b : net.biases) {
      st.first_moment.emplace_back(b.shape());
      st.second_moment.emplace_back(b.shape());
    }
    return st;
  }

  static AdamState for_scalar(double lr = 3e-4) {
    AdamState st;
    st.learning_rate = lr;
    st.first_moment.emplace_back(std::vector<int>{1});
    st.second_moment.emplace_back(std::vector<int>{1});
    return st;
  }
};

inline void adam_step(std::span<DenseArray*> params, std::span<const DenseArray* const> grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw DimensionError("adam_step: parameter/gradient/state count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p]->same_shape(state.first_moment[p]) || !grads[p]->same_shape(*params[p]))
      throw DimensionError("adam_step: moment shapes must equal parameter shapes");
    if (!grads[p]->all_finite())
      throw NumericError("adam_step: non-finite gradient, update rejected");
  }
  state.step_count += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t p = 0; p < params.size(); ++p) {
    double* th = params[p]->data();
    const double* g = grads[p]->data();
    double* m = state.first_moment[p].data();
    double* v = state.second_moment[p].data();
    std::size_t n = params[p]->size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      th[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// Network convenience: weights first, then biases, matching AdamState::like.
inline void adam_step(MlpNetwork& net, const MlpGrads& grads, AdamState& state) {
  std::vector<DenseArray*> params;
  std::vector<const DenseArray*> gs;
  for (auto& w : net.weights) params.push_back(&w);
  for (auto& b : net.biases) params.push_back(&b);
  for (const auto& w : grads.weights) gs.push_back(&w);
  for (const auto& b : grads.biases) gs.push_back(&b);
  adam_step(std::span<DenseArray*>(params), std::span<const DenseArray* const>(gs), state);
}

}  // namespace dqs
