#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/errors.hpp"
#include "dqs/mlp.hpp"
#include "dqs/optimizer.hpp"
#include "dqs/replay.hpp"
#include "dqs/rng.hpp"

namespace dqs {

// Anything that can draw actions for given states; implemented by the
// diffusion policy, the Gaussian baseline, and test stubs.
class ActionSampler {
 public:
  virtual ~ActionSampler() = default;
  virtual int action_dim() const = 0;
  // states: n x state_dim; out resized to n x action_dim
  virtual void sample_actions(const DenseArray& states, DenseArray& out, Rng& rng) const = 0;

  DenseArray sample_action(const DenseArray& state, Rng& rng) const {
    DenseArray s({1, state.dim(0)});
    std::copy(state.flat().begin(), state.flat().end(), s.flat().begin());
    DenseArray out;
    sample_actions(s, out, rng);
    DenseArray a({action_dim()});
    std::copy(out.flat().begin(), out.flat().end(), a.flat().begin());
    return a;
  }
};

// Double Q-learning: two online heads, two EMA targets.
struct QEnsemble {
  MlpNetwork q1, q2;
  MlpNetwork q1_target, q2_target;
  AdamState adam1, adam2;
  double gamma = 0.99;
  double eta = 0.005;  // target smoothing coefficient
  int state_dim = 0;
  int action_dim = 0;

  static QEnsemble make(int state_dim, int action_dim, const std::vector<int>& hidden, double lr,
                        double gamma, double eta, Rng& rng) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("QEnsemble: gamma outside [0,1]");
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("QEnsemble: eta outside (0,1]");
    std::vector<int> dims;
    dims.push_back(state_dim + action_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(1);
    QEnsemble e;
    e.q1 = make_mlp(dims, false, rng);
    e.q2 = make_mlp(dims, false, rng);
    e.q1_target = e.q1;
    e.q2_target = e.q2;
    e.adam1 = AdamState::like(e.q1, lr);
    e.adam2 = AdamState::like(e.q2, lr);
    e.gamma = gamma;
    e.eta = eta;
    e.state_dim = state_dim;
    e.action_dim = action_dim;
    return e;
  }
};

inline double min_q(const QEnsemble& ens, const DenseArray& state, const DenseArray& action,
                    bool use_targets = false) {
  if (state.size() + action.size() != static_cast<std::size_t>(ens.q1.input_dim()))
    throw DimensionError("min_q: state/action widths do not match the Q input");
  DenseArray x({ens.q1.input_dim()});
  std::copy(state.flat().begin(), state.flat().end(), x.flat().begin());
  std::copy(action.flat().begin(), action.flat().end(),
            x.flat().begin() + static_cast<std::ptrdiff_t>(state.size()));
  const MlpNetwork& a = use_targets ? ens.q1_target : ens.q1;
  const MlpNetwork& b = use_targets ? ens.q2_target : ens.q2;
  return std::min(forward(a, x)[0], forward(b, x)[0]);
}

// One-sample TD target: r + gamma * min Q_target(s', a' ~ policy(s')), or
// just r on terminal transitions.
inline double td_target(const QEnsemble& ens, const Transition& tr, const ActionSampler& policy,
                        Rng& rng) {
  if (tr.terminal) return tr.reward;
  DenseArray a_next = policy.sample_action(tr.next_state, rng);
  return tr.reward + ens.gamma * min_q(ens, tr.next_state, a_next, /*use_targets=*/true);
}

struct CriticScratch {
  MlpWorkspace w1, w2, wt1, wt2;
  MlpGrads g1, g2;
  DenseArray X, Xnext, Anext, Snext, cot1, cot2;
  std::vector<double> targets;
  bool grads_ready = false;
};

// Shared batched TD targets followed by one Adam step per head on the
// squared error against those (constant) targets. Returns the mean of the
// two head losses.
inline double critic_update(QEnsemble& ens, std::span<const Transition* const> batch,
                            const ActionSampler& policy, Rng& rng, CriticScratch& scratch) {
  if (batch.empty()) throw DomainError("critic_update: empty batch");
  int n = static_cast<int>(batch.size());
  int sd = ens.state_dim, ad = ens.action_dim;

  MlpWorkspace::resize2d(scratch.Snext, n, sd);
  for (int i = 0; i < n; ++i)
    std::copy(batch[i]->next_state.flat().begin(), batch[i]->next_state.flat().end(),
              scratch.Snext.row(i).begin());
  policy.sample_actions(scratch.Snext, scratch.Anext, rng);

  MlpWorkspace::resize2d(scratch.Xnext, n, sd + ad);
  for (int i = 0; i < n; ++i) {
    auto row = scratch.Xnext.row(i);
    std::copy_n(scratch.Snext.row(i).begin(), sd, row.begin());
    std::copy_n(scratch.Anext.row(i).begin(), ad, row.begin() + sd);
  }
  const DenseArray& t1 = mlp_forward_batch(ens.q1_target, scratch.Xnext, scratch.wt1);
  const DenseArray& t2 = mlp_forward_batch(ens.q2_target, scratch.Xnext, scratch.wt2);
  scratch.targets.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const Transition& tr = *batch[i];
    double boot = tr.terminal ? 0.0 : ens.gamma * std::min(t1.at(i, 0), t2.at(i, 0));
    scratch.targets[static_cast<std::size_t>(i)] = tr.reward + boot;
  }

  MlpWorkspace::resize2d(scratch.X, n, sd + ad);
  for (int i = 0; i < n; ++i) {
    auto row = scratch.X.row(i);
    std::copy(batch[i]->state.flat().begin(), batch[i]->state.flat().end(), row.begin());
    std::copy(batch[i]->action.flat().begin(), batch[i]->action.flat().end(), row.begin() + sd);
  }

  if (!scratch.grads_ready) {
    scratch.g1 = MlpGrads::like(ens.q1);
    scratch.g2 = MlpGrads::like(ens.q2);
    scratch.grads_ready = true;
  }

  auto head_update = [&](MlpNetwork& net, AdamState& adam, MlpWorkspace& ws, MlpGrads& grads,
                         DenseArray& cot) {
    const DenseArray& q = mlp_forward_batch(net, scratch.X, ws);
    MlpWorkspace::resize2d(cot, n, 1);
    std::vector<double> sq(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      double diff = q.at(i, 0) - scratch.targets[static_cast<std::size_t>(i)];
      sq[static_cast<std::size_t>(i)] = diff * diff;
      cot.at(i, 0) = 2.0 * diff / n;
    }
    grads.zero();
    mlp_backward_batch(net, ws, cot, &grads, nullptr);
    adam_step(net, grads, adam);
    return pairwise_sum(sq) / n;
  };

  double loss1 = head_update(ens.q1, ens.adam1, scratch.w1, scratch.g1, scratch.cot1);
  double loss2 = head_update(ens.q2, ens.adam2, scratch.w2, scratch.g2, scratch.cot2);
  return 0.5 * (loss1 + loss2);
}

inline double critic_update(QEnsemble& ens, std::span<const Transition* const> batch,
                            const ActionSampler& policy, Rng& rng) {
  CriticScratch scratch;
  return critic_update(ens, batch, policy, rng, scratch);
}

// theta_bar <- eta * theta + (1 - eta) * theta_bar, both heads.
inline void ema_update(QEnsemble& ens) {
  auto blend = [eta = ens.eta](const MlpNetwork& online, MlpNetwork& target) {
    for (int l = 0; l < online.num_layers(); ++l) {
      const double* w = online.weights[l].data();
      double* t = target.weights[l].data();
      for (std::size_t i = 0; i < online.weights[l].size(); ++i)
        t[i] = eta * w[i] + (1.0 - eta) * t[i];
      const double* b = online.biases[l].data();
      double* tb = target.biases[l].data();
      for (std::size_t i = 0; i < online.biases[l].size(); ++i)
        tb[i] = eta * b[i] + (1.0 - eta) * tb[i];
    }
  };
  blend(ens.q1, ens.q1_target);
  blend(ens.q2, ens.q2_target);
}

}  // namespace dqs
