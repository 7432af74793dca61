#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <span>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/critic.hpp"
#include "dqs/diffusion.hpp"
#include "dqs/embedding.hpp"
#include "dqs/errors.hpp"
#include "dqs/mlp.hpp"
#include "dqs/optimizer.hpp"
#include "dqs/parallel.hpp"
#include "dqs/rng.hpp"

namespace dqs {

struct TemperatureSchedule {
  enum class Mode { kFixed, kExponentialDecay };
  Mode mode = Mode::kFixed;
  double t_start = 1.0;
  double t_end = 1.0;
  long long horizon = 1;

  static TemperatureSchedule fixed(double t) {
    if (!(t > 0.0)) throw ConfigError("TemperatureSchedule: temperature must be positive");
    return {Mode::kFixed, t, t, 1};
  }
  static TemperatureSchedule exponential(double t_start, double t_end, long long horizon) {
    if (!(t_end > 0.0) || !(t_start >= t_end))
      throw ConfigError("TemperatureSchedule: need t_start >= t_end > 0");
    if (horizon < 1) throw ConfigError("TemperatureSchedule: horizon must be >= 1");
    return {Mode::kExponentialDecay, t_start, t_end, horizon};
  }
};

inline double anneal_temperature(const TemperatureSchedule& s, long long step) {
  if (step < 0) throw DomainError("anneal_temperature: step must be >= 0");
  if (s.mode == TemperatureSchedule::Mode::kFixed) return s.t_start;
  double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(s.horizon));
  return s.t_start * std::pow(s.t_end / s.t_start, frac);
}

// Integrates a batch of reverse chains in lockstep from tau = 1 to 0.
// score_cb(X, tau, S) fills S (n x dim) with the score at the current chain
// states X. Noise is drawn row-major per step, so a one-row batch consumes
// the rng exactly like a single chain would.
inline void reverse_diffuse_batch(
    const NoiseSchedule& schedule, int n_steps, int n, int dim, Rng& rng,
    const std::function<void(const DenseArray&, double, DenseArray&)>& score_cb, DenseArray& out,
    bool literal_update = false) {
  if (n_steps < 1) throw DomainError("reverse_diffuse_batch: n_steps must be >= 1");
  MlpWorkspace::resize2d(out, n, dim);
  for (double& v : out.flat()) v = schedule.sigma_max * rng.normal();
  DenseArray scores({n, dim});
  DenseArray noise({n, dim});
  double dtau = 1.0 / n_steps;
  for (int k = n_steps; k >= 1; --k) {
    double tau = static_cast<double>(k) / n_steps;
    score_cb(out, tau, scores);
    if (!scores.all_finite())
      throw SamplingError("reverse_diffuse_batch: non-finite score", tau);
    double drift, sigma_step;
    if (literal_update) {
      double sig = sigma_at(schedule, tau);
      drift = sig * sig;
      sigma_step = sig;
    } else {
      double g2 = g_squared(schedule, tau);
      drift = g2 * dtau;
      sigma_step = std::sqrt(g2 * dtau);
    }
    rng.fill_normal(noise.data(), noise.size());
    double* x = out.data();
    const double* sc = scores.data();
    const double* eps = noise.data();
    for (std::size_t i = 0; i < out.size(); ++i) x[i] += drift * sc[i] + sigma_step * eps[i];
    if (!out.all_finite()) throw SamplingError("reverse_diffuse_batch: chain diverged", tau);
  }
}

inline void squash_actions(const DenseArray& pretanh, const DenseArray& bound, DenseArray& out) {
  MlpWorkspace::resize2d(out, pretanh.rows(), pretanh.cols());
  for (int i = 0; i < pretanh.rows(); ++i)
    for (int j = 0; j < pretanh.cols(); ++j)
      out.at(i, j) = bound[static_cast<std::size_t>(j)] * std::tanh(pretanh.at(i, j));
}

// Boltzmann-density sampler: a state/temperature-conditioned score network
// driven through the reverse VE SDE, followed by tanh squashing to the
// action bounds. Score-net input layout: state | noisy action | tau
// embedding | temperature embedding.
struct DiffusionPolicy : ActionSampler {
  MlpNetwork score_net;
  AdamState adam;
  NoiseSchedule schedule;
  int n_steps = 1000;
  double temperature = 1.0;
  DenseArray action_bound;  // per-dimension a_max
  int emb_dim = 256;
  int state_dim = 0;
  int act_dim = 0;
  bool literal_update = false;

  static DiffusionPolicy make(int state_dim, int act_dim, const std::vector<int>& hidden,
                              int emb_dim, const NoiseSchedule& schedule, int n_steps,
                              double temperature, const DenseArray& action_bound, double lr,
                              Rng& rng) {
    if (!(temperature > 0.0)) throw ConfigError("DiffusionPolicy: temperature must be positive");
    if (action_bound.size() != static_cast<std::size_t>(act_dim))
      throw DimensionError("DiffusionPolicy: action_bound width mismatch");
    for (double b : action_bound.flat())
      if (!(b > 0.0)) throw ConfigError("DiffusionPolicy: action bounds must be positive");
    DiffusionPolicy p;
    std::vector<int> dims;
    dims.push_back(state_dim + act_dim + 2 * emb_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(act_dim);
    p.score_net = make_mlp(dims, /*skip_connections=*/true, rng);
    p.adam = AdamState::like(p.score_net, lr);
    p.schedule = schedule;
    p.n_steps = n_steps;
    p.temperature = temperature;
    p.action_bound = action_bound;
    p.emb_dim = emb_dim;
    p.state_dim = state_dim;
    p.act_dim = act_dim;
    return p;
  }

  int action_dim() const override { return act_dim; }

  int input_dim() const { return state_dim + act_dim + 2 * emb_dim; }

  // Column offsets into the score-net input.
  int state_off() const { return 0; }
  int action_off() const { return state_dim; }
  int tau_emb_off() const { return state_dim + act_dim; }
  int temp_emb_off() const { return state_dim + act_dim + emb_dim; }

  void sample_actions(const DenseArray& states, DenseArray& out, Rng& rng) const override {
    DenseArray pre;
    sample_pretanh(states, pre, rng);
    squash_actions(pre, action_bound, out);
  }

  // Reverse diffusion on the pre-squash variables for a batch of states.
  void sample_pretanh(const DenseArray& states, DenseArray& pre, Rng& rng) const {
    if (states.cols() != state_dim)
      throw DimensionError("sample_actions: state width mismatch");
    int n = states.rows();
    int h1 = score_net.layer_dims[1];

    // per-chain fixed first-layer contribution: bias + state block
    DenseArray base({n, h1});
    for (int i = 0; i < n; ++i) {
      first_layer_bias(score_net, base.row(i));
      first_layer_accum(score_net, states.row(i), state_off(), base.row(i));
    }
    std::vector<double> emb_tau(static_cast<std::size_t>(emb_dim));
    std::vector<double> emb_temp(static_cast<std::size_t>(emb_dim));
    sinusoidal_embedding_into(temperature, emb_temp);
    std::vector<double> shared(static_cast<std::size_t>(h1));

    MlpWorkspace ws;
    auto score_cb = [&](const DenseArray& X, double tau, DenseArray& S) {
      sinusoidal_embedding_into(tau, emb_tau);
      std::fill(shared.begin(), shared.end(), 0.0);
      first_layer_accum(score_net, emb_tau, tau_emb_off(), shared);
      first_layer_accum(score_net, emb_temp, temp_emb_off(), shared);
      ws.prepare(score_net, X.rows());
      for (int i = 0; i < X.rows(); ++i) {
        auto z1 = ws.z[0].row(i);
        std::copy_n(base.row(i).begin(), h1, z1.begin());
        detail::axpy(1.0, std::span<const double>(shared), z1);
        first_layer_accum(score_net, X.row(i), action_off(), z1);
      }
      const DenseArray& y = mlp_forward_from_z1(score_net, ws);
      std::copy(y.flat().begin(), y.flat().end(), S.flat().begin());
    };
    reverse_diffuse_batch(schedule, n_steps, n, act_dim, rng, score_cb, pre, literal_update);
  }
};

// Deterministic score prediction f_phi(s, a_tau, tau; T).
inline DenseArray score_net_forward(const DiffusionPolicy& policy, const DenseArray& state,
                                    const DenseArray& noisy_action, double tau, double temperature) {
  if (state.size() != static_cast<std::size_t>(policy.state_dim) ||
      noisy_action.size() != static_cast<std::size_t>(policy.act_dim))
    throw DimensionError("score_net_forward: state/action width mismatch");
  DenseArray x({policy.input_dim()});
  auto flat = x.flat();
  std::copy(state.flat().begin(), state.flat().end(), flat.begin() + policy.state_off());
  std::copy(noisy_action.flat().begin(), noisy_action.flat().end(),
            flat.begin() + policy.action_off());
  sinusoidal_embedding_into(tau, flat.subspan(static_cast<std::size_t>(policy.tau_emb_off()),
                                              static_cast<std::size_t>(policy.emb_dim)));
  sinusoidal_embedding_into(temperature,
                            flat.subspan(static_cast<std::size_t>(policy.temp_emb_off()),
                                         static_cast<std::size_t>(policy.emb_dim)));
  return forward(policy.score_net, x);
}

// Energy E(a) = -min(Q1, Q2)(s, a) / T for one fixed state, with batched
// evaluation over K candidate actions. Gradients flow through whichever
// head attains the minimum.
class MinQEnergy final : public EnergyFunction {
 public:
  MinQEnergy(const QEnsemble& q, std::span<const double> state, double temperature)
      : q_(q), temperature_(temperature) {
    if (!(temperature > 0.0)) throw DomainError("MinQEnergy: temperature must be positive");
    int h1 = q.q1.layer_dims[1];
    base1_ = DenseArray({h1});
    base2_ = DenseArray({h1});
    first_layer_bias(q.q1, base1_.flat());
    first_layer_accum(q.q1, state, 0, base1_.flat());
    first_layer_bias(q.q2, base2_.flat());
    first_layer_accum(q.q2, state, 0, base2_.flat());
  }

  void evaluate(const DenseArray& points, std::span<double> energies,
                DenseArray* grads) const override {
    int K = points.rows();
    int ad = q_.action_dim;
    int h1 = q_.q1.layer_dims[1];
    auto fill_z1 = [&](const MlpNetwork& net, const DenseArray& base, MlpWorkspace& ws) {
      ws.prepare(net, K);
      for (int i = 0; i < K; ++i) {
        auto z1 = ws.z[0].row(i);
        std::copy_n(base.flat().begin(), h1, z1.begin());
        first_layer_accum(net, points.row(i), q_.state_dim, z1);
      }
    };
    fill_z1(q_.q1, base1_, ws1_);
    fill_z1(q_.q2, base2_, ws2_);
    const DenseArray& y1 = mlp_forward_from_z1(q_.q1, ws1_);
    const DenseArray& y2 = mlp_forward_from_z1(q_.q2, ws2_);

    selector_.assign(static_cast<std::size_t>(K), 0);
    for (int i = 0; i < K; ++i) {
      double a = y1.at(i, 0), b = y2.at(i, 0);
      bool second = b < a;
      selector_[static_cast<std::size_t>(i)] = second ? 1 : 0;
      energies[i] = -(second ? b : a) / temperature_;
    }
    if (!grads) return;

    MlpWorkspace::resize2d(cot1_, K, 1);
    MlpWorkspace::resize2d(cot2_, K, 1);
    for (int i = 0; i < K; ++i) {
      cot1_.at(i, 0) = selector_[static_cast<std::size_t>(i)] == 0 ? 1.0 : 0.0;
      cot2_.at(i, 0) = selector_[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0;
    }
    mlp_backward_to_z1(q_.q1, ws1_, cot1_, dz1_);
    mlp_backward_to_z1(q_.q2, ws2_, cot2_, dz2_);
    for (int i = 0; i < K; ++i) {
      const DenseArray& dz = selector_[static_cast<std::size_t>(i)] == 0 ? dz1_ : dz2_;
      const MlpNetwork& net = selector_[static_cast<std::size_t>(i)] == 0 ? q_.q1 : q_.q2;
      for (int d = 0; d < ad; ++d)
        grads->at(i, d) =
            -detail::dot(dz.row(i), net.weights[0].row(q_.state_dim + d)) / temperature_;
    }
  }

 private:
  const QEnsemble& q_;
  double temperature_;
  DenseArray base1_, base2_;
  mutable MlpWorkspace ws1_, ws2_;
  mutable DenseArray cot1_, cot2_, dz1_, dz2_;
  mutable std::vector<int> selector_;
};

// Regression target for the score net: the Monte Carlo score of the
// Boltzmann density exp(Q/T) around the noisy action. Constant w.r.t. the
// policy parameters; Q parameters are read-only here.
inline DenseArray policy_score_target(const QEnsemble& q, const DenseArray& state,
                                      const DenseArray& noisy_action, double tau,
                                      double temperature, int K, const NoiseSchedule& schedule,
                                      Rng& rng) {
  MinQEnergy energy(q, state.flat(), temperature);
  return mc_score_estimate(energy, noisy_action, schedule, tau, K, rng);
}

struct PolicyScratch {
  DenseArray X;             // assembled score-net inputs, B x input_dim
  DenseArray targets;       // B x act_dim
  DenseArray cot;           // B x act_dim
  DenseArray noisy;         // B x act_dim
  std::vector<double> taus;
  DenseArray mc_noise;      // B x (K * act_dim), standard normal
  DenseArray atau_noise;    // B x act_dim
  MlpWorkspace ws;
  MlpGrads grads;
  bool grads_ready = false;
  std::vector<double> sq;

  struct Chunk {
    McScratch mc;
  };
  std::vector<Chunk> chunks;
};

inline constexpr int kPolicyChunk = 8;

// One score-matching step (Eq-style diffusion loss): per element draw
// tau ~ U[0,1], noise the stored action, regress f_phi onto the MC score of
// exp(Q/T), then take a single Adam step. Returns the mean squared error.
inline double policy_update(DiffusionPolicy& policy, const QEnsemble& q,
                            std::span<const Transition* const> batch, int K, Rng& rng,
                            PolicyScratch& s) {
  if (batch.empty()) throw DomainError("policy_update: empty batch");
  if (K < 1) throw DomainError("policy_update: K must be >= 1");
  int B = static_cast<int>(batch.size());
  int ad = policy.act_dim, sd = policy.state_dim;
  double T = policy.temperature;

  // all randomness drawn up front, in batch order, so that chunked target
  // computation is bitwise independent of the thread count
  s.taus.resize(static_cast<std::size_t>(B));
  for (auto& t : s.taus) t = rng.uniform();
  MlpWorkspace::resize2d(s.atau_noise, B, ad);
  rng.fill_normal(s.atau_noise.data(), s.atau_noise.size());
  MlpWorkspace::resize2d(s.mc_noise, B, K * ad);
  rng.fill_normal(s.mc_noise.data(), s.mc_noise.size());

  MlpWorkspace::resize2d(s.noisy, B, ad);
  MlpWorkspace::resize2d(s.X, B, policy.input_dim());
  for (int i = 0; i < B; ++i) {
    const Transition& tr = *batch[i];
    double sig = sigma_at(policy.schedule, s.taus[static_cast<std::size_t>(i)]);
    for (int d = 0; d < ad; ++d)
      s.noisy.at(i, d) = tr.action[static_cast<std::size_t>(d)] + sig * s.atau_noise.at(i, d);
    auto row = s.X.row(i);
    std::copy(tr.state.flat().begin(), tr.state.flat().end(), row.begin() + policy.state_off());
    std::copy_n(s.noisy.row(i).begin(), ad, row.begin() + policy.action_off());
    sinusoidal_embedding_into(s.taus[static_cast<std::size_t>(i)],
                              row.subspan(static_cast<std::size_t>(policy.tau_emb_off()),
                                          static_cast<std::size_t>(policy.emb_dim)));
    sinusoidal_embedding_into(T, row.subspan(static_cast<std::size_t>(policy.temp_emb_off()),
                                             static_cast<std::size_t>(policy.emb_dim)));
  }

  MlpWorkspace::resize2d(s.targets, B, ad);
  int n_chunks = (B + kPolicyChunk - 1) / kPolicyChunk;
  if (static_cast<int>(s.chunks.size()) < n_chunks) s.chunks.resize(n_chunks);
  Rng dummy(0);  // targets consume only prefilled noise
  parallel_for_chunks(n_chunks, [&](int c) {
    PolicyScratch::Chunk& ch = s.chunks[static_cast<std::size_t>(c)];
    int lo = c * kPolicyChunk, hi = std::min(B, lo + kPolicyChunk);
    for (int i = lo; i < hi; ++i) {
      const Transition& tr = *batch[i];
      MinQEnergy energy(q, tr.state.flat(), T);
      MlpWorkspace::resize2d(ch.mc.points, K, ad);
      std::copy_n(s.mc_noise.row(i).begin(), static_cast<std::size_t>(K) * ad,
                  ch.mc.points.flat().begin());
      mc_score_estimate_into(energy, s.noisy.row(i), policy.schedule,
                             s.taus[static_cast<std::size_t>(i)], K, dummy, ch.mc,
                             s.targets.row(i), /*noise_prefilled=*/true);
    }
  });

  const DenseArray& f = mlp_forward_batch(policy.score_net, s.X, s.ws);
  MlpWorkspace::resize2d(s.cot, B, ad);
  s.sq.assign(static_cast<std::size_t>(B), 0.0);
  for (int i = 0; i < B; ++i) {
    double acc = 0.0;
    for (int d = 0; d < ad; ++d) {
      double e = f.at(i, d) - s.targets.at(i, d);
      acc += e * e;
      s.cot.at(i, d) = 2.0 * e / B;
    }
    s.sq[static_cast<std::size_t>(i)] = acc;
  }
  if (!s.grads_ready) {
    s.grads = MlpGrads::like(policy.score_net);
    s.grads_ready = true;
  }
  s.grads.zero();
  mlp_backward_batch(policy.score_net, s.ws, s.cot, &s.grads, nullptr);
  adam_step(policy.score_net, s.grads, policy.adam);
  return pairwise_sum(s.sq) / B;
}

inline double policy_update(DiffusionPolicy& policy, const QEnsemble& q,
                            std::span<const Transition* const> batch, int K, Rng& rng) {
  PolicyScratch scratch;
  return policy_update(policy, q, batch, K, rng, scratch);
}

}  // namespace dqs
