#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/errors.hpp"
#include "dqs/rng.hpp"

namespace dqs {

// Geometric variance-exploding schedule sigma(tau) = min * (max/min)^tau
// over tau in [0,1], with diffusion coefficient
//   g^2(tau) = d sigma^2 / d tau = 2 ln(max/min) * sigma(tau)^2.
struct NoiseSchedule {
  double sigma_min = 1e-5;
  double sigma_max = 1.0;

  NoiseSchedule() = default;
  NoiseSchedule(double smin, double smax) : sigma_min(smin), sigma_max(smax) {
    if (!(sigma_min > 0.0) || !(sigma_max >= sigma_min))
      throw ConfigError("NoiseSchedule: need 0 < sigma_min <= sigma_max");
  }

  double log_ratio() const { return std::log(sigma_max / sigma_min); }
};

inline double sigma_at(const NoiseSchedule& s, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("sigma_at: tau outside [0,1]");
  return s.sigma_min * std::pow(s.sigma_max / s.sigma_min, tau);
}

inline double g_squared(const NoiseSchedule& s, double tau) {
  double sig = sigma_at(s, tau);
  return 2.0 * s.log_ratio() * sig * sig;
}

inline DenseArray add_noise(const DenseArray& x0, const NoiseSchedule& s, double tau, Rng& rng) {
  double sig = sigma_at(s, tau);
  DenseArray out = x0;
  for (double& v : out.flat()) v += sig * rng.normal();
  return out;
}

// Energy oracle contract: fills energies[i] = E(points row i) and, when
// grads is non-null, grads row i = dE/dx(points row i). Implementations may
// treat the whole batch at once.
class EnergyFunction {
 public:
  virtual ~EnergyFunction() = default;
  virtual void evaluate(const DenseArray& points, std::span<double> energies,
                        DenseArray* grads) const = 0;
};

class CallableEnergy final : public EnergyFunction {
 public:
  using ValueFn = std::function<double(std::span<const double>)>;
  using GradFn = std::function<void(std::span<const double>, std::span<double>)>;

  CallableEnergy(ValueFn value, GradFn grad) : value_(std::move(value)), grad_(std::move(grad)) {}

  void evaluate(const DenseArray& points, std::span<double> energies,
                DenseArray* grads) const override {
    for (int i = 0; i < points.rows(); ++i) {
      energies[i] = value_(points.row(i));
      if (grads) grad_(points.row(i), grads->row(i));
    }
  }

 private:
  ValueFn value_;
  GradFn grad_;
};

// Scratch buffers for the Monte Carlo score estimator.
struct McScratch {
  DenseArray points;
  DenseArray grads;
  std::vector<double> energies;
  std::vector<double> weights;
  std::vector<double> acc;
};

// K-sample Monte Carlo estimate of the score of the noised marginal of
// exp(-E): draws x~_i = x + sigma_tau * eps_i and returns
//   grad_x log sum_i exp(-E(x~_i)) = sum_i softmax(-E)_i * (-grad E(x~_i)),
// with a max shift inside the softmax for stability. Per-sample noise may
// be supplied in scratch.points (K x dim, standard normal) to decouple
// drawing from evaluation; otherwise it is drawn from rng.
inline void mc_score_estimate_into(const EnergyFunction& energy, std::span<const double> x,
                                   const NoiseSchedule& s, double tau, int K, Rng& rng,
                                   McScratch& scratch, std::span<double> out,
                                   bool noise_prefilled = false) {
  if (K < 1) throw DomainError("mc_score_estimate: K must be >= 1");
  int dim = static_cast<int>(x.size());
  double sig = sigma_at(s, tau);
  if (!noise_prefilled) {
    if (scratch.points.rank() != 2 || scratch.points.dim(0) != K || scratch.points.dim(1) != dim)
      scratch.points = DenseArray({K, dim});
    rng.fill_normal(scratch.points.data(), scratch.points.size());
  } else if (scratch.points.rank() != 2 || scratch.points.dim(0) != K ||
             scratch.points.dim(1) != dim) {
    throw DimensionError("mc_score_estimate: prefilled noise has wrong shape");
  }
  // reparameterize: x~ = x + sigma * eps
  for (int i = 0; i < K; ++i) {
    double* p = scratch.points.row(i).data();
    for (int d = 0; d < dim; ++d) p[d] = x[d] + sig * p[d];
  }
  if (scratch.grads.rank() != 2 || scratch.grads.dim(0) != K || scratch.grads.dim(1) != dim)
    scratch.grads = DenseArray({K, dim});
  scratch.energies.assign(static_cast<std::size_t>(K), 0.0);
  energy.evaluate(scratch.points, scratch.energies, &scratch.grads);

  double best = -std::numeric_limits<double>::infinity();
  for (double e : scratch.energies)
    if (std::isfinite(e) && -e > best) best = -e;
  if (!std::isfinite(best))
    throw EstimationError("mc_score_estimate: all sample energies are non-finite");

  scratch.weights.assign(static_cast<std::size_t>(K), 0.0);
  double norm = 0.0;
  for (int i = 0; i < K; ++i) {
    double e = scratch.energies[static_cast<std::size_t>(i)];
    double w = std::isfinite(e) ? std::exp(-e - best) : 0.0;
    scratch.weights[static_cast<std::size_t>(i)] = w;
    norm += w;
  }
  scratch.acc.assign(static_cast<std::size_t>(K), 0.0);
  for (int d = 0; d < dim; ++d) {
    for (int i = 0; i < K; ++i)
      scratch.acc[static_cast<std::size_t>(i)] =
          scratch.weights[static_cast<std::size_t>(i)] * scratch.grads.at(i, d);
    out[d] = -pairwise_sum(scratch.acc) / norm;
  }
}

inline DenseArray mc_score_estimate(const EnergyFunction& energy, const DenseArray& x_tau,
                                    const NoiseSchedule& s, double tau, int K, Rng& rng) {
  DenseArray out({x_tau.dim(0)});
  McScratch scratch;
  mc_score_estimate_into(energy, x_tau.flat(), s, tau, K, rng, scratch, out.flat());
  return out;
}

// One Euler-Maruyama step of the reverse VE SDE, from tau to tau - dtau:
//   x <- x + g^2(tau) * score * dtau + g(tau) * sqrt(dtau) * eps.
// The literal variant substitutes sigma_tau^2 for g^2 dtau and sigma_tau
// for g sqrt(dtau); it is step-count-inconsistent and exists for
// comparison only.
inline void reverse_step_inplace(std::span<double> x, std::span<const double> score,
                                 const NoiseSchedule& s, double tau, double dtau, Rng& rng,
                                 bool literal_update = false) {
  if (!(dtau > 0.0) || dtau > tau + 1e-12) throw DomainError("reverse_step: need 0 < dtau <= tau");
  for (double v : score)
    if (!std::isfinite(v)) throw NumericError("reverse_step: non-finite score");
  double drift, noise;
  if (literal_update) {
    double sig = sigma_at(s, tau);
    drift = sig * sig;
    noise = sig;
  } else {
    double g2 = g_squared(s, tau);
    drift = g2 * dtau;
    noise = std::sqrt(g2 * dtau);
  }
  for (std::size_t d = 0; d < x.size(); ++d) x[d] += drift * score[d] + noise * rng.normal();
}

inline DenseArray reverse_step(const DenseArray& x_tau, const DenseArray& score,
                               const NoiseSchedule& s, double tau, double dtau, Rng& rng,
                               bool literal_update = false) {
  require_same_shape(x_tau, score, "reverse_step");
  DenseArray out = x_tau;
  reverse_step_inplace(out.flat(), score.flat(), s, tau, dtau, rng, literal_update);
  return out;
}

// Integrates the reverse SDE from tau = 1 to 0 on a uniform grid, starting
// from the prior x_1 ~ N(0, sigma_max^2 I).
inline DenseArray generate_sample(
    const std::function<DenseArray(const DenseArray&, double)>& score_fn, int dim,
    const NoiseSchedule& s, int n_steps, Rng& rng, bool literal_update = false) {
  if (n_steps < 1) throw DomainError("generate_sample: n_steps must be >= 1");
  if (dim < 1) throw DomainError("generate_sample: dim must be >= 1");
  DenseArray x({dim});
  for (double& v : x.flat()) v = s.sigma_max * rng.normal();
  double dtau = 1.0 / n_steps;
  for (int k = n_steps; k >= 1; --k) {
    double tau = static_cast<double>(k) / n_steps;
    DenseArray score = score_fn(x, tau);
    if (!score.same_shape(x))
      throw DimensionError("generate_sample: score_fn output dim mismatch");
    if (!score.all_finite())
      throw SamplingError("generate_sample: non-finite score in reverse chain", tau);
    reverse_step_inplace(x.flat(), score.flat(), s, tau, dtau, rng, literal_update);
    if (!x.all_finite())
      throw SamplingError("generate_sample: chain diverged", tau);
  }
  return x;
}

}  // namespace dqs
