#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dqs/diffusion.hpp"
#include "dqs/eval.hpp"
#include "dqs/rng.hpp"

using namespace dqs;

namespace {

// E(x) = |x|^2 / (2T); the Boltzmann density is N(0, T I) and the noised
// marginal score at sigma is -x / (T + sigma^2).
class QuadraticEnergy final : public EnergyFunction {
 public:
  explicit QuadraticEnergy(double temperature = 1.0, double offset = 0.0)
      : t_(temperature), offset_(offset) {}

  void evaluate(const DenseArray& points, std::span<double> energies,
                DenseArray* grads) const override {
    for (int i = 0; i < points.rows(); ++i) {
      auto row = points.row(i);
      double s = 0.0;
      for (double v : row) s += v * v;
      energies[i] = 0.5 * s / t_ + offset_;
      if (grads)
        for (int d = 0; d < points.cols(); ++d) grads->at(i, d) = row[d] / t_;
    }
  }

 private:
  double t_;
  double offset_;
};

class ConstantEnergy final : public EnergyFunction {
 public:
  explicit ConstantEnergy(double c) : c_(c) {}
  void evaluate(const DenseArray& points, std::span<double> energies,
                DenseArray* grads) const override {
    for (int i = 0; i < points.rows(); ++i) {
      energies[i] = c_;
      if (grads)
        for (int d = 0; d < points.cols(); ++d) grads->at(i, d) = 0.0;
    }
  }

 private:
  double c_;
};

class NonFiniteEnergy final : public EnergyFunction {
 public:
  void evaluate(const DenseArray& points, std::span<double> energies,
                DenseArray* grads) const override {
    for (int i = 0; i < points.rows(); ++i) {
      energies[i] = std::numeric_limits<double>::infinity();
      if (grads)
        for (int d = 0; d < points.cols(); ++d) grads->at(i, d) = 0.0;
    }
  }
};

}  // namespace

TEST_CASE("geometric schedule endpoints and monotonicity", "[diffusion]") {
  NoiseSchedule s;
  REQUIRE(sigma_at(s, 0.0) == Catch::Approx(1e-5).epsilon(1e-12));
  REQUIRE(sigma_at(s, 1.0) == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(sigma_at(s, 0.5) == Catch::Approx(3.1622776601683795e-3).epsilon(1e-12));
  REQUIRE_THROWS_AS(sigma_at(s, -0.01), DomainError);
  REQUIRE_THROWS_AS(sigma_at(s, 1.01), DomainError);

  double prev = 0.0;
  for (int i = 0; i <= 100; ++i) {
    double sig = sigma_at(s, i / 100.0);
    REQUIRE(sig > prev);
    prev = sig;
  }
}

TEST_CASE("discrete variance budget matches sigma_max^2 - sigma_min^2", "[diffusion]") {
  // midpoint evaluation of g^2 over a 1000-cell uniform grid
  NoiseSchedule s;
  int n = 1000;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) acc += g_squared(s, (k + 0.5) / n) / n;
  double want = s.sigma_max * s.sigma_max - s.sigma_min * s.sigma_min;
  REQUIRE(std::abs(acc - want) / want <= 0.01);
}

TEST_CASE("add_noise basics and large-sample variance", "[diffusion]") {
  NoiseSchedule s;

  SECTION("tau = 0 is a near-identity") {
    Rng rng(11);
    DenseArray x = DenseArray::vector({0.3, -0.7, 1.5});
    DenseArray y = add_noise(x, s, 0.0, rng);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(std::abs(y[i] - x[i]) <= 1e-4);
  }

  SECTION("fixed seed reproduces") {
    Rng a(42), b(42);
    DenseArray x = DenseArray::vector({1.0, 2.0});
    DenseArray ya = add_noise(x, s, 0.7, a);
    DenseArray yb = add_noise(x, s, 0.7, b);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(ya[i] == yb[i]);
  }

  SECTION("sample variance at tau = 1 is near one") {
    Rng rng(7);
    DenseArray x({1});
    int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
      double v = add_noise(x, s, 1.0, rng)[0];
      sum += v;
      sumsq += v * v;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    REQUIRE(var >= 0.97);
    REQUIRE(var <= 1.03);
  }
}

TEST_CASE("mc score estimator degenerate and error cases", "[diffusion]") {
  NoiseSchedule s;

  SECTION("constant energy gives the zero vector for any K") {
    Rng rng(3);
    ConstantEnergy e(4.2);
    for (int K : {1, 7, 100}) {
      DenseArray out = mc_score_estimate(e, DenseArray::vector({0.4, -1.2}), s, 0.6, K, rng);
      for (double v : out.flat()) REQUIRE(v == 0.0);
    }
  }

  SECTION("K = 1 returns exactly the negated gradient at the single sample") {
    QuadraticEnergy e;
    double tau = 0.5;
    Rng rng(99);
    DenseArray x = DenseArray::vector({1.0, -2.0});
    DenseArray got = mc_score_estimate(e, x, s, tau, 1, rng);
    Rng replay(99);
    double sig = sigma_at(s, tau);
    double s0 = x[0] + sig * replay.normal();
    double s1 = x[1] + sig * replay.normal();
    REQUIRE(got[0] == Catch::Approx(-s0).margin(1e-15));
    REQUIRE(got[1] == Catch::Approx(-s1).margin(1e-15));
  }

  SECTION("K = 0 is a domain error") {
    QuadraticEnergy e;
    Rng rng(1);
    REQUIRE_THROWS_AS(mc_score_estimate(e, DenseArray::vector({0.0}), s, 0.5, 0, rng),
                      DomainError);
  }

  SECTION("all non-finite energies raise an estimation error") {
    NonFiniteEnergy e;
    Rng rng(1);
    REQUIRE_THROWS_AS(mc_score_estimate(e, DenseArray::vector({0.0, 0.0}), s, 0.5, 64, rng),
                      EstimationError);
  }

  SECTION("adding a constant to the energy changes nothing, bitwise") {
    Rng a(123), b(123);
    QuadraticEnergy plain(1.0, 0.0), shifted(1.0, 57.0);
    DenseArray x = DenseArray::vector({0.8, 0.1});
    DenseArray ya = mc_score_estimate(plain, x, s, 0.9, 256, a);
    DenseArray yb = mc_score_estimate(shifted, x, s, 0.9, 256, b);
    for (std::size_t i = 0; i < ya.size(); ++i) REQUIRE(ya[i] == yb[i]);
  }
}

TEST_CASE("mc score estimator matches the Gaussian-convolution closed form", "[diffusion]") {
  // E(x) = |x|^2/2 makes the noised marginal score exactly -x/(1+sigma^2).
  NoiseSchedule s;
  QuadraticEnergy e;
  Rng rng(2024);
  const int K = 1000;
  std::vector<double> axis = {-3.0, -1.8, -0.6, 0.6, 1.8, 3.0};
  for (double tau : {0.25, 0.5, 0.75}) {
    double sig = sigma_at(s, tau);
    double denom = 1.0 + sig * sig;
    double err_sum = 0.0;
    int count = 0;
    for (double gx : axis) {
      for (double gy : axis) {
        DenseArray x = DenseArray::vector({gx, gy});
        DenseArray est = mc_score_estimate(e, x, s, tau, K, rng);
        double ex = -gx / denom, ey = -gy / denom;
        double diff = std::hypot(est[0] - ex, est[1] - ey);
        err_sum += diff / std::hypot(ex, ey);
        ++count;
      }
    }
    REQUIRE(err_sum / count <= 0.05);
  }
}

TEST_CASE("temperature scaling: small tau drives the estimate to -grad E / T", "[diffusion]") {
  NoiseSchedule s;
  Rng rng(77);
  const int K = 1000;
  double tau = 0.05;
  DenseArray x = DenseArray::vector({1.4, -0.9});
  for (double T : {0.5, 1.0, 2.0}) {
    QuadraticEnergy e(T);
    DenseArray est = mc_score_estimate(e, x, s, tau, K, rng);
    double ex = -x[0] / T, ey = -x[1] / T;
    double rel = std::hypot(est[0] - ex, est[1] - ey) / std::hypot(ex, ey);
    REQUIRE(rel <= 0.05);
  }
}

TEST_CASE("reverse_step degenerate, error, and determinism cases", "[diffusion]") {
  SECTION("zero score with zero diffusion coefficient leaves x unchanged") {
    NoiseSchedule frozen(1.0, 1.0);  // log ratio 0 => g = 0
    Rng rng(5);
    DenseArray x = DenseArray::vector({0.4, -0.2});
    DenseArray score({2});
    DenseArray y = reverse_step(x, score, frozen, 0.5, 0.01, rng);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(y[i] == x[i]);
  }

  SECTION("fixed seed gives a deterministic trajectory") {
    NoiseSchedule s;
    Rng a(9), b(9);
    DenseArray x = DenseArray::vector({1.0});
    DenseArray score = DenseArray::vector({-1.0});
    DenseArray ya = x, yb = x;
    for (int k = 0; k < 50; ++k) {
      ya = reverse_step(ya, score, s, 0.8, 0.001, a);
      yb = reverse_step(yb, score, s, 0.8, 0.001, b);
    }
    REQUIRE(ya[0] == yb[0]);
  }

  SECTION("non-finite score is a numeric error") {
    NoiseSchedule s;
    Rng rng(1);
    DenseArray x = DenseArray::vector({0.0});
    DenseArray bad = DenseArray::vector({std::nan("")});
    REQUIRE_THROWS_AS(reverse_step(x, bad, s, 0.5, 0.01, rng), NumericError);
  }

  SECTION("dtau larger than tau is a domain error") {
    NoiseSchedule s;
    Rng rng(1);
    DenseArray x = DenseArray::vector({0.0});
    DenseArray score = DenseArray::vector({0.0});
    REQUIRE_THROWS_AS(reverse_step(x, score, s, 0.05, 0.1, rng), DomainError);
  }
}

TEST_CASE("reverse integration of a known Gaussian target", "[diffusion][slow]") {
  // Oracle schedule with sigma_max well above the target scale so the
  // N(0, sigma_max^2) prior matches the true tau=1 marginal; the exact
  // noised-marginal score of a standard normal target is -x/(1+sigma^2).
  NoiseSchedule s(1e-5, 5.0);
  const int n_steps = 1000;
  const int chains = 10000;
  Rng rng(314159);
  double sum = 0.0, sumsq = 0.0;
  double dtau = 1.0 / n_steps;
  for (int c = 0; c < chains; ++c) {
    double x = s.sigma_max * rng.normal();
    for (int k = n_steps; k >= 1; --k) {
      double tau = static_cast<double>(k) / n_steps;
      double sig = sigma_at(s, tau);
      double score = -x / (1.0 + sig * sig);
      double g2 = g_squared(s, tau);
      x += g2 * dtau * score + std::sqrt(g2 * dtau) * rng.normal();
    }
    sum += x;
    sumsq += x * x;
  }
  double mean = sum / chains;
  double var = sumsq / chains - mean * mean;
  REQUIRE(mean >= -0.05);
  REQUIRE(mean <= 0.05);
  REQUIRE(var >= 0.9);
  REQUIRE(var <= 1.1);
}

TEST_CASE("generate_sample identity chain and dim checks", "[diffusion]") {
  SECTION("zero score with zero diffusion returns the prior draw") {
    NoiseSchedule frozen(0.7, 0.7);
    Rng rng(21);
    auto zero_score = [](const DenseArray& x, double) { return DenseArray({x.dim(0)}); };
    DenseArray got = generate_sample(zero_score, 3, frozen, 100, rng);
    Rng replay(21);
    for (int d = 0; d < 3; ++d) REQUIRE(got[static_cast<std::size_t>(d)] == 0.7 * replay.normal());
  }

  SECTION("score_fn output width mismatch raises") {
    NoiseSchedule s;
    Rng rng(2);
    auto bad = [](const DenseArray&, double) { return DenseArray({5}); };
    REQUIRE_THROWS_AS(generate_sample(bad, 2, s, 10, rng), DimensionError);
  }
}

TEST_CASE("generate_sample reproduces a standard normal target under MMD", "[diffusion][slow]") {
  NoiseSchedule s(1e-5, 5.0);
  const int n = 1000;
  Rng rng(8675309);
  auto score = [&](const DenseArray& x, double tau) {
    double sig = sigma_at(s, tau);
    DenseArray out({1});
    out.data()[0] = -x[0] / (1.0 + sig * sig);
    return out;
  };
  DenseArray gen({n, 1});
  for (int i = 0; i < n; ++i) gen.at(i, 0) = generate_sample(score, 1, s, 1000, rng)[0];

  Rng gtr(5150);
  DenseArray truth({n, 1});
  for (int i = 0; i < n; ++i) truth.at(i, 0) = gtr.normal();

  // The null scale is the average of several independent truth-vs-truth
  // MMDs; a single draw is frequently clipped to zero.
  double null_acc = 0.0;
  const int null_reps = 10;
  for (int r = 0; r < null_reps; ++r) {
    DenseArray a({n, 1}), b({n, 1});
    for (int i = 0; i < n; ++i) a.at(i, 0) = gtr.normal();
    for (int i = 0; i < n; ++i) b.at(i, 0) = gtr.normal();
    null_acc += mmd(a, b);
  }
  double null_scale = null_acc / null_reps;
  double got = mmd(gen, truth);
  INFO("mmd=" << got << " null=" << null_scale);
  REQUIRE(got <= 3.0 * null_scale);
}
