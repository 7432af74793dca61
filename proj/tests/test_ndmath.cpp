#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/checkpoint.hpp"
#include "dqs/embedding.hpp"
#include "dqs/mlp.hpp"
#include "dqs/optimizer.hpp"
#include "dqs/rng.hpp"

using namespace dqs;

namespace {

MlpNetwork random_net(std::vector<int> dims, bool skip, Rng& rng) {
  MlpNetwork net = make_mlp(std::move(dims), skip, rng);
  for (auto& b : net.biases)
    for (double& v : b.flat()) v = 0.3 * rng.normal();
  return net;
}

DenseArray random_vec(int n, Rng& rng) {
  DenseArray v({n});
  for (double& x : v.flat()) x = rng.normal();
  return v;
}

// Redraws the input until every pre-activation is at least `margin` from
// the ReLU kink; central differences are only valid away from kinks.
DenseArray safe_input(const MlpNetwork& net, Rng& rng, double margin = 1e-3) {
  MlpWorkspace ws;
  for (int attempt = 0; attempt < 200; ++attempt) {
    DenseArray x = random_vec(net.input_dim(), rng);
    DenseArray xm({1, net.input_dim()});
    std::copy(x.flat().begin(), x.flat().end(), xm.flat().begin());
    mlp_forward_batch(net, xm, ws);
    double closest = 1e300;
    for (int l = 0; l + 1 < net.num_layers() + 1 && l < net.num_layers() - 1; ++l)
      for (double z : ws.z[l].flat()) closest = std::min(closest, std::abs(z));
    if (closest > margin) return x;
  }
  FAIL("could not find an input away from ReLU kinks");
  return DenseArray({net.input_dim()});
}

double loss_value(const MlpNetwork& net, const DenseArray& x, const DenseArray& cot) {
  DenseArray y = forward(net, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * cot[i];
  return s;
}

double rel_err(double a, double b) {
  double denom = std::max({1e-6, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

// Central finite differences against every parameter and input entry.
double max_fd_rel_err(MlpNetwork& net, const DenseArray& x, const DenseArray& cot, double h) {
  GradientResult g = gradients(net, x, cot);
  double worst = 0.0;
  auto probe = [&](double* slot, double analytic) {
    double saved = *slot;
    *slot = saved + h;
    double up = loss_value(net, x, cot);
    *slot = saved - h;
    double down = loss_value(net, x, cot);
    *slot = saved;
    worst = std::max(worst, rel_err(analytic, (up - down) / (2.0 * h)));
  };
  for (int l = 0; l < net.num_layers(); ++l) {
    for (std::size_t i = 0; i < net.weights[l].size(); ++i)
      probe(&net.weights[l].data()[i], g.param_grads.weights[l][i]);
    for (std::size_t i = 0; i < net.biases[l].size(); ++i)
      probe(&net.biases[l].data()[i], g.param_grads.biases[l][i]);
  }
  DenseArray xm = x;
  for (std::size_t i = 0; i < xm.size(); ++i) {
    double saved = xm[i];
    xm.data()[i] = saved + h;
    double up = loss_value(net, xm, cot);
    xm.data()[i] = saved - h;
    double down = loss_value(net, xm, cot);
    xm.data()[i] = saved;
    worst = std::max(worst, rel_err(g.input_grad[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

}  // namespace

TEST_CASE("forward: zero nets, identity layers, recomputation oracle", "[ndmath]") {
  Rng rng(101);

  SECTION("zero weights and biases give zero output") {
    Rng r2(7);
    MlpNetwork net = make_mlp({3, 4, 2}, false, r2);
    for (auto& w : net.weights) w.fill(0.0);
    DenseArray y = forward(net, DenseArray::vector({1.0, -2.0, 3.0}));
    for (double v : y.flat()) REQUIRE(v == 0.0);
  }

  SECTION("single linear layer with identity weights passes input through") {
    Rng r2(8);
    MlpNetwork net = make_mlp({3, 3}, false, r2);
    net.weights[0].fill(0.0);
    for (int i = 0; i < 3; ++i) net.weights[0].at(i, i) = 1.0;
    net.biases[0].fill(0.0);
    DenseArray x = DenseArray::vector({0.5, -1.25, 2.0});
    DenseArray y = forward(net, x);
    for (int i = 0; i < 3; ++i) REQUIRE(y[i] == x[i]);
  }

  SECTION("random two-layer net matches a straight-line recomputation") {
    MlpNetwork net = random_net({4, 5, 3}, false, rng);
    DenseArray x = random_vec(4, rng);
    // independent recomputation with explicit loops
    std::vector<double> h1(5, 0.0);
    for (int j = 0; j < 5; ++j) {
      double z = net.biases[0][j];
      for (int t = 0; t < 4; ++t) z += x[t] * net.weights[0].at(t, j);
      h1[j] = z > 0.0 ? z : 0.0;
    }
    std::vector<double> yref(3, 0.0);
    for (int j = 0; j < 3; ++j) {
      double z = net.biases[1][j];
      for (int t = 0; t < 5; ++t) z += h1[t] * net.weights[1].at(t, j);
      yref[j] = z;
    }
    DenseArray y = forward(net, x);
    for (int j = 0; j < 3; ++j) REQUIRE(y[j] == Catch::Approx(yref[j]).margin(1e-12));
  }

  SECTION("width mismatch raises a dimension error") {
    MlpNetwork net = random_net({4, 5, 3}, false, rng);
    REQUIRE_THROWS_AS(forward(net, random_vec(3, rng)), DimensionError);
  }

  SECTION("forward is pure") {
    MlpNetwork net = random_net({4, 8, 8, 2}, true, rng);
    DenseArray x = random_vec(4, rng);
    DenseArray y1 = forward(net, x);
    DenseArray y2 = forward(net, x);
    for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1[i] == y2[i]);
  }
}

TEST_CASE("gradients: linear case, zero cotangent, finite differences", "[ndmath]") {
  Rng rng(202);

  SECTION("linear layer input gradient is W^T c") {
    MlpNetwork net = random_net({4, 3}, false, rng);
    DenseArray x = random_vec(4, rng);
    DenseArray c = random_vec(3, rng);
    GradientResult g = gradients(net, x, c);
    for (int t = 0; t < 4; ++t) {
      double want = 0.0;
      for (int j = 0; j < 3; ++j) want += net.weights[0].at(t, j) * c[j];
      REQUIRE(g.input_grad[t] == Catch::Approx(want).margin(1e-14));
    }
  }

  SECTION("zero cotangent yields all-zero gradients") {
    MlpNetwork net = random_net({4, 6, 2}, false, rng);
    DenseArray x = random_vec(4, rng);
    GradientResult g = gradients(net, x, DenseArray({2}));
    for (const auto& w : g.param_grads.weights)
      for (double v : w.flat()) REQUIRE(v == 0.0);
    for (double v : g.input_grad.flat()) REQUIRE(v == 0.0);
  }

  SECTION("central finite differences agree on random nets") {
    for (int trial = 0; trial < 10; ++trial) {
      bool skip = trial % 2 == 1;
      MlpNetwork net = random_net({5, 7, 7, 3}, skip, rng);
      DenseArray x = safe_input(net, rng);
      DenseArray c = random_vec(3, rng);
      REQUIRE(max_fd_rel_err(net, x, c, 1e-5) <= 1e-4);
    }
  }

  SECTION("cotangent width mismatch raises") {
    MlpNetwork net = random_net({4, 6, 2}, false, rng);
    REQUIRE_THROWS_AS(gradients(net, random_vec(4, rng), random_vec(3, rng)), DimensionError);
  }
}

TEST_CASE("relu networks are positively homogeneous without biases", "[ndmath]") {
  Rng rng(303);
  MlpNetwork net = make_mlp({3, 6, 6, 2}, false, rng);  // zero biases by construction
  DenseArray x = random_vec(3, rng);
  for (double k : {0.0, 0.5, 2.0, 7.5}) {
    DenseArray xs = x;
    for (double& v : xs.flat()) v *= k;
    DenseArray lhs = forward(net, xs);
    DenseArray rhs = forward(net, x);
    for (std::size_t i = 0; i < lhs.size(); ++i)
      REQUIRE(lhs[i] == Catch::Approx(k * rhs[i]).margin(1e-12));
  }
}

TEST_CASE("adam: first step, zero gradients, hand-stepped trace", "[ndmath]") {
  SECTION("first step moves a unit-gradient scalar by lr/(1+eps)") {
    DenseArray w({1}, {1.0});
    DenseArray g({1}, {1.0});
    AdamState st = AdamState::for_scalar(3e-4);
    DenseArray* params[] = {&w};
    const DenseArray* grads[] = {&g};
    adam_step(params, grads, st);
    double expect = 1.0 - 3e-4 * 1.0 / (1.0 + st.epsilon);
    REQUIRE(w[0] == Catch::Approx(expect).epsilon(1e-12));
    REQUIRE(st.step_count == 1);
  }

  SECTION("zero gradients leave parameters unchanged for any number of steps") {
    Rng rng(5);
    MlpNetwork net = random_net({3, 4, 2}, false, rng);
    MlpNetwork before = net;
    AdamState st = AdamState::like(net);
    MlpGrads g = MlpGrads::like(net);
    g.zero();
    for (int i = 0; i < 25; ++i) adam_step(net, g, st);
    for (int l = 0; l < net.num_layers(); ++l) {
      REQUIRE(std::memcmp(net.weights[l].data(), before.weights[l].data(),
                          net.weights[l].size() * sizeof(double)) == 0);
      REQUIRE(std::memcmp(net.biases[l].data(), before.biases[l].data(),
                          net.biases[l].size() * sizeof(double)) == 0);
    }
    REQUIRE(st.step_count == 25);
  }

  SECTION("ten steps on f(w)=w^2 match an independently stepped trace") {
    DenseArray w({1}, {1.0});
    AdamState st = AdamState::for_scalar(3e-4);

    // independent oracle: plain loop over the Adam recurrences
    double wm = 1.0, m = 0.0, v = 0.0;
    std::vector<double> trace;
    for (int t = 1; t <= 10; ++t) {
      double grad = 2.0 * wm;
      m = 0.9 * m + 0.1 * grad;
      v = 0.999 * v + 0.001 * grad * grad;
      double mh = m / (1.0 - std::pow(0.9, t));
      double vh = v / (1.0 - std::pow(0.999, t));
      wm -= 3e-4 * mh / (std::sqrt(vh) + 1e-8);
      trace.push_back(wm);
    }

    double prev = 1.0;
    for (int t = 0; t < 10; ++t) {
      DenseArray g({1}, {2.0 * w[0]});
      DenseArray* params[] = {&w};
      const DenseArray* grads[] = {&g};
      adam_step(params, grads, st);
      REQUIRE(w[0] == Catch::Approx(trace[static_cast<std::size_t>(t)]).epsilon(1e-14));
      REQUIRE(std::abs(w[0]) < std::abs(prev));
      prev = w[0];
    }
  }

  SECTION("non-finite gradient rejects the update") {
    DenseArray w({1}, {1.0});
    DenseArray g({1}, {std::nan("")});
    AdamState st = AdamState::for_scalar();
    DenseArray* params[] = {&w};
    const DenseArray* grads[] = {&g};
    REQUIRE_THROWS_AS(adam_step(params, grads, st), NumericError);
    REQUIRE(w[0] == 1.0);
    REQUIRE(st.step_count == 0);
  }
}

TEST_CASE("sinusoidal embedding", "[ndmath]") {
  SECTION("value zero gives alternating 0/1") {
    DenseArray e = sinusoidal_embedding(0.0, 256);
    for (int k = 0; k < 128; ++k) {
      REQUIRE(e[2 * k] == 0.0);
      REQUIRE(e[2 * k + 1] == 1.0);
    }
  }

  SECTION("deterministic") {
    DenseArray a = sinusoidal_embedding(0.731, 64);
    DenseArray b = sinusoidal_embedding(0.731, 64);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  }

  SECTION("value 1, dim 4 lays out sin/cos at frequencies 1 and 10000^-1/2") {
    DenseArray e = sinusoidal_embedding(1.0, 4);
    double f1 = std::pow(10000.0, -0.5);
    REQUIRE(e[0] == Catch::Approx(std::sin(1.0)).margin(1e-15));
    REQUIRE(e[1] == Catch::Approx(std::cos(1.0)).margin(1e-15));
    REQUIRE(e[2] == Catch::Approx(std::sin(f1)).margin(1e-15));
    REQUIRE(e[3] == Catch::Approx(std::cos(f1)).margin(1e-15));
  }

  SECTION("odd dim is a configuration error") {
    REQUIRE_THROWS_AS(sinusoidal_embedding(1.0, 5), ConfigError);
  }
}

TEST_CASE("checkpoint container round trips bit-exactly", "[ndmath]") {
  Rng rng(404);
  MlpNetwork net = random_net({6, 16, 16, 2}, true, rng);
  AdamState st = AdamState::like(net, 1e-3);
  // push the optimizer off its initial state
  MlpGrads g = MlpGrads::like(net);
  g.zero();
  for (auto& w : g.weights)
    for (double& v : w.flat()) v = rng.normal();
  adam_step(net, g, st);

  Checkpoint ck;
  ck.put_network("score", net);
  ck.put_adam("score", st);
  ck.put_scalar("temperature", 0.05);
  ck.put_int("step", 12345);
  ck.put_string("env", "gmm");

  auto path = std::filesystem::temp_directory_path() / "dqs_ckpt_test.bin";
  ck.save(path.string());
  Checkpoint rd = Checkpoint::load(path.string());

  MlpNetwork net2 = rd.get_network("score");
  REQUIRE(net2.layer_dims == net.layer_dims);
  REQUIRE(net2.skip_connections == net.skip_connections);
  for (int l = 0; l < net.num_layers(); ++l) {
    REQUIRE(std::memcmp(net2.weights[l].data(), net.weights[l].data(),
                        net.weights[l].size() * sizeof(double)) == 0);
    REQUIRE(std::memcmp(net2.biases[l].data(), net.biases[l].data(),
                        net.biases[l].size() * sizeof(double)) == 0);
  }
  AdamState st2 = rd.get_adam("score");
  REQUIRE(st2.step_count == st.step_count);
  REQUIRE(st2.learning_rate == st.learning_rate);
  for (std::size_t p = 0; p < st.first_moment.size(); ++p)
    REQUIRE(std::memcmp(st2.first_moment[p].data(), st.first_moment[p].data(),
                        st.first_moment[p].size() * sizeof(double)) == 0);
  REQUIRE(rd.get_scalar("temperature") == 0.05);
  REQUIRE(rd.get_int("step") == 12345);
  REQUIRE(rd.get_string("env") == "gmm");

  SECTION("corruption is detected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(24);
    char junk = 0x5a;
    f.write(&junk, 1);
    f.close();
    REQUIRE_THROWS_AS(Checkpoint::load(path.string()), ChecksumError);
  }
  std::filesystem::remove(path);
}
