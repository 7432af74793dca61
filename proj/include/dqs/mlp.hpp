#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/errors.hpp"
#include "dqs/rng.hpp"

namespace dqs {

// Fully-connected network: ReLU on hidden layers, identity output.
// Weight matrices are stored (fan_in x fan_out) row-major so both the
// forward pass and the parameter-gradient pass run with unit stride.
struct MlpNetwork {
  std::vector<int> layer_dims;       // input, hidden..., output
  std::vector<DenseArray> weights;   // layer l: {layer_dims[l], layer_dims[l+1]}
  std::vector<DenseArray> biases;    // layer l: {layer_dims[l+1]}
  bool skip_connections = false;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }

  // Residual add between equal-width hidden layers only.
  bool skip_at(int layer) const {
    return skip_connections && layer >= 1 && layer < num_layers() - 1 &&
           layer_dims[layer] == layer_dims[layer + 1];
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
  }
};

// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases.
inline MlpNetwork make_mlp(std::vector<int> layer_dims, bool skip_connections, Rng& rng) {
  if (layer_dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
  MlpNetwork net;
  net.layer_dims = std::move(layer_dims);
  net.skip_connections = skip_connections;
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    int in = net.layer_dims[l], out = net.layer_dims[l + 1];
    DenseArray w({in, out});
    double bound = std::sqrt(1.0 / in);
    for (double& v : w.flat()) v = rng.uniform(-bound, bound);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(std::vector<int>{out});
  }
  return net;
}

struct MlpGrads {
  std::vector<DenseArray> weights;
  std::vector<DenseArray> biases;

  static MlpGrads like(const MlpNetwork& net) {
    MlpGrads g;
    for (const auto& w : net.weights) g.weights.emplace_back(w.shape());
    for (const auto& b : net.biases) g.biases.emplace_back(b.shape());
    return g;
  }

  void zero() {
    for (auto& w : weights) w.fill(0.0);
    for (auto& b : biases) b.fill(0.0);
  }

  void add(const MlpGrads& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      detail::axpy(1.0, other.weights[l].flat(), weights[l].flat());
      detail::axpy(1.0, other.biases[l].flat(), biases[l].flat());
    }
  }
};

// Reusable buffers for batched evaluation; activations are kept for the
// backward pass.
struct MlpWorkspace {
  std::vector<DenseArray> z;  // pre-activations per layer, n x dims[l+1]
  std::vector<DenseArray> h;  // activations, n x dims[l]; h[0] = input, h[L] = output
  DenseArray wt;              // transposed-weight scratch
  DenseArray ga, gb, dz;      // backward scratch
  int batch = 0;

  void prepare(const MlpNetwork& net, int n) {
    batch = n;
    std::size_t layers = net.weights.size();
    z.resize(layers);
    h.resize(layers + 1);
    for (std::size_t l = 0; l < layers; ++l) {
      resize2d(z[l], n, net.layer_dims[l + 1]);
      resize2d(h[l], n, net.layer_dims[l]);
    }
    resize2d(h[layers], n, net.layer_dims.back());
    int maxd = 0;
    for (int d : net.layer_dims) maxd = std::max(maxd, d);
    resize2d(ga, n, maxd);
    resize2d(gb, n, maxd);
    resize2d(dz, n, maxd);
  }

  static void resize2d(DenseArray& a, int r, int c) {
    if (a.rank() == 2 && a.dim(0) == r && a.dim(1) == c) return;
    a = DenseArray({r, c});
  }
};

namespace detail {

inline void add_bias_rows(DenseArray& m, const DenseArray& bias) {
  for (int i = 0; i < m.rows(); ++i) axpy(1.0, bias.flat(), m.row(i));
}

inline void relu_into(const DenseArray& z, DenseArray& h) {
  const double* zs = z.data();
  double* hs = h.data();
  for (std::size_t i = 0; i < z.size(); ++i) hs[i] = zs[i] > 0.0 ? zs[i] : 0.0;
}

}  // namespace detail

// --- first-layer building blocks -------------------------------------------
//
// Hot paths assemble the first pre-activation z1 from column blocks: fixed
// blocks (state, embeddings) are computed once and reused while only the
// varying block (the action) is recomputed per evaluation.

inline void first_layer_bias(const MlpNetwork& net, std::span<double> z1) {
  const DenseArray& b = net.biases[0];
  for (std::size_t j = 0; j < z1.size(); ++j) z1[j] = b[j];
}

// z1 += sum_t vals[t] * W0.row(col_offset + t)
inline void first_layer_accum(const MlpNetwork& net, std::span<const double> vals, int col_offset,
                              std::span<double> z1) {
  const DenseArray& w = net.weights[0];
  for (std::size_t t = 0; t < vals.size(); ++t) {
    double v = vals[t];
    if (v == 0.0) continue;
    detail::axpy(v, w.row(col_offset + static_cast<int>(t)), z1);
  }
}

// Continues the forward pass given ws.z[0] already assembled for ws.batch
// rows. Returns the output matrix, kept alive inside ws.
inline const DenseArray& mlp_forward_from_z1(const MlpNetwork& net, MlpWorkspace& ws) {
  int L = net.num_layers();
  int n = ws.batch;
  for (int l = 0; l < L; ++l) {
    if (l > 0) {
      detail::matmul(ws.h[l].data(), net.weights[l].data(), ws.z[l].data(), n,
                     net.layer_dims[l + 1], net.layer_dims[l]);
      detail::add_bias_rows(ws.z[l], net.biases[l]);
    }
    if (l == L - 1) {
      std::copy(ws.z[l].flat().begin(), ws.z[l].flat().end(), ws.h[L].flat().begin());
    } else {
      detail::relu_into(ws.z[l], ws.h[l + 1]);
      if (net.skip_at(l)) detail::axpy(1.0, ws.h[l].flat(), ws.h[l + 1].flat());
    }
  }
  return ws.h[L];
}

// Batched forward: X is n x input_dim. Deterministic; leaves activations in
// ws for a subsequent backward call.
inline const DenseArray& mlp_forward_batch(const MlpNetwork& net, const DenseArray& X,
                                           MlpWorkspace& ws) {
  if (X.cols() != net.input_dim()) throw DimensionError("mlp_forward_batch: input width mismatch");
  int n = X.rows();
  ws.prepare(net, n);
  std::copy(X.flat().begin(), X.flat().end(), ws.h[0].flat().begin());
  detail::matmul(ws.h[0].data(), net.weights[0].data(), ws.z[0].data(), n, net.layer_dims[1],
                 net.layer_dims[0]);
  detail::add_bias_rows(ws.z[0], net.biases[0]);
  return mlp_forward_from_z1(net, ws);
}

namespace detail {

// Shared reverse sweep. Computes, for loss L = <output, cotangent>:
//   param_grads  += dL/dW, dL/db          (when param_grads != nullptr)
//   input_grad    = dL/dX                 (when input_grad  != nullptr)
//   dz1           = dL/dz[0]              (when dz1         != nullptr)
// The dz1 form stops above the first layer so column-block callers can map
// gradients onto their own input blocks.
inline void mlp_backward_sweep(const MlpNetwork& net, MlpWorkspace& ws, const DenseArray& cotangent,
                               MlpGrads* param_grads, DenseArray* input_grad, DenseArray* dz1) {
  int L = net.num_layers();
  int n = ws.batch;
  if (cotangent.rows() != n || cotangent.cols() != net.output_dim())
    throw DimensionError("mlp_backward: cotangent shape mismatch");

  // ga holds dL/dh[l+1] for the layer currently processed; gb receives
  // dL/dh[l]. Rows are strided by each buffer's own width (maxd).
  for (int i = 0; i < n; ++i)
    std::copy_n(cotangent.row(i).data(), net.output_dim(), ws.ga.row(i).data());

  for (int l = L - 1; l >= 0; --l) {
    int out = net.layer_dims[l + 1], in = net.layer_dims[l];
    // dz = dL/dz[l]
    if (l == L - 1) {
      for (int i = 0; i < n; ++i) std::copy_n(ws.ga.row(i).data(), out, ws.dz.row(i).data());
    } else {
      for (int i = 0; i < n; ++i) {
        const double* zr = ws.z[l].row(i).data();
        const double* gr = ws.ga.row(i).data();
        double* dr = ws.dz.row(i).data();
        for (int j = 0; j < out; ++j) dr[j] = zr[j] > 0.0 ? gr[j] : 0.0;
      }
    }
    if (param_grads) {
      DenseArray& dW = param_grads->weights[l];
      DenseArray& db = param_grads->biases[l];
      for (int i = 0; i < n; ++i) {
        std::span<const double> hi = ws.h[l].row(i);
        std::span<const double> di{ws.dz.row(i).data(), static_cast<std::size_t>(out)};
        for (int t = 0; t < in; ++t) {
          double hv = hi[t];
          if (hv != 0.0) detail::axpy(hv, di, dW.row(t));
        }
        detail::axpy(1.0, di, db.flat());
      }
    }
    if (l == 0) {
      if (dz1) {
        MlpWorkspace::resize2d(*dz1, n, out);
        for (int i = 0; i < n; ++i) std::copy_n(ws.dz.row(i).data(), out, dz1->row(i).data());
      }
      if (input_grad) {
        MlpWorkspace::resize2d(*input_grad, n, in);
        MlpWorkspace::resize2d(ws.wt, out, in);
        detail::transpose(net.weights[0].data(), ws.wt.data(), in, out);
        for (int i = 0; i < n; ++i) {
          std::span<double> gi = input_grad->row(i);
          std::fill(gi.begin(), gi.end(), 0.0);
          const double* di = ws.dz.row(i).data();
          for (int j = 0; j < out; ++j)
            if (di[j] != 0.0) detail::axpy(di[j], ws.wt.row(j), gi);
        }
      }
      return;
    }
    // dL/dh[l] = dz @ W[l]^T, plus the identity branch when layer l is a
    // residual block (equal widths guaranteed by skip_at).
    MlpWorkspace::resize2d(ws.wt, out, in);
    detail::transpose(net.weights[l].data(), ws.wt.data(), in, out);
    bool carry = net.skip_at(l);
    for (int i = 0; i < n; ++i) {
      double* gi = ws.gb.row(i).data();
      if (carry) {
        std::copy_n(ws.ga.row(i).data(), in, gi);
      } else {
        std::fill_n(gi, in, 0.0);
      }
      const double* di = ws.dz.row(i).data();
      for (int j = 0; j < out; ++j)
        if (di[j] != 0.0) detail::axpy(di[j], ws.wt.row(j), std::span<double>(gi, static_cast<std::size_t>(in)));
    }
    std::swap(ws.ga, ws.gb);
  }
}

}  // namespace detail

inline void mlp_backward_batch(const MlpNetwork& net, MlpWorkspace& ws, const DenseArray& cotangent,
                               MlpGrads* param_grads, DenseArray* input_grad) {
  detail::mlp_backward_sweep(net, ws, cotangent, param_grads, input_grad, nullptr);
}

inline void mlp_backward_to_z1(const MlpNetwork& net, MlpWorkspace& ws, const DenseArray& cotangent,
                               DenseArray& dz1) {
  detail::mlp_backward_sweep(net, ws, cotangent, nullptr, nullptr, &dz1);
}

// --- spec-level single-sample operations ------------------------------------

inline DenseArray forward(const MlpNetwork& net, const DenseArray& input) {
  if (input.rank() != 1 || input.dim(0) != net.input_dim())
    throw DimensionError("forward: input width does not match network input dim");
  MlpWorkspace ws;
  DenseArray x({1, net.input_dim()});
  std::copy(input.flat().begin(), input.flat().end(), x.flat().begin());
  const DenseArray& y = mlp_forward_batch(net, x, ws);
  DenseArray out({net.output_dim()});
  std::copy(y.flat().begin(), y.flat().end(), out.flat().begin());
  return out;
}

struct GradientResult {
  MlpGrads param_grads;
  DenseArray input_grad;
};

inline GradientResult gradients(const MlpNetwork& net, const DenseArray& input,
                                const DenseArray& output_cotangent) {
  if (input.rank() != 1 || input.dim(0) != net.input_dim())
    throw DimensionError("gradients: input width does not match network input dim");
  if (output_cotangent.rank() != 1 || output_cotangent.dim(0) != net.output_dim())
    throw DimensionError("gradients: cotangent width does not match network output dim");
  MlpWorkspace ws;
  DenseArray x({1, net.input_dim()});
  std::copy(input.flat().begin(), input.flat().end(), x.flat().begin());
  mlp_forward_batch(net, x, ws);
  DenseArray cot({1, net.output_dim()});
  std::copy(output_cotangent.flat().begin(), output_cotangent.flat().end(), cot.flat().begin());
  GradientResult res;
  res.param_grads = MlpGrads::like(net);
  res.param_grads.zero();
  DenseArray ig;
  mlp_backward_batch(net, ws, cot, &res.param_grads, &ig);
  res.input_grad = DenseArray({net.input_dim()});
  std::copy(ig.flat().begin(), ig.flat().end(), res.input_grad.flat().begin());
  return res;
}

}  // namespace dqs
