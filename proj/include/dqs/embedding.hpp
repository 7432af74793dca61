#pragma once

#include <cmath>
#include <span>

#include "dqs/array.hpp"
#include "dqs/errors.hpp"

namespace dqs {

// Interleaved sin/cos features with geometric frequencies:
//   out[2k]   = sin(value * 10000^(-k/(dim/2)))
//   out[2k+1] = cos(value * 10000^(-k/(dim/2)))
inline void sinusoidal_embedding_into(double value, std::span<double> out) {
  if (out.empty() || out.size() % 2 != 0)
    throw ConfigError("sinusoidal_embedding: dim must be positive and even");
  std::size_t half = out.size() / 2;
  for (std::size_t k = 0; k < half; ++k) {
    double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    out[2 * k] = std::sin(value * freq);
    out[2 * k + 1] = std::cos(value * freq);
  }
}

inline DenseArray sinusoidal_embedding(double value, int dim) {
  if (dim <= 0 || dim % 2 != 0)
    throw ConfigError("sinusoidal_embedding: dim must be positive and even");
  DenseArray out({dim});
  sinusoidal_embedding_into(value, out.flat());
  return out;
}

}  // namespace dqs
