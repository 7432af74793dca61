#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/critic.hpp"
#include "dqs/errors.hpp"

namespace dqs {

struct EvalReport {
  double mmd = std::numeric_limits<double>::quiet_NaN();
  double mode_coverage = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_goal_success;
  double mean_return = 0.0;
  int episodes = 0;
  std::string sample_dump;  // path of the terminal-sample dump, if written
};

// Unbiased squared-MMD estimate with an RBF kernel whose bandwidth is the
// median pairwise distance of the pooled sets (floored at 1e-6); the
// estimate is clipped at 0 before the square root.
inline double mmd(const DenseArray& X, const DenseArray& Y) {
  int m = X.rows(), n = Y.rows();
  if (m < 2 || n < 2) throw DomainError("mmd: need at least 2 samples per set");
  if (X.cols() != Y.cols()) throw DimensionError("mmd: sample dimension mismatch");
  int d = X.cols();

  auto sqdist = [d](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (int t = 0; t < d; ++t) {
      double diff = a[t] - b[t];
      s += diff * diff;
    }
    return s;
  };

  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(m + n) * (m + n - 1) / 2);
  auto row_of = [&](int i) { return i < m ? X.row(i) : Y.row(i - m); };
  for (int i = 0; i < m + n; ++i)
    for (int j = i + 1; j < m + n; ++j) d2.push_back(sqdist(row_of(i), row_of(j)));
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2), d2.end());
  double h = std::sqrt(d2[d2.size() / 2]);
  h = std::max(h, 1e-6);
  double inv = 1.0 / (2.0 * h * h);

  auto k = [&](std::span<const double> a, std::span<const double> b) {
    return std::exp(-sqdist(a, b) * inv);
  };

  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) kxx += k(X.row(i), X.row(j));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) kyy += k(Y.row(i), Y.row(j));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) kxy += k(X.row(i), Y.row(j));

  double mmd2 = 2.0 * kxx / (static_cast<double>(m) * (m - 1)) +
                2.0 * kyy / (static_cast<double>(n) * (n - 1)) -
                2.0 * kxy / (static_cast<double>(m) * n);
  return std::sqrt(std::max(0.0, mmd2));
}

// Fraction of mixture means with at least one sample within radius.
inline double mode_coverage(const DenseArray& samples, const DenseArray& means, double radius) {
  if (!(radius > 0.0)) throw DomainError("mode_coverage: radius must be positive");
  if (samples.size() == 0 || samples.rows() == 0) return 0.0;
  if (samples.cols() != means.cols()) throw DimensionError("mode_coverage: dimension mismatch");
  int covered = 0;
  double r2 = radius * radius;
  for (int k = 0; k < means.rows(); ++k) {
    for (int i = 0; i < samples.rows(); ++i) {
      double s = 0.0;
      for (int t = 0; t < samples.cols(); ++t) {
        double diff = samples.at(i, t) - means.at(k, t);
        s += diff * diff;
      }
      if (s <= r2) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / means.rows();
}

struct ActionBox {
  double lo_x, hi_x, lo_y, hi_y;
};

// Riemann estimate of log integral exp(f(a)) da over a 2-D box using cell
// midpoints: logsumexp over the grid plus the log cell area.
inline double log_partition_over_box(const std::function<double(double, double)>& f,
                                     const ActionBox& box, int n_per_axis) {
  if (n_per_axis < 8) throw DomainError("log_partition: n_per_axis must be >= 8");
  double dx = (box.hi_x - box.lo_x) / n_per_axis;
  double dy = (box.hi_y - box.lo_y) / n_per_axis;
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(n_per_axis) * n_per_axis);
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_per_axis; ++i) {
    double ax = box.lo_x + (i + 0.5) * dx;
    for (int j = 0; j < n_per_axis; ++j) {
      double ay = box.lo_y + (j + 0.5) * dy;
      double v = f(ax, ay);
      vals.push_back(v);
      best = std::max(best, v);
    }
  }
  if (!std::isfinite(best)) throw NumericError("log_partition: no finite grid values");
  double acc = 0.0;
  for (double v : vals) acc += std::exp(v - best);
  return best + std::log(acc) + std::log(dx * dy);
}

// log Z(s) = log integral exp(min Q(s,a)) da, 2-D action spaces only.
inline double log_partition_grid(const QEnsemble& q, const DenseArray& state, const ActionBox& box,
                                 int n_per_axis) {
  if (q.action_dim != 2)
    throw UnsupportedError("log_partition_grid: only 2-D action spaces are supported");
  DenseArray a({2});
  return log_partition_over_box(
      [&](double ax, double ay) {
        a.data()[0] = ax;
        a.data()[1] = ay;
        return min_q(q, state, a, /*use_targets=*/false);
      },
      box, n_per_axis);
}

// --- metrics serialization ---------------------------------------------------

struct MetricsRow {
  long long step = 0;
  double episode_return = 0.0;
  double critic_loss = 0.0;
  double policy_loss = 0.0;
  double temperature = 0.0;
  double mmd = std::numeric_limits<double>::quiet_NaN();
  double mode_coverage = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kMetricsHeader =
    "step,episode_return,critic_loss,policy_loss,temperature,mmd,mode_coverage";

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

// Appends rows in the run-metrics schema; flushes after every append so
// concurrent readers see complete rows.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : path_(path) {
    bool fresh = true;
    {
      std::ifstream probe(path);
      fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
    }
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("metrics: cannot open " + path);
    if (fresh) out_ << kMetricsHeader << "\n";
    out_.flush();
  }

  void append(const MetricsRow& r) {
    out_ << r.step << ',' << detail::fmt_double(r.episode_return) << ','
         << detail::fmt_double(r.critic_loss) << ',' << detail::fmt_double(r.policy_loss) << ','
         << detail::fmt_double(r.temperature) << ',' << detail::fmt_double(r.mmd) << ','
         << detail::fmt_double(r.mode_coverage) << "\n";
    out_.flush();
    if (!out_) throw IoError("metrics: write failed on " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("metrics: cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("metrics: empty file " + path);
  if (line != kMetricsHeader) throw IoError("metrics: unexpected header in " + path);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    MetricsRow r;
    auto next = [&]() {
      if (!std::getline(ss, field, ',')) throw IoError("metrics: short row in " + path);
      return std::stod(field);
    };
    std::getline(ss, field, ',');
    r.step = std::stoll(field);
    r.episode_return = next();
    r.critic_loss = next();
    r.policy_loss = next();
    r.temperature = next();
    r.mmd = next();
    r.mode_coverage = next();
    rows.push_back(r);
  }
  return rows;
}

}  // namespace dqs
