#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dqs/array.hpp"
#include "dqs/checkpoint.hpp"  // crc32
#include "dqs/errors.hpp"
#include "dqs/rng.hpp"

namespace dqs {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

struct StepResult {
  DenseArray next_obs;
  double reward = 0.0;
  bool terminal = false;      // true only when bootstrapping must stop
  bool episode_end = false;   // horizon reached (or terminal)
  DenseArray executed_action; // action after env-side normalization/clamping
};

// Environment contract: reset -> observation; step(action) -> next
// observation, reward, terminal flag. Both built-in tasks have fixed
// horizons treated as non-terminal truncation, so `terminal` stays false
// and bootstrapping continues across the time limit.
class Env {
 public:
  virtual ~Env() = default;
  virtual int obs_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual DenseArray action_bound() const = 0;
  virtual DenseArray reset(Rng& rng) = 0;
  virtual StepResult step(const DenseArray& action, Rng& rng) = 0;
  // Seed-phase exploration action, uniform over this env's action set.
  virtual DenseArray uniform_random_action(Rng& rng) const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
  virtual void position(double& x, double& y) const = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// 2-D navigation over a 40-mode Gaussian mixture: unit-length steps, reward
// is the mixture log-density at the new position.

struct GmmParams {
  int n_modes = 40;
  double arena_half = 40.0;      // means drawn uniformly in [-40, 40]^2
  double mode_std = 1.0;         // shared isotropic unit variance
  int horizon = 100;
  double step_size = 1.0;
  std::uint64_t means_seed = 7240;  // fixed; regenerating yields the shipped mixture
};

class GmmNavEnv final : public Env {
 public:
  explicit GmmNavEnv(GmmParams params = {}) : params_(params), means_({params.n_modes, 2}) {
    Rng gen(params_.means_seed);
    for (int k = 0; k < params_.n_modes; ++k) {
      means_.at(k, 0) = gen.uniform(-params_.arena_half, params_.arena_half);
      means_.at(k, 1) = gen.uniform(-params_.arena_half, params_.arena_half);
    }
  }

  int obs_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  DenseArray action_bound() const override { return DenseArray::vector({1.0, 1.0}); }
  std::string name() const override { return "gmm"; }

  DenseArray reset(Rng&) override {
    x_ = 0.0;
    y_ = 0.0;
    steps_ = 0;
    return observation();
  }

  StepResult step(const DenseArray& action, Rng& rng) override {
    if (action.size() != 2) throw DimensionError("GmmNavEnv: action must be 2-D");
    double ax = action[0], ay = action[1];
    double norm = std::sqrt(ax * ax + ay * ay);
    if (norm < 1e-12) {
      // zero-vector actions are replaced by a uniform random unit vector
      double ang = rng.uniform(0.0, kTwoPi);
      ax = std::cos(ang);
      ay = std::sin(ang);
    } else {
      ax /= norm;
      ay /= norm;
    }
    x_ += params_.step_size * ax;
    y_ += params_.step_size * ay;
    steps_ += 1;
    StepResult r;
    r.reward = log_density(x_, y_);
    r.terminal = false;  // fixed horizon, truncation bootstraps
    r.episode_end = steps_ >= params_.horizon;
    r.next_obs = observation();
    r.executed_action = DenseArray::vector({ax, ay});
    return r;
  }

  DenseArray uniform_random_action(Rng& rng) const override {
    double ang = rng.uniform(0.0, kTwoPi);
    return DenseArray::vector({std::cos(ang), std::sin(ang)});
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<GmmNavEnv>(*this); }

  void position(double& x, double& y) const override {
    x = x_;
    y = y_;
  }

  // log of the equal-weight mixture density with unit component variance
  double log_density(double x, double y) const {
    double best = -1e300;
    logs_.assign(static_cast<std::size_t>(params_.n_modes), 0.0);
    double norm_const =
        -std::log(static_cast<double>(params_.n_modes)) - std::log(kTwoPi) -
        2.0 * std::log(params_.mode_std);
    for (int k = 0; k < params_.n_modes; ++k) {
      double dx = x - means_.at(k, 0), dy = y - means_.at(k, 1);
      double l = norm_const - 0.5 * (dx * dx + dy * dy) / (params_.mode_std * params_.mode_std);
      logs_[static_cast<std::size_t>(k)] = l;
      best = std::max(best, l);
    }
    double acc = 0.0;
    for (double l : logs_) acc += std::exp(l - best);
    return best + std::log(acc);
  }

  const DenseArray& means() const { return means_; }
  const GmmParams& params() const { return params_; }

  DenseArray sample_ground_truth(int n, Rng& rng) const {
    DenseArray out({n, 2});
    for (int i = 0; i < n; ++i) {
      int k = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(params_.n_modes)));
      out.at(i, 0) = means_.at(k, 0) + params_.mode_std * rng.normal();
      out.at(i, 1) = means_.at(k, 1) + params_.mode_std * rng.normal();
    }
    return out;
  }

  // Observations are positions scaled into roughly [-1, 1] for the networks.
  DenseArray observation() const {
    return DenseArray::vector({x_ / params_.arena_half, y_ / params_.arena_half});
  }

 private:
  GmmParams params_;
  DenseArray means_;
  double x_ = 0.0, y_ = 0.0;
  int steps_ = 0;
  mutable std::vector<double> logs_;
};

// ---------------------------------------------------------------------------
// Multi-goal maze: a point ball pushed by a bounded force through a fixed
// wall layout with two corridors to the top-left goal and one to the
// bottom-right goal. Binary reward inside a goal radius; the ball may park
// there until the horizon (reaching a goal does not stop bootstrapping).

struct MazeParams {
  double dt = 0.05;
  double damping = 0.99;    // velocity retention per step
  double f_max = 1.0;       // per-component force bound
  double v_max = 2.5;       // speed cap, keeps per-step motion << cell size
  double goal_radius = 0.5;
  int horizon = 300;
  double start_std = 0.1;   // start position noise around the S cell
  double cell = 1.0;        // metres per grid cell
};

// '#' wall, '.' free, 'G' goal, 'S' start-region center
inline constexpr const char* kDefaultMazeLayout =
    "#########\n"
    "#G.....##\n"
    "#.##.##.#\n"
    "#.#...#.#\n"
    "#...S...#\n"
    "#.#...#.#\n"
    "#.#####.#\n"
    "#.#####G#\n"
    "#########\n";

class MultiGoalMazeEnv final : public Env {
 public:
  explicit MultiGoalMazeEnv(MazeParams params = {}, std::string layout = kDefaultMazeLayout)
      : params_(params), layout_text_(std::move(layout)) {
    parse_layout();
  }

  static MultiGoalMazeEnv from_layout_file(const std::string& path, MazeParams params = {}) {
    std::ifstream f(path);
    if (!f) throw IoError("maze layout: cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return MultiGoalMazeEnv(params, ss.str());
  }

  int obs_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  DenseArray action_bound() const override {
    return DenseArray::vector({params_.f_max, params_.f_max});
  }
  std::string name() const override { return "maze"; }

  DenseArray reset(Rng& rng) override {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      double x = start_x_ + params_.start_std * rng.normal();
      double y = start_y_ + params_.start_std * rng.normal();
      if (!is_wall(x, y)) {
        x_ = x;
        y_ = y;
        vx_ = 0.0;
        vy_ = 0.0;
        steps_ = 0;
        return observation();
      }
    }
    throw DomainError("maze reset: start region is walled off");
  }

  StepResult step(const DenseArray& action, Rng&) override {
    if (action.size() != 2) throw DimensionError("MultiGoalMazeEnv: action must be 2-D");
    double fx = std::clamp(action[0], -params_.f_max, params_.f_max);
    double fy = std::clamp(action[1], -params_.f_max, params_.f_max);
    // semi-implicit Euler with velocity damping and a speed cap
    vx_ = params_.damping * (vx_ + fx * params_.dt);
    vy_ = params_.damping * (vy_ + fy * params_.dt);
    double speed = std::sqrt(vx_ * vx_ + vy_ * vy_);
    if (speed > params_.v_max) {
      vx_ *= params_.v_max / speed;
      vy_ *= params_.v_max / speed;
    }
    move_with_collisions();
    steps_ += 1;

    StepResult r;
    r.reward = reward_at(x_, y_);
    r.terminal = false;  // fixed horizon, truncation bootstraps
    r.episode_end = steps_ >= params_.horizon;
    r.next_obs = observation();
    r.executed_action = DenseArray::vector({fx, fy});
    return r;
  }

  DenseArray uniform_random_action(Rng& rng) const override {
    return DenseArray::vector({rng.uniform(-params_.f_max, params_.f_max),
                               rng.uniform(-params_.f_max, params_.f_max)});
  }

  std::unique_ptr<Env> clone() const override {
    return std::make_unique<MultiGoalMazeEnv>(*this);
  }

  void position(double& x, double& y) const override {
    x = x_;
    y = y_;
  }

  void velocity(double& vx, double& vy) const {
    vx = vx_;
    vy = vy_;
  }

  double reward_at(double x, double y) const {
    for (const auto& g : goals_) {
      double dx = x - g.first, dy = y - g.second;
      if (dx * dx + dy * dy <= params_.goal_radius * params_.goal_radius) return 1.0;
    }
    return 0.0;
  }

  // index of the goal whose radius contains (x, y), or -1
  int goal_at(double x, double y) const {
    for (std::size_t i = 0; i < goals_.size(); ++i) {
      double dx = x - goals_[i].first, dy = y - goals_[i].second;
      if (dx * dx + dy * dy <= params_.goal_radius * params_.goal_radius)
        return static_cast<int>(i);
    }
    return -1;
  }

  const std::vector<std::pair<double, double>>& goals() const { return goals_; }
  const MazeParams& params() const { return params_; }
  const std::string& layout_text() const { return layout_text_; }

  std::uint32_t layout_checksum() const {
    return detail::crc32(reinterpret_cast<const unsigned char*>(layout_text_.data()),
                         layout_text_.size());
  }

  bool is_wall(double x, double y) const {
    int c = col_of(x), r = row_of(y);
    if (c < 0 || c >= cols_ || r < 0 || r >= rows_) return true;
    return grid_[static_cast<std::size_t>(r) * cols_ + c] == '#';
  }

  DenseArray observation() const {
    return DenseArray::vector(
        {x_ / half_extent_x_, y_ / half_extent_y_, vx_ / params_.v_max, vy_ / params_.v_max});
  }

 private:
  void parse_layout() {
    std::istringstream ss(layout_text_);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(ss, line)) {
      if (!line.empty()) rows.push_back(line);
    }
    if (rows.size() < 3) throw ConfigError("maze layout: too few rows");
    rows_ = static_cast<int>(rows.size());
    cols_ = static_cast<int>(rows[0].size());
    bool have_start = false;
    grid_.clear();
    for (int r = 0; r < rows_; ++r) {
      if (static_cast<int>(rows[static_cast<std::size_t>(r)].size()) != cols_)
        throw ConfigError("maze layout: rows must have equal length");
      for (int c = 0; c < cols_; ++c) {
        char ch = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        if (ch != '#' && ch != '.' && ch != 'G' && ch != 'S')
          throw ConfigError("maze layout: unknown glyph");
        if (ch == 'G') goals_.emplace_back(cell_x(c), cell_y(r));
        if (ch == 'S') {
          if (have_start) throw ConfigError("maze layout: multiple start cells");
          have_start = true;
          start_x_ = cell_x(c);
          start_y_ = cell_y(r);
        }
        grid_.push_back(ch == '#' ? '#' : '.');
      }
    }
    if (!have_start) throw ConfigError("maze layout: missing start cell");
    if (goals_.empty()) throw ConfigError("maze layout: missing goal cells");
    half_extent_x_ = 0.5 * cols_ * params_.cell;
    half_extent_y_ = 0.5 * rows_ * params_.cell;
  }

  double cell_x(int c) const { return (c - 0.5 * (cols_ - 1)) * params_.cell; }
  double cell_y(int r) const { return (0.5 * (rows_ - 1) - r) * params_.cell; }
  int col_of(double x) const {
    return static_cast<int>(std::lround(x / params_.cell + 0.5 * (cols_ - 1)));
  }
  int row_of(double y) const {
    return static_cast<int>(std::lround(0.5 * (rows_ - 1) - y / params_.cell));
  }

  // Axis-separated move: clamp to the wall face and zero the normal
  // velocity component on contact. Per-step motion is far below the cell
  // size, so only the adjacent cell can be entered.
  void move_with_collisions() {
    const double eps = 1e-9;
    double nx = x_ + vx_ * params_.dt;
    if (is_wall(nx, y_)) {
      int wall_col = col_of(nx);
      double face = cell_x(wall_col) + (vx_ > 0 ? -0.5 : 0.5) * params_.cell;
      nx = face + (vx_ > 0 ? -eps : eps);
      if (is_wall(nx, y_)) nx = x_;  // cornered
      vx_ = 0.0;
    }
    double ny = y_ + vy_ * params_.dt;
    if (is_wall(nx, ny)) {
      int wall_row = row_of(ny);
      double face = cell_y(wall_row) + (vy_ > 0 ? -0.5 : 0.5) * params_.cell;
      ny = face + (vy_ > 0 ? -eps : eps);
      if (is_wall(nx, ny)) ny = y_;
      vy_ = 0.0;
    }
    x_ = nx;
    y_ = ny;
  }

  MazeParams params_;
  std::string layout_text_;
  std::vector<char> grid_;
  std::vector<std::pair<double, double>> goals_;
  int rows_ = 0, cols_ = 0;
  double start_x_ = 0.0, start_y_ = 0.0;
  double half_extent_x_ = 1.0, half_extent_y_ = 1.0;
  double x_ = 0.0, y_ = 0.0, vx_ = 0.0, vy_ = 0.0;
  int steps_ = 0;
};

inline std::unique_ptr<Env> make_env(const std::string& name, const std::string& maze_layout_path) {
  if (name == "gmm") return std::make_unique<GmmNavEnv>();
  if (name == "maze") {
    if (!maze_layout_path.empty())
      return std::make_unique<MultiGoalMazeEnv>(
          MultiGoalMazeEnv::from_layout_file(maze_layout_path));
    return std::make_unique<MultiGoalMazeEnv>();
  }
  throw ConfigError("unknown environment: " + name);
}

}  // namespace dqs
