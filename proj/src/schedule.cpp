#include "trajdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trajdiff/errors.hpp"
#include "trajdiff/rng.hpp"

namespace trajdiff::diffusion {

namespace {

double cosine_f(double step, double total) {
  constexpr double kOffset = 0.008;
  const double c = std::cos(((step / total + kOffset) / (1.0 + kOffset)) * std::numbers::pi / 2.0);
  return c * c;
}

void check_step(int t, const Schedule& sched) {
  if (t < 0 || t >= sched.total_steps) throw InvalidCounts("diffusion step out of range");
}

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("diffusion operands must share shape");
}

}  // namespace

Schedule build_schedule(int total_steps, int sampling_steps) {
  if (total_steps < 1 || sampling_steps < 1 || sampling_steps > total_steps)
    throw InvalidCounts("need 1 <= S <= T");

  Schedule s;
  s.total_steps = total_steps;
  s.alpha_bar.resize(total_steps);
  s.beta.resize(total_steps);
  s.snr.resize(total_steps);
  s.p2_weight.resize(total_steps);

  const double f0 = cosine_f(0.0, total_steps);
  double prev_ab = 1.0;
  for (int t = 0; t < total_steps; ++t) {
    const double ab = cosine_f(t + 1.0, total_steps) / f0;
    s.alpha_bar(t) = ab;
    s.beta(t) = std::clamp(1.0 - ab / prev_ab, 1e-8, 0.999);
    s.snr(t) = ab / (1.0 - ab);
    s.p2_weight(t) = 1.0 / (1.0 + s.snr(t));
    prev_ab = ab;
  }

  if (sampling_steps == 1) {
    s.sampling_steps = {total_steps - 1};
  } else {
    for (int i = 0; i < sampling_steps; ++i) {
      const double pos = static_cast<double>(total_steps - 1) * i / (sampling_steps - 1);
      const int idx = static_cast<int>(std::lround(pos));
      if (s.sampling_steps.empty() || s.sampling_steps.back() != idx) s.sampling_steps.push_back(idx);
    }
    if (s.sampling_steps.back() != total_steps - 1) s.sampling_steps.push_back(total_steps - 1);
  }
  return s;
}

Eigen::MatrixXd q_sample(const Eigen::MatrixXd& y0, int t, const Eigen::MatrixXd& eps,
                         const Schedule& sched) {
  check_step(t, sched);
  check_same_shape(y0, eps);
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * y0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::MatrixXd v_target(const Eigen::MatrixXd& y0, const Eigen::MatrixXd& eps, int t,
                         const Schedule& sched) {
  check_step(t, sched);
  check_same_shape(y0, eps);
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * eps - std::sqrt(1.0 - ab) * y0;
}

Eigen::MatrixXd reconstruct_y0(const Eigen::MatrixXd& y_t, const Eigen::MatrixXd& v, int t,
                               const Schedule& sched) {
  check_step(t, sched);
  check_same_shape(y_t, v);
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * y_t - std::sqrt(1.0 - ab) * v;
}

Eigen::MatrixXd ddim_sample(const Denoiser& denoise, const Schedule& sched, Eigen::Index rows,
                            Eigen::Index cols, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::MatrixXd y(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) y(i, j) = rng.next_gaussian();

  const auto& grid = sched.sampling_steps;
  for (int j = static_cast<int>(grid.size()) - 1; j >= 0; --j) {
    const int t = grid[static_cast<std::size_t>(j)];
    const Eigen::MatrixXd v = denoise(y, t);
    check_same_shape(y, v);
    const double ab = sched.alpha_bar(t);
    const Eigen::MatrixXd y0_hat = std::sqrt(ab) * y - std::sqrt(1.0 - ab) * v;
    const Eigen::MatrixXd eps_hat = (y - std::sqrt(ab) * y0_hat) / std::sqrt(1.0 - ab);
    const double ab_prev = j > 0 ? sched.alpha_bar(grid[static_cast<std::size_t>(j - 1)]) : 1.0;
    y = std::sqrt(ab_prev) * y0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
  }
  return y;
}

Eigen::VectorXd horizon_weights(int horizon) {
  if (horizon < 1) throw InvalidCounts("horizon must be >= 1");
  Eigen::VectorXd w(horizon);
  if (horizon == 1) {
    w(0) = 1.0;
    return w;
  }
  for (int k = 0; k < horizon; ++k) w(k) = 1.0 + 2.0 * k / (horizon - 1.0);
  return w;
}

}  // namespace trajdiff::diffusion
