#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace trajdiff::diffusion {

/// Precomputed diffusion tables. Cosine schedule with the standard s0 = 0.008
/// offset; beta clipped to [1e-8, 0.999]; p2 weighting (1 + SNR)⁻¹; DDIM step
/// grid of S distinct indices always containing T-1.
struct Schedule {
  int total_steps = 0;  // T
  Eigen::VectorXd alpha_bar;
  Eigen::VectorXd beta;
  Eigen::VectorXd snr;
  Eigen::VectorXd p2_weight;
  std::vector<int> sampling_steps;  // ascending
};

Schedule build_schedule(int total_steps, int sampling_steps);

/// y_t = √ᾱₜ y₀ + √(1-ᾱₜ) ε
Eigen::MatrixXd q_sample(const Eigen::MatrixXd& y0, int t, const Eigen::MatrixXd& eps,
                         const Schedule& sched);

/// v = √ᾱₜ ε − √(1-ᾱₜ) y₀
Eigen::MatrixXd v_target(const Eigen::MatrixXd& y0, const Eigen::MatrixXd& eps, int t,
                         const Schedule& sched);

/// ŷ₀ = √ᾱₜ y_t − √(1-ᾱₜ) v
Eigen::MatrixXd reconstruct_y0(const Eigen::MatrixXd& y_t, const Eigen::MatrixXd& v, int t,
                               const Schedule& sched);

using Denoiser = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& y_t, int t)>;

/// Deterministic DDIM (η = 0). Starts from seeded N(0, I) of shape rows x cols
/// and walks the step grid descending; conditioning is captured inside the
/// denoiser closure.
Eigen::MatrixXd ddim_sample(const Denoiser& denoise, const Schedule& sched, Eigen::Index rows,
                            Eigen::Index cols, std::uint64_t seed);

/// Per-step loss weights ramping linearly 1 → 3 across the horizon ([1] for H = 1).
Eigen::VectorXd horizon_weights(int horizon);

}  // namespace trajdiff::diffusion
