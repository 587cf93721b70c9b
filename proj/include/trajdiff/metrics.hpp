#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trajdiff/se3.hpp"
#include "trajdiff/tokens.hpp"

namespace trajdiff::metrics {

/// Forecast quality report. Translation in meters, rotation in degrees;
/// DES/RES are ordinary-least-squares slopes of the per-step errors against
/// the step index (0 when H < 2).
struct MetricReport {
  double ade = 0.0;
  double fde = 0.0;
  double des = 0.0;
  double are = 0.0;
  double fre = 0.0;
  double res = 0.0;
  std::size_t n_samples = 0;
};

/// Headline reference metrics from the full-scale (2M-trajectory) training
/// runs of this task family. Desk-scale models do not reproduce these; they
/// are orientation values only.
inline constexpr MetricReport kFullScaleReference{
    /*ade=*/0.019, /*fde=*/0.035, /*des=*/0.005,
    /*are=*/7.98,  /*fre=*/13.93, /*res=*/1.86, /*n_samples=*/0};

MetricReport evaluate(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt);

/// Size-weighted mean of two reports.
MetricReport combine(const MetricReport& a, const MetricReport& b);

using Predictor =
    std::function<std::vector<se3::Pose>(const tokens::TrajectoryWindow&, std::uint64_t seed)>;

/// One deterministic prediction per window, seeded from (seed, clip_id);
/// returns the mean report.
MetricReport evaluate_batch(std::span<const tokens::TrajectoryWindow> windows,
                            const Predictor& predict, std::uint64_t seed);

/// Repeats the anchor pose across the horizon.
std::vector<se3::Pose> baseline_constant_pose(const tokens::TrajectoryWindow& w);

/// Extrapolates the last context increment (falls back to constant pose for
/// C < 2).
std::vector<se3::Pose> baseline_constant_velocity(const tokens::TrajectoryWindow& w);

std::string report_csv(const MetricReport& r);
std::string report_json(const MetricReport& r);

}  // namespace trajdiff::metrics
