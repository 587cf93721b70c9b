#include "trajdiff/metrics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "trajdiff/errors.hpp"
#include "trajdiff/rng.hpp"

namespace trajdiff::metrics {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

/// OLS slope of values against k = 1..n.
double ols_slope(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double k_mean = (n + 1) / 2.0;
  double v_mean = 0.0;
  for (const double v : values) v_mean += v;
  v_mean /= static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dk = static_cast<double>(i + 1) - k_mean;
    num += dk * (values[i] - v_mean);
    den += dk * dk;
  }
  return num / den;
}

}  // namespace

MetricReport evaluate(std::span<const se3::Pose> pred, std::span<const se3::Pose> gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw LengthMismatch("evaluate: prediction/ground-truth lengths differ or empty");
  const std::size_t h = pred.size();
  std::vector<double> e(h), r(h);
  for (std::size_t k = 0; k < h; ++k) {
    e[k] = (pred[k].translation - gt[k].translation).norm();
    r[k] = se3::geodesic_angle(pred[k].rotation, gt[k].rotation) * kRadToDeg;
  }
  MetricReport m;
  m.n_samples = 1;
  for (std::size_t k = 0; k < h; ++k) {
    m.ade += e[k];
    m.are += r[k];
  }
  m.ade /= static_cast<double>(h);
  m.are /= static_cast<double>(h);
  m.fde = e.back();
  m.fre = r.back();
  m.des = ols_slope(e);
  m.res = ols_slope(r);
  return m;
}

MetricReport combine(const MetricReport& a, const MetricReport& b) {
  if (a.n_samples == 0) return b;
  if (b.n_samples == 0) return a;
  const double wa = static_cast<double>(a.n_samples);
  const double wb = static_cast<double>(b.n_samples);
  const double w = wa + wb;
  MetricReport m;
  m.ade = (a.ade * wa + b.ade * wb) / w;
  m.fde = (a.fde * wa + b.fde * wb) / w;
  m.des = (a.des * wa + b.des * wb) / w;
  m.are = (a.are * wa + b.are * wb) / w;
  m.fre = (a.fre * wa + b.fre * wb) / w;
  m.res = (a.res * wa + b.res * wb) / w;
  m.n_samples = a.n_samples + b.n_samples;
  return m;
}

MetricReport evaluate_batch(std::span<const tokens::TrajectoryWindow> windows,
                            const Predictor& predict, std::uint64_t seed) {
  if (windows.empty()) throw InvalidCounts("evaluate_batch: empty window set");
  MetricReport total;
  for (const tokens::TrajectoryWindow& w : windows) {
    const std::uint64_t ws = rng_derive(seed, w.clip_id);
    const std::vector<se3::Pose> pred = predict(w, ws);
    total = combine(total, evaluate(pred, w.future_poses));
  }
  return total;
}

std::vector<se3::Pose> baseline_constant_pose(const tokens::TrajectoryWindow& w) {
  return std::vector<se3::Pose>(static_cast<std::size_t>(w.horizon), w.anchor_pose());
}

std::vector<se3::Pose> baseline_constant_velocity(const tokens::TrajectoryWindow& w) {
  if (w.context_poses.size() < 2) return baseline_constant_pose(w);
  const se3::Increment inc = se3::pose_increment(w.context_poses[w.context_poses.size() - 2],
                                                 w.context_poses.back());
  std::vector<se3::Pose> out;
  out.reserve(static_cast<std::size_t>(w.horizon));
  se3::Pose cur = w.anchor_pose();
  for (int k = 0; k < w.horizon; ++k) {
    cur.translation += inc.dt;
    cur.rotation = cur.rotation * inc.dr;
    out.push_back(cur);
  }
  return out;
}

std::string report_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value,n\n";
  os << "ade," << r.ade << "," << r.n_samples << "\n";
  os << "fde," << r.fde << "," << r.n_samples << "\n";
  os << "des," << r.des << "," << r.n_samples << "\n";
  os << "are," << r.are << "," << r.n_samples << "\n";
  os << "fre," << r.fre << "," << r.n_samples << "\n";
  os << "res," << r.res << "," << r.n_samples << "\n";
  return os.str();
}

std::string report_json(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"ade\":" << r.ade << ",\"fde\":" << r.fde << ",\"des\":" << r.des << ",\"are\":" << r.are
     << ",\"fre\":" << r.fre << ",\"res\":" << r.res << ",\"n\":" << r.n_samples << "}";
  return os.str();
}

}  // namespace trajdiff::metrics
