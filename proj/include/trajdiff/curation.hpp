#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajdiff/se3.hpp"
#include "trajdiff/tokens.hpp"

namespace trajdiff::curation {

/// Byte-per-pixel binary mask at working resolution.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major, 0/1

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  int count() const;
  bool empty() const { return count() == 0; }

  static Mask rect(int w, int h, int x0, int y0, int x1, int y1);  // half-open box
};

/// |a ∧ b| / |a ∨ b|; 0 when both are empty.
double iou(const Mask& a, const Mask& b);

/// Bitwise AND over the window.
Mask consensus_mask(std::span<const Mask> masks);

/// Bounding box of the set pixels, normalized by the grid size ([cx cy w h];
/// zeros for an empty mask).
Eigen::Vector4d mask_box(const Mask& m);

/// Row-major run-length pairs, alternating zero-run / one-run, starting with
/// the zero run.
std::vector<int> rle_encode(const Mask& m);
Mask rle_decode(int width, int height, std::span<const int> runs);

struct BinarySignal {
  std::vector<std::uint8_t> values;
  double fps = 6.0;
};

/// With m = max(1, round(0.05 * clip_frames)): fill false gaps shorter than m
/// (bounded by true runs on both sides), then drop true runs shorter than m.
/// Idempotent.
BinarySignal run_length_smooth(const BinarySignal& signal, int clip_frames);

/// Curation-side object track. Per-frame storage is indexed relative to
/// first_frame; gaps are unobserved frames inside the span.
struct TrackRecord {
  int track_id = 0;
  int first_frame = 0;
  int last_frame = -1;
  std::vector<std::optional<Mask>> masks;
  std::vector<double> proj_iou;  // pose-projection IoU per spanned frame
  std::vector<std::optional<se3::Pose>> poses;
  std::vector<std::optional<se3::Pose>> extrinsics;
  std::vector<std::optional<Eigen::MatrixXd>> points;  // optional anchor clouds
  std::vector<std::pair<int, int>> registration_segments;  // inclusive offsets into the span
  double fps = 6.0;
  int clip_frames = 0;
  bool manipulated = true;
  double view_quality = 1.0;

  int span() const { return last_frame - first_frame + 1; }
  int observed_frames() const;
};

struct LinkParams {
  double iou_thresh = 0.5;
  int gap_tol = 2;
  int min_len = 11;  // C + H by default
  double dedup_iou = 0.7;
  int dedup_window = 3;
};

struct DedupResult {
  bool accepted = true;
  int rejected_by = -1;
};

/// Rejects a candidate that overlaps any active track's masks within the last
/// `window` frames at IoU >= threshold.
DedupResult dedup(const Mask& candidate, std::span<const TrackRecord> active, int current_frame,
                  double dedup_iou = 0.7, int window = 3);

struct LinkResult {
  std::vector<TrackRecord> tracks;  // after the min-length drop
  std::size_t raw_count = 0;        // tracks seeded before the drop
};

/// Greedy IoU association frame by frame with gap tolerance; unmatched
/// components seed new tracks after de-duplication.
LinkResult link_tracks(std::span<const std::vector<Mask>> frames, const LinkParams& params);

/// Lower weighted median of r_obs / r_mesh: the largest ratio whose cumulative
/// weight does not exceed half the total (first ratio if none qualifies).
double weighted_median_lower(std::span<const double> values, std::span<const double> weights);

/// Locks after the first estimate; re-estimation throws AlreadyLocked.
class ScaleEstimator {
 public:
  double estimate(std::span<const double> r_obs, std::span<const double> weights, double r_mesh);
  bool locked() const { return locked_; }
  double value() const;

 private:
  bool locked_ = false;
  double scale_ = 1.0;
};

/// New segment at every frame with IoU below the trigger; segments cover the
/// span.
std::vector<std::pair<int, int>> segment_registrations(std::span<const double> proj_iou,
                                                       double trigger = 0.1);

struct SliceStats {
  std::size_t prefilter = 0;   // window positions slid
  std::size_t postfilter = 0;  // windows kept
};

struct SliceResult {
  std::vector<tokens::TrajectoryWindow> windows;
  SliceStats stats;
};

/// Slides a C+H window along the track. A window is kept iff it is fully
/// observed, lies inside one registration segment, has min IoU >= trigger and
/// no inter-frame IoU drop > drop_thresh, and every re-expressed depth is
/// positive. Tracks from clips longer than max_clip_seconds yield nothing.
SliceResult slice_windows(const TrackRecord& track, int context_len, int horizon,
                          double max_clip_seconds = 10.0, double trigger = 0.1,
                          double drop_thresh = 0.1);

/// Funnel accounting in pipeline order.
struct FunnelStats {
  std::vector<std::pair<std::string, std::size_t>> stages;

  void add(const std::string& stage, std::size_t count);
  std::size_t get(const std::string& stage) const;
  void merge(const FunnelStats& other);  // summation per stage
  std::string to_csv() const;

  /// Monotone non-increase along the filtering chains
  /// (clips, tracks, windows).
  bool monotone() const;
};

/// Synthetic detection stream record (one JSONL line).
struct StreamFrame {
  std::string clip_id = "clip0";
  double fps = 6.0;
  int frame = 0;
  std::vector<Mask> components;
  double proj_iou = 1.0;
  std::optional<se3::Pose> pose;
  std::optional<se3::Pose> extrinsics;
  std::optional<Eigen::MatrixXd> points;
  bool manipulated = true;
  double view_quality = 1.0;
};

std::vector<StreamFrame> parse_stream_jsonl(const std::string& text);
std::string stream_to_jsonl(std::span<const StreamFrame> frames);

struct CurationConfig {
  int context_len = 3;
  int horizon = 8;
  LinkParams link;
  double smooth_fraction = 0.05;
  double reg_trigger = 0.1;
  double drop_thresh = 0.1;
  double max_clip_seconds = 10.0;
  bool require_manipulated = true;
  double min_view_quality = 0.5;
};

struct CurationResult {
  std::vector<tokens::TrajectoryWindow> windows;
  FunnelStats funnel;
};

/// Full pipeline over a detection stream: presence smoothing, track linking
/// with de-duplication, manipulation/clean-view gates, registration
/// segmentation, window slicing, funnel accounting.
CurationResult curate_stream(std::span<const StreamFrame> records, const CurationConfig& cfg);

}  // namespace trajdiff::curation
