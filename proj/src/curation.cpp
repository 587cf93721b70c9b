#include "trajdiff/curation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "trajdiff/errors.hpp"
#include "trajdiff/io.hpp"

namespace trajdiff::curation {

using nlohmann::json;

int Mask::count() const {
  int n = 0;
  for (const std::uint8_t b : data) n += b;
  return n;
}

Mask Mask::rect(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(w, h);
  for (int y = std::max(0, y0); y < std::min(h, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(w, x1); ++x) m.at(x, y) = 1;
  return m;
}

double iou(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionMismatch("iou: mask dimensions differ");
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] & b.data[i];
    uni += a.data[i] | b.data[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

Mask consensus_mask(std::span<const Mask> masks) {
  if (masks.empty()) throw DimensionMismatch("consensus_mask: empty window");
  Mask out = masks[0];
  for (std::size_t k = 1; k < masks.size(); ++k) {
    if (masks[k].width != out.width || masks[k].height != out.height)
      throw DimensionMismatch("consensus_mask: mask dimensions differ");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] &= masks[k].data[i];
  }
  return out;
}

Eigen::Vector4d mask_box(const Mask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return Eigen::Vector4d::Zero();
  const double w = static_cast<double>(x1 - x0 + 1) / m.width;
  const double h = static_cast<double>(y1 - y0 + 1) / m.height;
  const double cx = (x0 + x1 + 1) / 2.0 / m.width;
  const double cy = (y0 + y1 + 1) / 2.0 / m.height;
  return Eigen::Vector4d(cx, cy, w, h);
}

std::vector<int> rle_encode(const Mask& m) {
  std::vector<int> runs;
  std::uint8_t cur = 0;  // encoding starts with the zero run
  int len = 0;
  for (const std::uint8_t b : m.data) {
    if (b == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = b;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

Mask rle_decode(int width, int height, std::span<const int> runs) {
  Mask m(width, height);
  std::size_t pos = 0;
  std::uint8_t cur = 0;
  for (const int run : runs) {
    if (run < 0 || pos + static_cast<std::size_t>(run) > m.data.size())
      throw DimensionMismatch("rle_decode: runs exceed mask area");
    std::fill(m.data.begin() + static_cast<std::ptrdiff_t>(pos),
              m.data.begin() + static_cast<std::ptrdiff_t>(pos) + run, cur);
    pos += static_cast<std::size_t>(run);
    cur ^= 1;
  }
  if (pos != m.data.size()) throw DimensionMismatch("rle_decode: runs do not cover mask area");
  return m;
}

BinarySignal run_length_smooth(const BinarySignal& signal, int clip_frames) {
  if (signal.values.empty()) throw InvalidCounts("run_length_smooth: empty signal");
  const int m = std::max(1, static_cast<int>(std::lround(0.05 * clip_frames)));
  BinarySignal out = signal;
  const int n = static_cast<int>(out.values.size());

  // fill false gaps (bounded by true on both sides) shorter than m
  int i = 0;
  while (i < n) {
    if (!out.values[static_cast<std::size_t>(i)]) {
      int j = i;
      while (j < n && !out.values[static_cast<std::size_t>(j)]) ++j;
      const bool bounded = i > 0 && j < n;
      if (bounded && j - i < m)
        std::fill(out.values.begin() + i, out.values.begin() + j, std::uint8_t{1});
      i = j;
    } else {
      ++i;
    }
  }
  // drop true runs shorter than m
  i = 0;
  while (i < n) {
    if (out.values[static_cast<std::size_t>(i)]) {
      int j = i;
      while (j < n && out.values[static_cast<std::size_t>(j)]) ++j;
      if (j - i < m) std::fill(out.values.begin() + i, out.values.begin() + j, std::uint8_t{0});
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

int TrackRecord::observed_frames() const {
  int n = 0;
  for (const auto& m : masks) n += m.has_value() ? 1 : 0;
  return n;
}

DedupResult dedup(const Mask& candidate, std::span<const TrackRecord> active, int current_frame,
                  double dedup_iou, int window) {
  for (const TrackRecord& t : active) {
    for (int f = current_frame - window + 1; f <= current_frame; ++f) {
      const int off = f - t.first_frame;
      if (off < 0 || off >= static_cast<int>(t.masks.size())) continue;
      const auto& m = t.masks[static_cast<std::size_t>(off)];
      if (m && m->width == candidate.width && m->height == candidate.height &&
          iou(*m, candidate) >= dedup_iou)
        return DedupResult{false, t.track_id};
    }
  }
  return DedupResult{true, -1};
}

namespace {

struct ActiveTrack {
  TrackRecord record;
  Mask last_mask;
  int last_frame = 0;
};

void observe(ActiveTrack& t, int frame, const Mask& m) {
  const int off = frame - t.record.first_frame;
  if (off >= static_cast<int>(t.record.masks.size()))
    t.record.masks.resize(static_cast<std::size_t>(off) + 1);
  t.record.masks[static_cast<std::size_t>(off)] = m;
  t.record.last_frame = frame;
  t.last_mask = m;
  t.last_frame = frame;
}

}  // namespace

LinkResult link_tracks(std::span<const std::vector<Mask>> frames, const LinkParams& params) {
  std::vector<ActiveTrack> active;
  std::vector<TrackRecord> closed;
  std::size_t raw_count = 0;
  int next_id = 0;

  for (int f = 0; f < static_cast<int>(frames.size()); ++f) {
    const std::vector<Mask>& comps = frames[static_cast<std::size_t>(f)];

    // retire tracks beyond the gap tolerance
    for (std::size_t a = 0; a < active.size();) {
      if (f - active[a].last_frame > params.gap_tol + 1) {
        closed.push_back(std::move(active[a].record));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(a));
      } else {
        ++a;
      }
    }

    // greedy IoU matching, ties broken by (track, component) order
    struct Pair {
      double score;
      std::size_t track, comp;
    };
    std::vector<Pair> pairs;
    for (std::size_t a = 0; a < active.size(); ++a)
      for (std::size_t c = 0; c < comps.size(); ++c) {
        if (active[a].last_mask.width != comps[c].width ||
            active[a].last_mask.height != comps[c].height)
          continue;
        const double s = iou(active[a].last_mask, comps[c]);
        if (s >= params.iou_thresh) pairs.push_back({s, a, c});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
      if (x.score != y.score) return x.score > y.score;
      if (x.track != y.track) return x.track < y.track;
      return x.comp < y.comp;
    });
    std::vector<bool> track_used(active.size(), false), comp_used(comps.size(), false);
    for (const Pair& pr : pairs) {
      if (track_used[pr.track] || comp_used[pr.comp]) continue;
      track_used[pr.track] = true;
      comp_used[pr.comp] = true;
      observe(active[pr.track], f, comps[pr.comp]);
    }

    // unmatched components seed new tracks unless they duplicate an active one
    for (std::size_t c = 0; c < comps.size(); ++c) {
      if (comp_used[c]) continue;
      std::vector<TrackRecord> snapshot;
      snapshot.reserve(active.size());
      for (const ActiveTrack& a : active) snapshot.push_back(a.record);
      if (!dedup(comps[c], snapshot, f, params.dedup_iou, params.dedup_window).accepted) continue;
      ActiveTrack t;
      t.record.track_id = next_id++;
      t.record.first_frame = f;
      ++raw_count;
      observe(t, f, comps[c]);
      active.push_back(std::move(t));
    }
  }
  for (ActiveTrack& a : active) closed.push_back(std::move(a.record));

  std::sort(closed.begin(), closed.end(),
            [](const TrackRecord& x, const TrackRecord& y) { return x.track_id < y.track_id; });
  LinkResult result;
  result.raw_count = raw_count;
  for (TrackRecord& t : closed)
    if (t.observed_frames() >= params.min_len) result.tracks.push_back(std::move(t));
  return result;
}

double weighted_median_lower(std::span<const double> values, std::span<const double> weights) {
  if (values.empty() || values.size() != weights.size())
    throw NoValidFrames();
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  double total = 0.0;
  for (const double w : weights) {
    if (w < 0.0) throw InvalidSpec("weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) throw NoValidFrames();
  const double half = total / 2.0;
  double cum = 0.0;
  double best = values[order[0]];
  for (const std::size_t i : order) {
    cum += weights[i];
    if (cum <= half)
      best = values[i];
    else
      break;
  }
  return best;
}

double ScaleEstimator::estimate(std::span<const double> r_obs, std::span<const double> weights,
                                double r_mesh) {
  if (locked_) throw AlreadyLocked();
  if (r_mesh <= 0.0) throw InvalidSpec("mesh radius must be positive");
  if (r_obs.empty()) throw NoValidFrames();
  std::vector<double> ratios(r_obs.size());
  for (std::size_t i = 0; i < r_obs.size(); ++i) ratios[i] = r_obs[i] / r_mesh;
  scale_ = weighted_median_lower(ratios, weights);
  locked_ = true;
  return scale_;
}

double ScaleEstimator::value() const {
  if (!locked_) throw NoValidFrames();
  return scale_;
}

std::vector<std::pair<int, int>> segment_registrations(std::span<const double> proj_iou,
                                                       double trigger) {
  if (proj_iou.empty()) throw InvalidCounts("segment_registrations: empty IoU series");
  std::vector<std::pair<int, int>> segments;
  int start = 0;
  for (int i = 1; i < static_cast<int>(proj_iou.size()); ++i) {
    if (proj_iou[static_cast<std::size_t>(i)] < trigger) {
      segments.emplace_back(start, i - 1);
      start = i;
    }
  }
  segments.emplace_back(start, static_cast<int>(proj_iou.size()) - 1);
  return segments;
}

namespace {

/// Deterministic surrogate anchor cloud when the stream carries no points:
/// the object box corners (nominal 0.1 m extent) plus the centroid.
Eigen::MatrixXd surrogate_cloud(const se3::Pose& anchor_pose) {
  constexpr double kHalf = 0.05;
  Eigen::MatrixXd pts(9, 6);
  int row = 0;
  for (int corner = 0; corner < 8; ++corner) {
    const se3::Vec3 o(((corner & 1) ? kHalf : -kHalf), ((corner & 2) ? kHalf : -kHalf),
                      ((corner & 4) ? kHalf : -kHalf));
    const se3::Vec3 cam = anchor_pose.rotation * o + anchor_pose.translation;
    pts.row(row++) << cam.x(), cam.y(), cam.z(), o.x(), o.y(), o.z();
  }
  pts.row(row) << anchor_pose.translation.x(), anchor_pose.translation.y(),
      anchor_pose.translation.z(), 0.0, 0.0, 0.0;
  return pts;
}

}  // namespace

SliceResult slice_windows(const TrackRecord& track, int context_len, int horizon,
                          double max_clip_seconds, double trigger, double drop_thresh) {
  SliceResult result;
  if (track.fps <= 0.0) throw InvalidSpec("track fps must be positive");
  if (track.clip_frames / track.fps > max_clip_seconds) return result;  // clip gate

  const int len = context_len + horizon;
  const int span = track.span();
  if (span < len) return result;
  if (static_cast<int>(track.proj_iou.size()) != span ||
      static_cast<int>(track.poses.size()) != span ||
      static_cast<int>(track.extrinsics.size()) != span)
    throw InvalidSpec("slice_windows: track per-frame arrays must cover the span");

  const std::vector<std::pair<int, int>> segments =
      track.registration_segments.empty()
          ? segment_registrations(track.proj_iou, trigger)
          : track.registration_segments;

  for (int a = 0; a + len <= span; ++a) {
    ++result.stats.prefilter;
    const int b = a + len - 1;

    // poses everywhere, masks for the context frames (boxes come from them)
    bool observed = true;
    for (int k = a; k <= b && observed; ++k) {
      const std::size_t off = static_cast<std::size_t>(k);
      observed = track.poses[off].has_value() && track.extrinsics[off].has_value();
      if (observed && k - a < context_len)
        observed = off < track.masks.size() && track.masks[off].has_value();
    }
    if (!observed) continue;

    const bool in_one_segment =
        std::any_of(segments.begin(), segments.end(),
                    [&](const std::pair<int, int>& s) { return s.first <= a && b <= s.second; });
    if (!in_one_segment) continue;

    bool iou_ok = true;
    for (int k = a; k <= b && iou_ok; ++k) {
      iou_ok = track.proj_iou[static_cast<std::size_t>(k)] >= trigger;
      if (iou_ok && k < b)
        iou_ok = track.proj_iou[static_cast<std::size_t>(k)] -
                     track.proj_iou[static_cast<std::size_t>(k + 1)] <=
                 drop_thresh;
    }
    if (!iou_ok) continue;

    std::vector<se3::Pose> poses, extr;
    Eigen::MatrixXd boxes(context_len, 4);
    for (int k = a; k <= b; ++k) {
      poses.push_back(*track.poses[static_cast<std::size_t>(k)]);
      extr.push_back(*track.extrinsics[static_cast<std::size_t>(k)]);
      if (k - a < context_len)
        boxes.row(k - a) = mask_box(*track.masks[static_cast<std::size_t>(k)]).transpose();
    }
    const std::size_t anchor_off = static_cast<std::size_t>(a + context_len - 1);
    Eigen::MatrixXd cloud;
    if (anchor_off < track.points.size() && track.points[anchor_off].has_value()) {
      cloud = *track.points[anchor_off];
    } else {
      const se3::Pose anchor_cam = *track.poses[anchor_off];
      cloud = surrogate_cloud(anchor_cam);
    }
    char id[64];
    std::snprintf(id, sizeof(id), "track%04d-w%04d", track.track_id, a);
    try {
      result.windows.push_back(tokens::build_window(
          id, track.fps, context_len, horizon, Eigen::Vector4d(500.0, 500.0, 320.0, 240.0), poses,
          extr, boxes, std::move(cloud)));
      ++result.stats.postfilter;
    } catch (const NonPositiveDepth&) {
      // depth gate
    }
  }
  return result;
}

void FunnelStats::add(const std::string& stage, std::size_t count) {
  for (auto& [name, c] : stages)
    if (name == stage) {
      c += count;
      return;
    }
  stages.emplace_back(stage, count);
}

std::size_t FunnelStats::get(const std::string& stage) const {
  for (const auto& [name, c] : stages)
    if (name == stage) return c;
  return 0;
}

void FunnelStats::merge(const FunnelStats& other) {
  for (const auto& [name, c] : other.stages) add(name, c);
}

std::string FunnelStats::to_csv() const {
  std::ostringstream os;
  os << "stage,count\n";
  for (const auto& [name, c] : stages) os << name << "," << c << "\n";
  return os.str();
}

bool FunnelStats::monotone() const {
  const std::vector<std::vector<std::string>> chains = {
      {"action_segments", "selected_clips"},
      {"tracks", "filtered_tracks", "models", "pose_tracks"},
      {"prefilter_trajectories", "postfilter_trajectories"}};
  for (const auto& chain : chains) {
    for (std::size_t i = 0; i + 1 < chain.size(); ++i)
      if (get(chain[i]) < get(chain[i + 1])) return false;
  }
  return true;
}

namespace {

json mask_to_json(const Mask& m) {
  return json{{"w", m.width}, {"h", m.height}, {"runs", rle_encode(m)}};
}

Mask mask_from_json(const json& j) {
  const auto runs = j.at("runs").get<std::vector<int>>();
  return rle_decode(j.at("w").get<int>(), j.at("h").get<int>(), runs);
}

}  // namespace

std::vector<StreamFrame> parse_stream_jsonl(const std::string& text) {
  std::vector<StreamFrame> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(std::string("bad stream line: ") + e.what());
    }
    StreamFrame f;
    f.clip_id = j.value("clip_id", f.clip_id);
    f.fps = j.value("fps", f.fps);
    f.frame = j.at("frame").get<int>();
    if (j.contains("components"))
      for (const auto& mj : j["components"]) f.components.push_back(mask_from_json(mj));
    f.proj_iou = j.value("iou", f.proj_iou);
    if (j.contains("pose")) f.pose = io::pose_from_json(j["pose"]);
    if (j.contains("extrinsics")) f.extrinsics = io::pose_from_json(j["extrinsics"]);
    if (j.contains("points")) {
      const auto& pj = j["points"];
      Eigen::MatrixXd pts(static_cast<Eigen::Index>(pj.size()), 6);
      for (std::size_t i = 0; i < pj.size(); ++i)
        for (int c = 0; c < 6; ++c) pts(static_cast<Eigen::Index>(i), c) = pj[i][static_cast<std::size_t>(c)].get<double>();
      f.points = std::move(pts);
    }
    f.manipulated = j.value("manipulated", f.manipulated);
    f.view_quality = j.value("view_quality", f.view_quality);
    out.push_back(std::move(f));
  }
  return out;
}

std::string stream_to_jsonl(std::span<const StreamFrame> frames) {
  std::ostringstream os;
  for (const StreamFrame& f : frames) {
    json j;
    j["clip_id"] = f.clip_id;
    j["fps"] = f.fps;
    j["frame"] = f.frame;
    json comps = json::array();
    for (const Mask& m : f.components) comps.push_back(mask_to_json(m));
    j["components"] = std::move(comps);
    j["iou"] = f.proj_iou;
    if (f.pose) j["pose"] = io::pose_to_json(*f.pose);
    if (f.extrinsics) j["extrinsics"] = io::pose_to_json(*f.extrinsics);
    if (f.points) {
      json pts = json::array();
      for (Eigen::Index i = 0; i < f.points->rows(); ++i) {
        json row = json::array();
        for (int c = 0; c < 6; ++c) row.push_back((*f.points)(i, c));
        pts.push_back(std::move(row));
      }
      j["points"] = std::move(pts);
    }
    j["manipulated"] = f.manipulated;
    j["view_quality"] = f.view_quality;
    os << j.dump() << "\n";
  }
  return os.str();
}

CurationResult curate_stream(std::span<const StreamFrame> records, const CurationConfig& cfg) {
  // group records by clip, order of first appearance
  std::vector<std::string> clip_order;
  std::map<std::string, std::vector<const StreamFrame*>> clips;
  for (const StreamFrame& r : records) {
    if (clips.find(r.clip_id) == clips.end()) clip_order.push_back(r.clip_id);
    clips[r.clip_id].push_back(&r);
  }

  CurationResult result;
  result.funnel.add("action_segments", clip_order.size());
  std::size_t selected = 0, raw_tracks = 0, filtered = 0, models = 0, pose_tracks = 0;
  std::size_t prefilter = 0, postfilter = 0;

  for (const std::string& clip : clip_order) {
    std::vector<const StreamFrame*>& frames = clips[clip];
    std::sort(frames.begin(), frames.end(),
              [](const StreamFrame* a, const StreamFrame* b) { return a->frame < b->frame; });
    const int clip_frames = frames.back()->frame + 1;
    const double fps = frames.front()->fps;
    if (clip_frames / fps > cfg.max_clip_seconds) continue;

    BinarySignal presence;
    presence.fps = fps;
    presence.values.assign(static_cast<std::size_t>(clip_frames), 0);
    std::vector<const StreamFrame*> by_frame(static_cast<std::size_t>(clip_frames), nullptr);
    for (const StreamFrame* f : frames) {
      if (f->frame < 0 || f->frame >= clip_frames) continue;
      by_frame[static_cast<std::size_t>(f->frame)] = f;
      presence.values[static_cast<std::size_t>(f->frame)] = f->components.empty() ? 0 : 1;
    }
    const BinarySignal smoothed = run_length_smooth(presence, clip_frames);
    if (std::none_of(smoothed.values.begin(), smoothed.values.end(),
                     [](std::uint8_t v) { return v != 0; }))
      continue;
    ++selected;

    std::vector<std::vector<Mask>> comp_frames(static_cast<std::size_t>(clip_frames));
    for (int f = 0; f < clip_frames; ++f)
      if (smoothed.values[static_cast<std::size_t>(f)] && by_frame[static_cast<std::size_t>(f)])
        comp_frames[static_cast<std::size_t>(f)] = by_frame[static_cast<std::size_t>(f)]->components;

    LinkResult linked = link_tracks(comp_frames, cfg.link);
    raw_tracks += linked.raw_count;
    filtered += linked.tracks.size();

    for (TrackRecord& t : linked.tracks) {
      t.fps = fps;
      t.clip_frames = clip_frames;
      const int span = t.span();
      t.proj_iou.assign(static_cast<std::size_t>(span), 1.0);
      t.poses.resize(static_cast<std::size_t>(span));
      t.extrinsics.resize(static_cast<std::size_t>(span));
      t.points.resize(static_cast<std::size_t>(span));
      t.masks.resize(static_cast<std::size_t>(span));
      double quality_sum = 0.0;
      int quality_n = 0;
      int manipulated_votes = 0, observed = 0;
      for (int k = 0; k < span; ++k) {
        const StreamFrame* f = by_frame[static_cast<std::size_t>(t.first_frame + k)];
        if (!f) continue;
        t.proj_iou[static_cast<std::size_t>(k)] = f->proj_iou;
        if (f->pose) t.poses[static_cast<std::size_t>(k)] = f->pose;
        if (f->extrinsics) t.extrinsics[static_cast<std::size_t>(k)] = f->extrinsics;
        if (f->points) t.points[static_cast<std::size_t>(k)] = f->points;
        quality_sum += f->view_quality;
        ++quality_n;
        manipulated_votes += f->manipulated ? 1 : 0;
        ++observed;
      }
      t.manipulated = observed > 0 && 2 * manipulated_votes > observed;
      t.view_quality = quality_n > 0 ? quality_sum / quality_n : 0.0;

      // manipulation + clean-view gates (stand-ins for the neural stages)
      if (cfg.require_manipulated && !t.manipulated) continue;
      if (t.view_quality < cfg.min_view_quality) continue;
      ++models;

      bool has_poses = true;
      for (int k = 0; k < span && has_poses; ++k)
        has_poses = t.poses[static_cast<std::size_t>(k)].has_value() &&
                    t.extrinsics[static_cast<std::size_t>(k)].has_value();
      if (!has_poses) continue;
      ++pose_tracks;

      t.registration_segments = segment_registrations(t.proj_iou, cfg.reg_trigger);
      SliceResult sliced = slice_windows(t, cfg.context_len, cfg.horizon, cfg.max_clip_seconds,
                                         cfg.reg_trigger, cfg.drop_thresh);
      prefilter += sliced.stats.prefilter;
      postfilter += sliced.stats.postfilter;
      for (tokens::TrajectoryWindow& w : sliced.windows) {
        w.clip_id = clip + "-" + w.clip_id;
        result.windows.push_back(std::move(w));
      }
    }
  }

  result.funnel.add("selected_clips", selected);
  result.funnel.add("tracks", raw_tracks);
  result.funnel.add("filtered_tracks", filtered);
  result.funnel.add("models", models);
  result.funnel.add("pose_tracks", pose_tracks);
  result.funnel.add("prefilter_trajectories", prefilter);
  result.funnel.add("postfilter_trajectories", postfilter);
  return result;
}

}  // namespace trajdiff::curation
