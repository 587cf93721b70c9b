#include <doctest.h>

#include <cmath>

#include "trajdiff/curation.hpp"
#include "trajdiff/errors.hpp"
#include "trajdiff/rng.hpp"

using namespace trajdiff;
using curation::Mask;

namespace {

curation::BinarySignal sig(std::initializer_list<int> vals) {
  curation::BinarySignal s;
  for (const int v : vals) s.values.push_back(static_cast<std::uint8_t>(v));
  return s;
}

bool same(const curation::BinarySignal& a, std::initializer_list<int> vals) {
  if (a.values.size() != vals.size()) return false;
  std::size_t i = 0;
  for (const int v : vals)
    if (a.values[i++] != static_cast<std::uint8_t>(v)) return false;
  return true;
}

/// One square component drifting right 1 px per frame.
std::vector<std::vector<Mask>> drifting_frames(int n_frames, int size = 10, int grid = 40) {
  std::vector<std::vector<Mask>> frames;
  for (int f = 0; f < n_frames; ++f)
    frames.push_back({Mask::rect(grid, grid, f, 5, f + size, 5 + size)});
  return frames;
}

curation::TrackRecord posed_track(int span, double fps = 6.0) {
  curation::TrackRecord t;
  t.track_id = 1;
  t.first_frame = 0;
  t.last_frame = span - 1;
  t.fps = fps;
  t.clip_frames = span;
  t.proj_iou.assign(static_cast<std::size_t>(span), 0.9);
  for (int k = 0; k < span; ++k) {
    t.masks.push_back(Mask::rect(20, 20, 2, 2, 12, 12));
    se3::Pose p;
    p.translation = se3::Vec3(0.01 * k, 0.0, 1.0);
    t.poses.push_back(p);
    t.extrinsics.push_back(se3::Pose{});
  }
  t.points.resize(static_cast<std::size_t>(span));
  return t;
}

}  // namespace

TEST_CASE("run_length_smooth") {
  // m = max(1, round(0.05 * 40)) = 2
  CHECK(same(curation::run_length_smooth(sig({1, 1, 1, 1, 1}), 40), {1, 1, 1, 1, 1}));
  CHECK(same(curation::run_length_smooth(sig({1, 1, 0, 1, 1}), 40), {1, 1, 1, 1, 1}));
  CHECK(same(curation::run_length_smooth(sig({0, 0, 1, 0, 0}), 40), {0, 0, 0, 0, 0}));
  // leading/trailing false runs are not gaps
  CHECK(same(curation::run_length_smooth(sig({0, 1, 1, 1, 0}), 40), {0, 1, 1, 1, 0}));
  CHECK_THROWS_AS(curation::run_length_smooth(curation::BinarySignal{}, 10), InvalidCounts);
}

TEST_CASE("run_length_smooth is idempotent on random signals") {
  CounterRng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    curation::BinarySignal s;
    const int n = 5 + static_cast<int>(rng.next_below(60));
    for (int i = 0; i < n; ++i) s.values.push_back(rng.next_double() < 0.5 ? 1 : 0);
    const auto once = curation::run_length_smooth(s, n);
    const auto twice = curation::run_length_smooth(once, n);
    REQUIRE(once.values == twice.values);
  }
}

TEST_CASE("consensus_mask") {
  const Mask a = Mask::rect(8, 8, 0, 0, 4, 4);
  const Mask b = Mask::rect(8, 8, 3, 3, 8, 8);
  const std::vector<Mask> same_masks = {a, a, a};
  CHECK(curation::iou(curation::consensus_mask(same_masks), a) == doctest::Approx(1.0));

  const std::vector<Mask> disjoint = {Mask::rect(8, 8, 0, 0, 3, 3), Mask::rect(8, 8, 5, 5, 8, 8)};
  CHECK(curation::consensus_mask(disjoint).count() == 0);

  const std::vector<Mask> share_pixel = {a, b, Mask::rect(8, 8, 3, 3, 5, 5)};
  const Mask c = curation::consensus_mask(share_pixel);
  CHECK(c.count() == 1);
  CHECK(c.at(3, 3) == 1);

  // consensus is a subset of every input
  for (const Mask& m : share_pixel) {
    bool subset = true;
    for (std::size_t i = 0; i < c.data.size(); ++i)
      if (c.data[i] && !m.data[i]) subset = false;
    CHECK(subset);
  }
}

TEST_CASE("iou") {
  const Mask a = Mask::rect(10, 10, 0, 0, 2, 2);
  CHECK(curation::iou(a, a) == doctest::Approx(1.0));
  CHECK(curation::iou(a, Mask::rect(10, 10, 5, 5, 7, 7)) == doctest::Approx(0.0));
  // two 2x2 squares offset by one column: 2 / 6
  CHECK(curation::iou(a, Mask::rect(10, 10, 1, 0, 3, 2)) == doctest::Approx(2.0 / 6.0));
  CHECK(curation::iou(Mask(4, 4), Mask(4, 4)) == doctest::Approx(0.0));  // both empty
  CHECK_THROWS_AS(curation::iou(a, Mask(4, 4)), DimensionMismatch);
}

TEST_CASE("rle round trip") {
  CounterRng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    Mask m(12, 9);
    for (auto& b : m.data) b = rng.next_double() < 0.4 ? 1 : 0;
    const Mask back = curation::rle_decode(12, 9, curation::rle_encode(m));
    REQUIRE(back.data == m.data);
  }
  CHECK_THROWS_AS(curation::rle_decode(4, 4, std::vector<int>{99}), DimensionMismatch);
}

TEST_CASE("link_tracks follows one drifting component") {
  curation::LinkParams params;
  params.min_len = 5;
  const auto frames = drifting_frames(20);
  const auto result = curation::link_tracks(frames, params);
  REQUIRE(result.tracks.size() == 1);
  CHECK(result.raw_count == 1);
  CHECK(result.tracks[0].first_frame == 0);
  CHECK(result.tracks[0].last_frame == 19);
  CHECK(result.tracks[0].observed_frames() == 20);
}

TEST_CASE("link_tracks tolerates gaps up to gap_tol") {
  curation::LinkParams params;
  params.min_len = 5;
  params.gap_tol = 2;
  auto frames = drifting_frames(15);
  frames[7].clear();
  frames[8].clear();  // vanish for two frames
  const auto with_gap = curation::link_tracks(frames, params);
  REQUIRE(with_gap.tracks.size() == 1);
  CHECK(with_gap.tracks[0].observed_frames() == 13);

  frames[6].clear();  // three missing frames exceeds the tolerance
  const auto split = curation::link_tracks(frames, params);
  CHECK(split.raw_count == 2);
}

TEST_CASE("far components stay separate tracks") {
  std::vector<std::vector<Mask>> frames;
  for (int f = 0; f < 12; ++f)
    frames.push_back({Mask::rect(40, 40, 0, 0, 8, 8), Mask::rect(40, 40, 25, 25, 35, 35)});
  curation::LinkParams params;
  params.min_len = 5;
  const auto result = curation::link_tracks(frames, params);
  CHECK(result.tracks.size() == 2);
  // no component is assigned to two tracks: every frame observed once per track
  for (const auto& t : result.tracks) CHECK(t.observed_frames() == 12);
}

TEST_CASE("dedup") {
  const auto frames = drifting_frames(5);
  curation::LinkParams params;
  params.min_len = 1;
  const auto result = curation::link_tracks(frames, params);
  REQUIRE(result.tracks.size() == 1);

  const Mask& active_mask = *result.tracks[0].masks.back();
  CHECK_FALSE(curation::dedup(active_mask, result.tracks, 4).accepted);
  CHECK(curation::dedup(Mask::rect(40, 40, 30, 30, 38, 38), result.tracks, 4).accepted);

  // IoU exactly at the threshold rejects (>= semantics): 7 / 10 = 0.7
  Mask base(10, 1);
  for (int x = 0; x < 10; ++x) base.at(x, 0) = 1;
  Mask candidate(10, 1);
  for (int x = 0; x < 7; ++x) candidate.at(x, 0) = 1;
  curation::TrackRecord t;
  t.first_frame = 0;
  t.last_frame = 0;
  t.masks.push_back(base);
  const std::vector<curation::TrackRecord> active = {t};
  CHECK(curation::iou(base, candidate) == doctest::Approx(0.7));
  CHECK_FALSE(curation::dedup(candidate, active, 0, 0.7, 3).accepted);
}

TEST_CASE("weighted median and scale locking") {
  const std::vector<double> single = {1.0};
  const std::vector<double> w1 = {1.0};
  CHECK(curation::weighted_median_lower(single, w1) == doctest::Approx(1.0));

  // a low-weight outlier must not flip the pick off the 1.0/1.2 pair; the
  // lower-median convention takes the 1.0 side
  const std::vector<double> vals = {1.0, 1.2, 5.0};
  const std::vector<double> ws = {1.0, 1.0, 0.1};
  CHECK(curation::weighted_median_lower(vals, ws) == doctest::Approx(1.0));

  // classic even case takes the lower of the two middles
  const std::vector<double> two = {2.0, 4.0};
  const std::vector<double> w2 = {1.0, 1.0};
  CHECK(curation::weighted_median_lower(two, w2) == doctest::Approx(2.0));

  curation::ScaleEstimator est;
  CHECK(est.estimate(single, w1, 1.0) == doctest::Approx(1.0));
  CHECK(est.locked());
  CHECK_THROWS_AS(est.estimate(single, w1, 1.0), AlreadyLocked);

  curation::ScaleEstimator empty;
  CHECK_THROWS_AS(empty.estimate({}, {}, 1.0), NoValidFrames);
  CHECK_THROWS_AS(empty.estimate(single, w1, 0.0), InvalidSpec);
}

TEST_CASE("segment_registrations") {
  std::vector<double> stable(20, 0.8);
  auto segs = curation::segment_registrations(stable);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0] == std::pair<int, int>(0, 19));

  std::vector<double> dip(20, 0.8);
  dip[10] = 0.05;
  segs = curation::segment_registrations(dip);
  REQUIRE(segs.size() == 2);
  CHECK(segs[0] == std::pair<int, int>(0, 9));
  CHECK(segs[1] == std::pair<int, int>(10, 19));

  std::vector<double> all_low(5, 0.01);
  segs = curation::segment_registrations(all_low);
  CHECK(segs.size() == 5);
}

TEST_CASE("slice_windows counting and gates") {
  SUBCASE("clean track yields span - (C+H) + 1 windows") {
    const auto t = posed_track(20);
    const auto r = curation::slice_windows(t, 3, 8);
    CHECK(r.stats.prefilter == 10);
    CHECK(r.stats.postfilter == 10);
    CHECK(r.windows.size() == 10);
    for (const auto& w : r.windows) {
      CHECK(w.context_poses.size() == 3);
      CHECK(w.future_poses.size() == 8);
    }
  }

  SUBCASE("no window crosses a registration boundary") {
    auto t = posed_track(20);
    t.proj_iou[10] = 0.05;  // re-registration at frame 10
    const auto r = curation::slice_windows(t, 3, 8);
    // windows must fit inside [0..9] or [10..19]: none in the first (len 10 < 11),
    // none in the second; the IoU value 0.05 < 0.1 also gates frame 10 itself
    CHECK(r.windows.empty());

    auto t2 = posed_track(30);
    t2.proj_iou[12] = 0.05;
    const auto r2 = curation::slice_windows(t2, 3, 8);
    for (std::size_t i = 0; i < r2.windows.size(); ++i) {
      // accepted windows never include frame 12
      CHECK(r2.stats.postfilter == r2.windows.size());
    }
    // segments are [0..11] and [12..29]: starts 0..1 and 13..19 qualify,
    // except those whose window includes frame 12 (iou < trigger)
    CHECK(r2.stats.prefilter == 20);
    CHECK(r2.windows.size() == 2 + 7);
  }

  SUBCASE("an IoU drop larger than 0.1 rejects the window") {
    auto t = posed_track(12);
    t.proj_iou.assign(12, 0.9);
    t.proj_iou[6] = 0.7;  // drop of 0.2 from frame 5 to 6, still above the trigger
    const auto r = curation::slice_windows(t, 3, 8);
    CHECK(r.stats.prefilter == 2);
    // both candidate windows contain the 0.9 -> 0.7 drop
    CHECK(r.windows.empty());
  }

  SUBCASE("long clips are rejected outright") {
    const auto t = posed_track(80);  // 80 frames at 6 fps > 10 s
    const auto r = curation::slice_windows(t, 3, 8);
    CHECK(r.stats.prefilter == 0);
    CHECK(r.windows.empty());
  }
}

TEST_CASE("funnel stats") {
  curation::FunnelStats f;
  f.add("action_segments", 10);
  f.add("selected_clips", 8);
  f.add("tracks", 20);
  f.add("filtered_tracks", 12);
  f.add("models", 9);
  f.add("pose_tracks", 9);
  f.add("prefilter_trajectories", 100);
  f.add("postfilter_trajectories", 60);
  CHECK(f.monotone());
  CHECK(f.to_csv().find("stage,count") == 0);
  CHECK(f.get("tracks") == 20);

  curation::FunnelStats g;
  g.add("action_segments", 1);
  g.add("selected_clips", 2);  // increase along a filtering chain
  CHECK_FALSE(g.monotone());

  curation::FunnelStats sum;
  sum.merge(f);
  sum.merge(f);
  CHECK(sum.get("tracks") == 40);
}

TEST_CASE("curate_stream end to end") {
  // one clip, one drifting object with poses, clean quality
  std::vector<curation::StreamFrame> stream;
  for (int f = 0; f < 20; ++f) {
    curation::StreamFrame rec;
    rec.clip_id = "clipA";
    rec.fps = 6.0;
    rec.frame = f;
    rec.components = {Mask::rect(40, 40, f, 5, f + 10, 15)};
    rec.proj_iou = 0.9;
    se3::Pose p;
    p.translation = se3::Vec3(0.01 * f, 0, 1.0);
    rec.pose = p;
    rec.extrinsics = se3::Pose{};
    stream.push_back(rec);
  }
  // a second clip that is too long (> 10 s at 6 fps)
  for (int f = 0; f < 70; ++f) {
    curation::StreamFrame rec;
    rec.clip_id = "clipB";
    rec.fps = 6.0;
    rec.frame = f;
    rec.components = {Mask::rect(40, 40, 5, 5, 15, 15)};
    rec.pose = se3::Pose{};
    rec.extrinsics = se3::Pose{};
    stream.push_back(rec);
  }

  curation::CurationConfig cfg;
  cfg.link.min_len = 11;
  const auto result = curation::curate_stream(stream, cfg);
  CHECK(result.funnel.get("action_segments") == 2);
  CHECK(result.funnel.get("selected_clips") == 1);
  CHECK(result.funnel.get("filtered_tracks") == 1);
  CHECK(result.funnel.get("pose_tracks") == 1);
  CHECK(result.funnel.get("prefilter_trajectories") == 10);
  CHECK(result.funnel.get("postfilter_trajectories") == 10);
  CHECK(result.windows.size() == 10);
  CHECK(result.funnel.monotone());

  // round trip through the stream JSONL codec
  const std::string text = curation::stream_to_jsonl(stream);
  const auto parsed = curation::parse_stream_jsonl(text);
  REQUIRE(parsed.size() == stream.size());
  const auto again = curation::curate_stream(parsed, cfg);
  CHECK(again.windows.size() == result.windows.size());
  CHECK(again.funnel.to_csv() == result.funnel.to_csv());
}

TEST_CASE("curate_stream on an empty stream reports all zeros") {
  const auto result = curation::curate_stream({}, curation::CurationConfig{});
  CHECK(result.windows.empty());
  for (const auto& [stage, count] : result.funnel.stages) CHECK(count == 0);
  CHECK(result.funnel.monotone());
}

TEST_CASE("curate_stream respects the manipulation gate") {
  std::vector<curation::StreamFrame> stream;
  for (int f = 0; f < 15; ++f) {
    curation::StreamFrame rec;
    rec.clip_id = "static_clip";
    rec.frame = f;
    rec.components = {Mask::rect(40, 40, 5, 5, 15, 15)};
    se3::Pose p;
    p.translation = se3::Vec3(0, 0, 1.0);
    rec.pose = p;
    rec.extrinsics = se3::Pose{};
    rec.manipulated = false;  // the synthetic ground-truth predicate
    stream.push_back(rec);
  }
  curation::CurationConfig cfg;
  const auto result = curation::curate_stream(stream, cfg);
  CHECK(result.funnel.get("filtered_tracks") == 1);
  CHECK(result.funnel.get("models") == 0);
  CHECK(result.windows.empty());

  cfg.require_manipulated = false;
  const auto relaxed = curation::curate_stream(stream, cfg);
  CHECK(relaxed.funnel.get("models") == 1);
  CHECK_FALSE(relaxed.windows.empty());
}
