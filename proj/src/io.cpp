#include "trajdiff/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "trajdiff/errors.hpp"

namespace trajdiff::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << content;
}

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  // x86/LE layout; documented as little-endian in the format
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("unexpected end of binary stream");
  return v;
}

}  // namespace

json pose_to_json(const se3::Pose& p) {
  const se3::Rot6d r = se3::rot6d_encode(p.rotation);
  return json::array({p.translation.x(), p.translation.y(), p.translation.z(), r.a.x(), r.a.y(),
                      r.a.z(), r.b.x(), r.b.y(), r.b.z()});
}

se3::Pose pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 9) throw IoError("pose must be a 9-number array");
  se3::Pose p;
  p.translation = se3::Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  const se3::Vec3 a(j[3].get<double>(), j[4].get<double>(), j[5].get<double>());
  const se3::Vec3 b(j[6].get<double>(), j[7].get<double>(), j[8].get<double>());
  p.rotation = se3::rot6d_decode(se3::Rot6d{a, b});
  return p;
}

json stats_to_json(const tokens::TokenStats& s) {
  json j;
  j["mu"] = std::vector<double>(s.mu.data(), s.mu.data() + 9);
  j["sigma"] = std::vector<double>(s.sigma.data(), s.sigma.data() + 9);
  j["frozen"] = s.frozen;
  return j;
}

tokens::TokenStats stats_from_json(const json& j) {
  tokens::TokenStats s;
  const auto mu = j.at("mu").get<std::vector<double>>();
  const auto sigma = j.at("sigma").get<std::vector<double>>();
  if (mu.size() != 9 || sigma.size() != 9) throw IoError("token stats must have 9 channels");
  for (int i = 0; i < 9; ++i) {
    s.mu(i) = mu[static_cast<std::size_t>(i)];
    s.sigma(i) = sigma[static_cast<std::size_t>(i)];
  }
  s.frozen = j.value("frozen", true);
  return s;
}

std::uint64_t append_pointcloud(std::ostream& os, const Eigen::MatrixXd& pts) {
  if (pts.cols() != 6) throw ShapeMismatch("point cloud must be N x 6");
  const std::uint64_t offset = static_cast<std::uint64_t>(os.tellp());
  os.write("OFPC", 4);
  write_le<std::uint16_t>(os, 1);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (Eigen::Index j = 0; j < 6; ++j) write_le<float>(os, static_cast<float>(pts(i, j)));
  return offset;
}

Eigen::MatrixXd read_pointcloud(std::istream& is, std::uint64_t offset) {
  is.seekg(static_cast<std::streamoff>(offset));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "OFPC", 4) != 0) throw IoError("bad OFPC magic");
  const auto version = read_le<std::uint16_t>(is);
  if (version != 1) throw IoError("unsupported OFPC version");
  const auto count = read_le<std::uint32_t>(is);
  Eigen::MatrixXd pts(count, 6);
  for (std::uint32_t i = 0; i < count; ++i)
    for (int j = 0; j < 6; ++j) pts(i, j) = static_cast<double>(read_le<float>(is));
  return pts;
}

namespace {

json window_to_json(const tokens::TrajectoryWindow& w, const std::string& points_file,
                    std::uint64_t offset) {
  json j;
  j["clip_id"] = w.clip_id;
  j["fps"] = w.fps;
  j["C"] = w.context_len;
  j["H"] = w.horizon;
  j["intrinsics"] = {w.intrinsics(0), w.intrinsics(1), w.intrinsics(2), w.intrinsics(3)};
  json ctx = json::array();
  for (const auto& p : w.context_poses) ctx.push_back(pose_to_json(p));
  j["context_poses"] = std::move(ctx);
  json boxes = json::array();
  for (Eigen::Index i = 0; i < w.context_boxes.rows(); ++i)
    boxes.push_back({w.context_boxes(i, 0), w.context_boxes(i, 1), w.context_boxes(i, 2),
                     w.context_boxes(i, 3)});
  j["context_boxes"] = std::move(boxes);
  json fut = json::array();
  for (const auto& p : w.future_poses) fut.push_back(pose_to_json(p));
  j["future_poses"] = std::move(fut);
  j["points_file"] = points_file;
  j["points_offset"] = offset;
  return j;
}

}  // namespace

void write_windows_jsonl(const std::string& jsonl_path, const std::string& points_path,
                         std::span<const tokens::TrajectoryWindow> windows) {
  const fs::path jp(jsonl_path);
  if (jp.has_parent_path()) fs::create_directories(jp.parent_path());
  std::ofstream points(points_path, std::ios::binary | std::ios::trunc);
  if (!points) throw IoError("cannot write " + points_path);
  std::ofstream lines(jsonl_path, std::ios::binary | std::ios::trunc);
  if (!lines) throw IoError("cannot write " + jsonl_path);

  const std::string rel = fs::path(points_path).filename().string();
  for (const auto& w : windows) {
    const std::uint64_t off = append_pointcloud(points, w.anchor_points);
    lines << window_to_json(w, rel, off).dump() << "\n";
  }
}

std::vector<tokens::TrajectoryWindow> read_windows_jsonl(const std::string& jsonl_path) {
  std::ifstream lines(jsonl_path);
  if (!lines) throw IoError("cannot open " + jsonl_path);
  const fs::path dir = fs::path(jsonl_path).parent_path();

  std::vector<tokens::TrajectoryWindow> out;
  std::string line;
  std::string points_path;
  std::ifstream points;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(std::string("bad JSONL line: ") + e.what());
    }
    tokens::TrajectoryWindow w;
    w.clip_id = j.at("clip_id").get<std::string>();
    w.fps = j.at("fps").get<double>();
    w.context_len = j.at("C").get<int>();
    w.horizon = j.at("H").get<int>();
    const auto intr = j.at("intrinsics").get<std::vector<double>>();
    if (intr.size() != 4) throw IoError("intrinsics must have 4 entries");
    w.intrinsics = Eigen::Vector4d(intr[0], intr[1], intr[2], intr[3]);
    for (const auto& pj : j.at("context_poses")) w.context_poses.push_back(pose_from_json(pj));
    for (const auto& pj : j.at("future_poses")) w.future_poses.push_back(pose_from_json(pj));
    const auto& bj = j.at("context_boxes");
    w.context_boxes.resize(static_cast<Eigen::Index>(bj.size()), 4);
    for (std::size_t i = 0; i < bj.size(); ++i)
      for (int c = 0; c < 4; ++c) w.context_boxes(static_cast<Eigen::Index>(i), c) = bj[i][static_cast<std::size_t>(c)].get<double>();
    if (static_cast<int>(w.context_poses.size()) != w.context_len ||
        static_cast<int>(w.future_poses.size()) != w.horizon)
      throw IoError("window pose counts do not match C/H: " + w.clip_id);

    const std::string pf = (dir / j.at("points_file").get<std::string>()).string();
    if (pf != points_path) {
      points.close();
      points.clear();
      points.open(pf, std::ios::binary);
      if (!points) throw IoError("cannot open point sidecar " + pf);
      points_path = pf;
    }
    w.anchor_points = read_pointcloud(points, j.at("points_offset").get<std::uint64_t>());
    out.push_back(std::move(w));
  }
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);

  f.write("OFCK", 4);
  write_le<std::uint16_t>(f, 1);
  const std::string header = ckpt.header.dump();
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(header.size()));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));

  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(ckpt.params.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, m] : ckpt.params) {
    write_le<std::uint16_t>(f, static_cast<std::uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(f, static_cast<std::uint32_t>(m.rows()));
    write_le<std::uint32_t>(f, static_cast<std::uint32_t>(m.cols()));
    write_le<std::uint64_t>(f, offset);
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(float);
  }
  for (const auto& [name, m] : ckpt.params) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      write_le<float>(f, static_cast<float>(m.data()[i]));  // column-major
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "OFCK", 4) != 0) throw IoError("bad OFCK magic");
  const auto version = read_le<std::uint16_t>(f);
  if (version != 1) throw IoError("unsupported OFCK version");
  const auto header_len = read_le<std::uint32_t>(f);
  std::string header(header_len, '\0');
  f.read(header.data(), header_len);
  if (!f) throw IoError("truncated checkpoint header");

  Checkpoint ckpt;
  try {
    ckpt.header = json::parse(header);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what());
  }

  const auto n = read_le<std::uint32_t>(f);
  struct Entry {
    std::string name;
    std::uint32_t rows, cols;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = read_le<std::uint16_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    Entry e;
    e.name = std::move(name);
    e.rows = read_le<std::uint32_t>(f);
    e.cols = read_le<std::uint32_t>(f);
    e.offset = read_le<std::uint64_t>(f);
    entries.push_back(std::move(e));
  }
  const std::uint64_t blob_start = static_cast<std::uint64_t>(f.tellg());
  for (const Entry& e : entries) {
    f.seekg(static_cast<std::streamoff>(blob_start + e.offset));
    Eigen::MatrixXd m(e.rows, e.cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(read_le<float>(f));
    ckpt.params.emplace_back(e.name, std::move(m));
  }
  return ckpt;
}

}  // namespace trajdiff::io
