#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajdiff/tokens.hpp"

namespace trajdiff::io {

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// One window per line; point clouds go to a shared binary sidecar referenced
/// by (points_file, points_offset). points_file is stored relative to the
/// JSONL's directory.
void write_windows_jsonl(const std::string& jsonl_path, const std::string& points_path,
                         std::span<const tokens::TrajectoryWindow> windows);
std::vector<tokens::TrajectoryWindow> read_windows_jsonl(const std::string& jsonl_path);

/// OFPC record: magic "OFPC", u16 version = 1, u32 count, then count x 6
/// little-endian float32 (x, y, z, xo, yo, zo). Returns the record's byte
/// offset in the stream.
std::uint64_t append_pointcloud(std::ostream& os, const Eigen::MatrixXd& pts);
Eigen::MatrixXd read_pointcloud(std::istream& is, std::uint64_t offset);

/// Checkpoint: magic "OFCK", u16 version, u32 header length + JSON header,
/// then a name/shape/offset table and float32 little-endian blobs.
/// save(load(x)) is byte-identical to x.
struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json pose_to_json(const se3::Pose& p);
se3::Pose pose_from_json(const nlohmann::json& j);

nlohmann::json stats_to_json(const tokens::TokenStats& s);
tokens::TokenStats stats_from_json(const nlohmann::json& j);

}  // namespace trajdiff::io
