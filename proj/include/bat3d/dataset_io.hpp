#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "bat3d/error.hpp"
#include "bat3d/geometry.hpp"

namespace bat3d {

using Json = nlohmann::json;

inline constexpr int kAnnotationFormatVersion = 1;

struct FrameRecord {
  FrameIndex index = 0;
  std::int64_t timestamp_us = 0;
  std::string pointcloud_path;
  std::map<std::string, std::string> image_paths;  // camera name -> relative path

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct SequenceManifest {
  std::string sequence_id;
  std::vector<FrameRecord> frames;
  std::vector<CameraModel> cameras;
  std::filesystem::path base_dir;  // relative paths resolve against this

  FrameIndex frame_count() const { return static_cast<FrameIndex>(frames.size()); }
  const CameraModel* camera(const std::string& name) const {
    for (const auto& cam : cameras) {
      if (cam.name == name) return &cam;
    }
    return nullptr;
  }
};

/// One sequence's labels. Entries listed in `interpolated` were produced by
/// interpolation; every other entry is a keyframe.
struct AnnotationFile {
  int format_version = kAnnotationFormatVersion;
  std::string sequence_id;
  std::map<FrameIndex, std::vector<Box3D>> frames;  // each list sorted by track_id
  std::set<std::pair<FrameIndex, TrackId>> interpolated;

  std::size_t box_count() const {
    std::size_t n = 0;
    for (const auto& [frame, boxes] : frames) n += boxes.size();
    return n;
  }
  friend bool operator==(const AnnotationFile&, const AnnotationFile&) = default;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open '" + path.string() + "'", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// see either the old or the new content.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + tmp.string() + "'", path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "write failed for '" + tmp.string() + "'", path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot replace '" + path.string() + "'", path.string());
  }
}

namespace detail {

inline Json parse_json(std::string_view text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::Malformed, what + " is not valid JSON: " + e.what());
  }
}

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw Error(ErrorCode::Malformed, "missing key '" + std::string(key) + "'",
                where.empty() ? key : where + "." + key);
  }
  return obj.at(key);
}

inline double require_number(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_number()) {
    throw Error(ErrorCode::Malformed, "'" + std::string(key) + "' must be a number",
                where + "." + key);
  }
  return v.get<double>();
}

inline std::int64_t require_integer(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_number_integer()) {
    throw Error(ErrorCode::Malformed, "'" + std::string(key) + "' must be an integer",
                where + "." + key);
  }
  return v.get<std::int64_t>();
}

inline std::string require_string(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_string()) {
    throw Error(ErrorCode::Malformed, "'" + std::string(key) + "' must be a string",
                where + "." + key);
  }
  return v.get<std::string>();
}

template <std::size_t N>
std::array<double, N> require_numbers(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  const std::string field = where + "." + key;
  if (!v.is_array() || v.size() != N) {
    throw Error(ErrorCode::Malformed,
                "'" + std::string(key) + "' must hold " + std::to_string(N) + " numbers", field);
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number()) {
      throw Error(ErrorCode::Malformed, "'" + std::string(key) + "' must hold numbers", field);
    }
    out[i] = v[i].get<double>();
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Manifest

inline Json to_json(const CameraModel& cam) {
  return Json{{"name", cam.name},
              {"intrinsics", cam.intrinsics.m},
              {"rotation", cam.extrinsics.rotation.m},
              {"translation", {cam.extrinsics.translation.x, cam.extrinsics.translation.y,
                               cam.extrinsics.translation.z}},
              {"width", cam.width},
              {"height", cam.height}};
}

inline CameraModel camera_from_json(const Json& j, const std::string& where) {
  CameraModel cam;
  cam.name = detail::require_string(j, "name", where);
  const std::string at = "cameras[" + cam.name + "]";
  cam.intrinsics.m = detail::require_numbers<9>(j, "intrinsics", at);
  cam.extrinsics.rotation.m = detail::require_numbers<9>(j, "rotation", at);
  const auto t = detail::require_numbers<3>(j, "translation", at);
  cam.extrinsics.translation = {t[0], t[1], t[2]};
  cam.width = static_cast<int>(detail::require_integer(j, "width", at));
  cam.height = static_cast<int>(detail::require_integer(j, "height", at));
  validate(cam);
  return cam;
}

inline Json to_json(const SequenceManifest& manifest) {
  Json frames = Json::array();
  for (const auto& f : manifest.frames) {
    frames.push_back({{"index", f.index},
                      {"timestamp", f.timestamp_us},
                      {"pointcloud", f.pointcloud_path},
                      {"images", f.image_paths}});
  }
  Json cameras = Json::array();
  for (const auto& cam : manifest.cameras) cameras.push_back(to_json(cam));
  return Json{{"sequence_id", manifest.sequence_id},
              {"frame_count", manifest.frame_count()},
              {"frames", frames},
              {"cameras", cameras}};
}

/// Parses and validates a manifest document. Frames must be listed with
/// indices 0, 1, 2, ... and each must name an image for every camera.
inline SequenceManifest manifest_from_json(const Json& j, std::filesystem::path base_dir = {}) {
  if (!j.is_object()) throw Error(ErrorCode::Malformed, "manifest must be an object");
  SequenceManifest m;
  m.base_dir = std::move(base_dir);
  m.sequence_id = detail::require_string(j, "sequence_id", "");
  if (m.sequence_id.empty()) {
    throw Error(ErrorCode::InvariantViolation, "sequence_id is empty", "sequence_id");
  }

  const Json& cams = detail::require(j, "cameras", "");
  if (!cams.is_array()) throw Error(ErrorCode::Malformed, "'cameras' must be an array", "cameras");
  std::set<std::string> names;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CameraModel cam = camera_from_json(cams[i], "cameras[" + std::to_string(i) + "]");
    if (!names.insert(cam.name).second) {
      throw Error(ErrorCode::InvariantViolation, "duplicate camera '" + cam.name + "'",
                  "cameras[" + cam.name + "].name");
    }
    m.cameras.push_back(std::move(cam));
  }

  const Json& frames = detail::require(j, "frames", "");
  if (!frames.is_array()) throw Error(ErrorCode::Malformed, "'frames' must be an array", "frames");
  if (frames.empty()) throw Error(ErrorCode::InvariantViolation, "no frames", "frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string at = "frames[" + std::to_string(i) + "]";
    FrameRecord f;
    f.index = detail::require_integer(frames[i], "index", at);
    if (f.index != static_cast<FrameIndex>(i)) {
      throw Error(ErrorCode::InvariantViolation,
                  "frame index " + std::to_string(f.index) + " at position " + std::to_string(i),
                  at + ".index");
    }
    f.timestamp_us = detail::require_integer(frames[i], "timestamp", at);
    f.pointcloud_path = detail::require_string(frames[i], "pointcloud", at);
    if (f.pointcloud_path.empty()) {
      throw Error(ErrorCode::InvariantViolation, "empty point cloud path", at + ".pointcloud");
    }
    const Json& images = detail::require(frames[i], "images", at);
    if (!images.is_object()) {
      throw Error(ErrorCode::Malformed, "'images' must be an object", at + ".images");
    }
    for (const auto& [cam, path] : images.items()) {
      if (!path.is_string() || path.get<std::string>().empty()) {
        throw Error(ErrorCode::InvariantViolation, "bad image path for camera '" + cam + "'",
                    at + ".images." + cam);
      }
      if (!names.contains(cam)) {
        throw Error(ErrorCode::InvariantViolation, "image for undeclared camera '" + cam + "'",
                    at + ".images." + cam);
      }
      f.image_paths[cam] = path.get<std::string>();
    }
    for (const auto& name : names) {
      if (!f.image_paths.contains(name)) {
        throw Error(ErrorCode::InvariantViolation, "no image for camera '" + name + "'",
                    at + ".images." + name);
      }
    }
    m.frames.push_back(std::move(f));
  }

  if (j.contains("frame_count")) {
    const auto declared = detail::require_integer(j, "frame_count", "");
    if (declared != m.frame_count()) {
      throw Error(ErrorCode::InvariantViolation,
                  "frame_count " + std::to_string(declared) + " but " +
                      std::to_string(m.frame_count()) + " frames listed",
                  "frame_count");
    }
  }
  return m;
}

inline SequenceManifest load_manifest(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  return manifest_from_json(detail::parse_json(text, "manifest '" + path.string() + "'"),
                            path.parent_path());
}

// ---------------------------------------------------------------------------
// Point clouds

struct PointXYZI {
  float x = 0.f;
  float y = 0.f;
  float z = 0.f;
  float intensity = 0.f;
  friend bool operator==(const PointXYZI&, const PointXYZI&) = default;
};

inline constexpr std::size_t kPointRecordBytes = 16;
inline constexpr std::string_view kAsciiCloudHeader = "x y z intensity";

namespace detail {

inline float load_le_float(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

inline void store_le_float(char* p, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  std::memcpy(p, &bits, 4);
}

inline void check_finite(const PointXYZI& p, std::size_t index) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
      !std::isfinite(p.intensity)) {
    throw Error(ErrorCode::NonFinite, "non-finite value in point " + std::to_string(index),
                "point[" + std::to_string(index) + "]");
  }
}

inline bool is_ascii_cloud(std::string_view bytes) {
  const auto start = bytes.find_first_not_of(" \t\r\n");
  return start != std::string_view::npos &&
         bytes.substr(start).starts_with(kAsciiCloudHeader);
}

inline std::vector<PointXYZI> parse_ascii_cloud(std::string_view text) {
  std::vector<PointXYZI> points;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::array<float, 4> v{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t k = 0; k < 4; ++k) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == ',')) ++p;
      auto [next, ec] = std::from_chars(p, end, v[k]);
      if (ec != std::errc{}) {
        throw Error(ErrorCode::Malformed, "bad point on line " + std::to_string(line_no),
                    "line " + std::to_string(line_no));
      }
      p = next;
    }
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    if (p != end) {
      throw Error(ErrorCode::Malformed, "extra values on line " + std::to_string(line_no),
                  "line " + std::to_string(line_no));
    }
    PointXYZI pt{v[0], v[1], v[2], v[3]};
    check_finite(pt, points.size());
    points.push_back(pt);
  }
  return points;
}

}  // namespace detail

/// Decodes either packed little-endian float32 [x y z intensity] records or
/// the ASCII form with a "x y z intensity" header line.
inline std::vector<PointXYZI> parse_point_cloud(std::string_view bytes) {
  if (detail::is_ascii_cloud(bytes)) return detail::parse_ascii_cloud(bytes);
  if (bytes.size() % kPointRecordBytes != 0) {
    throw Error(ErrorCode::Truncated,
                std::to_string(bytes.size()) + " bytes is not a whole number of 16-byte points");
  }
  std::vector<PointXYZI> points(bytes.size() / kPointRecordBytes);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const char* rec = bytes.data() + i * kPointRecordBytes;
    points[i] = {detail::load_le_float(rec), detail::load_le_float(rec + 4),
                 detail::load_le_float(rec + 8), detail::load_le_float(rec + 12)};
    detail::check_finite(points[i], i);
  }
  return points;
}

inline std::vector<PointXYZI> load_point_cloud(const std::filesystem::path& path) {
  return parse_point_cloud(read_file_bytes(path));
}

inline std::string serialize_point_cloud(const std::vector<PointXYZI>& points) {
  std::string bytes(points.size() * kPointRecordBytes, '\0');
  for (std::size_t i = 0; i < points.size(); ++i) {
    char* rec = bytes.data() + i * kPointRecordBytes;
    detail::store_le_float(rec, points[i].x);
    detail::store_le_float(rec + 4, points[i].y);
    detail::store_le_float(rec + 8, points[i].z);
    detail::store_le_float(rec + 12, points[i].intensity);
  }
  return bytes;
}

inline std::vector<Vec3> positions(const std::vector<PointXYZI>& points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({p.x, p.y, p.z});
  return out;
}

// ---------------------------------------------------------------------------
// Annotation files

inline Json to_json(const Box3D& box, FrameIndex frame, bool keyframe = true) {
  Json j{{"frame", frame},
         {"track_id", box.track_id},
         {"class", to_string(box.label)},
         {"center", {box.center.x, box.center.y, box.center.z}},
         {"dims", {box.dims.x, box.dims.y, box.dims.z}},
         {"yaw", box.yaw}};
  if (!keyframe) j["keyframe"] = false;
  return j;
}

inline Json to_json(const AnnotationFile& file) {
  Json entries = Json::array();
  for (const auto& [frame, boxes] : file.frames) {
    for (const auto& box : boxes) {
      entries.push_back(to_json(box, frame, !file.interpolated.contains({frame, box.track_id})));
    }
  }
  return Json{{"format_version", file.format_version},
              {"sequence_id", file.sequence_id},
              {"annotations", entries}};
}

/// Sorts each frame's boxes by track and rejects duplicate (frame, track)
/// entries, invalid boxes and tracks whose class changes between frames.
inline void normalize(AnnotationFile& file) {
  std::map<TrackId, ClassLabel> track_class;
  for (auto& [frame, boxes] : file.frames) {
    std::sort(boxes.begin(), boxes.end(),
              [](const Box3D& a, const Box3D& b) { return a.track_id < b.track_id; });
    const std::string at = "frame " + std::to_string(frame);
    if (frame < 0) throw Error(ErrorCode::Schema, "negative frame index", at);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      Box3D& box = boxes[i];
      const std::string field = at + " track " + std::to_string(box.track_id);
      if (i > 0 && boxes[i - 1].track_id == box.track_id) {
        throw Error(ErrorCode::Schema, "duplicate track in frame", field);
      }
      box.yaw = wrap_angle(box.yaw);
      if (!is_valid(box)) throw Error(ErrorCode::Schema, "invalid box geometry", field);
      auto [it, inserted] = track_class.emplace(box.track_id, box.label);
      if (!inserted && it->second != box.label) {
        throw Error(ErrorCode::Schema, "track changes class between frames", field);
      }
    }
  }
  std::erase_if(file.frames, [](const auto& kv) { return kv.second.empty(); });
}

inline AnnotationFile annotations_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Schema, "annotation document must be an object");
  AnnotationFile file;
  if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
    throw Error(ErrorCode::Schema, "missing integer format_version", "format_version");
  }
  file.format_version = j["format_version"].get<int>();
  if (file.format_version != kAnnotationFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "unsupported format_version " + std::to_string(file.format_version),
                "format_version");
  }
  if (!j.contains("sequence_id") || !j["sequence_id"].is_string()) {
    throw Error(ErrorCode::Schema, "missing string sequence_id", "sequence_id");
  }
  file.sequence_id = j["sequence_id"].get<std::string>();
  if (!j.contains("annotations") || !j["annotations"].is_array()) {
    throw Error(ErrorCode::Schema, "missing annotations array", "annotations");
  }
  const Json& entries = j["annotations"];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Json& e = entries[i];
    const std::string at = "annotations[" + std::to_string(i) + "]";
    try {
      const auto frame = detail::require_integer(e, "frame", at);
      const auto track = detail::require_integer(e, "track_id", at);
      if (track < 0 || track > std::numeric_limits<TrackId>::max()) {
        throw Error(ErrorCode::Schema, "track_id out of range", at + ".track_id");
      }
      const std::string cls = detail::require_string(e, "class", at);
      const auto label = parse_class_label(cls);
      if (!label) throw Error(ErrorCode::Schema, "unknown class '" + cls + "'", at + ".class");
      const auto c = detail::require_numbers<3>(e, "center", at);
      const auto d = detail::require_numbers<3>(e, "dims", at);
      Box3D box{{c[0], c[1], c[2]}, {d[0], d[1], d[2]}, detail::require_number(e, "yaw", at),
                *label, static_cast<TrackId>(track)};
      if (e.contains("keyframe")) {
        if (!e["keyframe"].is_boolean()) {
          throw Error(ErrorCode::Schema, "'keyframe' must be a boolean", at + ".keyframe");
        }
        if (!e["keyframe"].get<bool>()) file.interpolated.insert({frame, box.track_id});
      }
      file.frames[frame].push_back(box);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::Malformed) throw Error(ErrorCode::Schema, err.what(), err.field());
      throw;
    }
  }
  normalize(file);
  return file;
}

inline std::string dump_annotations(const AnnotationFile& file) { return to_json(file).dump(2) + "\n"; }

inline void save_annotations(const AnnotationFile& file, const std::filesystem::path& path) {
  write_file_atomic(path, dump_annotations(file));
}

inline AnnotationFile load_annotations(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  return annotations_from_json(detail::parse_json(text, "annotation file '" + path.string() + "'"));
}

// ---------------------------------------------------------------------------
// Ground-truth import

enum class GroundTruthSchema { Native, ExternalBoxes };

inline GroundTruthSchema parse_ground_truth_schema(std::string_view name) {
  if (name == "native") return GroundTruthSchema::Native;
  if (name == "external-boxes") return GroundTruthSchema::ExternalBoxes;
  throw Error(ErrorCode::UnknownSchema, "unknown ground-truth schema '" + std::string(name) + "'");
}

/// Flat table, one box per row: frame, class, cx, cy, cz, l, w, h, yaw,
/// track. Fields separated by commas or whitespace; an optional header row
/// and '#' comment lines are skipped.
inline AnnotationFile parse_box_table(std::string_view text, std::string sequence_id) {
  AnnotationFile file;
  file.sequence_id = std::move(sequence_id);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t row = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++row;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty() || tok[0].starts_with("#")) continue;
    const bool header = first_content && tok[0] == "frame";
    first_content = false;
    if (header) continue;

    const std::string at = "row " + std::to_string(row);
    if (tok.size() != 10) {
      throw Error(ErrorCode::Malformed, at + ": expected 10 fields, got " + std::to_string(tok.size()), at);
    }
    auto number = [&](std::size_t k) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(tok[k].data(), tok[k].data() + tok[k].size(), v);
      if (ec != std::errc{} || p != tok[k].data() + tok[k].size() || !std::isfinite(v)) {
        throw Error(ErrorCode::Malformed, at + ": bad number '" + tok[k] + "'", at);
      }
      return v;
    };
    auto integer = [&](std::size_t k) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(tok[k].data(), tok[k].data() + tok[k].size(), v);
      if (ec != std::errc{} || p != tok[k].data() + tok[k].size() || v < 0) {
        throw Error(ErrorCode::Malformed, at + ": bad integer '" + tok[k] + "'", at);
      }
      return v;
    };
    const auto label = parse_class_label(tok[1]);
    if (!label) throw Error(ErrorCode::Malformed, at + ": unknown class '" + tok[1] + "'", at);
    const auto track = integer(9);
    if (track > std::numeric_limits<TrackId>::max()) {
      throw Error(ErrorCode::Malformed, at + ": track id out of range", at);
    }
    Box3D box{{number(2), number(3), number(4)},
              {number(5), number(6), number(7)},
              wrap_angle(number(8)),
              *label,
              static_cast<TrackId>(track)};
    if (!is_valid(box)) throw Error(ErrorCode::Malformed, at + ": invalid box", at);
    file.frames[integer(0)].push_back(box);
  }
  try {
    normalize(file);
  } catch (const Error& e) {
    throw Error(ErrorCode::Malformed, e.what(), e.field());
  }
  return file;
}

/// Reads reference annotations. Flat tables carry no sequence id; they take
/// `sequence_id` when given, otherwise the file stem.
inline AnnotationFile import_ground_truth(const std::filesystem::path& path,
                                          GroundTruthSchema schema,
                                          std::optional<std::string> sequence_id = std::nullopt) {
  if (schema == GroundTruthSchema::Native) return load_annotations(path);
  return parse_box_table(read_file_bytes(path), sequence_id.value_or(path.stem().string()));
}

}  // namespace bat3d
