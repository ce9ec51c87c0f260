#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"

#include "bat3d/annotation_store.hpp"
#include "bat3d/dataset_io.hpp"
#include "bat3d/evaluation.hpp"
#include "bat3d/geometry.hpp"

namespace bat3d {

struct ServerConfig {
  std::filesystem::path data_root;
  std::string host = "0.0.0.0";
  int port = 8080;  // 0 picks a free port
  int autosave_secs = 5;
  std::filesystem::path static_dir;  // browser UI assets; optional
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// One loaded sequence: its manifest, the live store, and where the store
/// autosaves.
struct SessionContext {
  SequenceManifest manifest;
  std::unique_ptr<AnnotationStore> store;
  std::filesystem::path save_path;
};

inline Json to_json(const ProjectedBox& pb) {
  Json corners = Json::array();
  for (const auto& c : pb.corners_px) corners.push_back({c.u, c.v});
  return Json{{"camera", pb.camera},
              {"rect", {{"xmin", pb.rect.xmin}, {"ymin", pb.rect.ymin},
                        {"xmax", pb.rect.xmax}, {"ymax", pb.rect.ymax}}},
              {"corners_px", corners},
              {"visible_corner_count", pb.visible_corner_count}};
}

inline Json error_body(const std::string& message, std::string_view reason,
                       const std::string& field = {}) {
  Json j{{"error", message}, {"reason", reason}};
  if (!field.empty()) j["field"] = field;
  return j;
}

/// Request handling behind the HTTP routes, independent of sockets.
/// Sessions are created once at construction; each store serializes its
/// own mutations.
class ApiService {
 public:
  explicit ApiService(const ServerConfig& config) : data_root_(config.data_root) {
    std::error_code ec;
    if (!std::filesystem::is_directory(data_root_, ec)) {
      throw Error(ErrorCode::MissingFile, "data root '" + data_root_.string() + "' is not a readable directory",
                  "data_root");
    }
    std::vector<std::filesystem::path> manifests;
    if (std::filesystem::exists(data_root_ / "manifest.json")) {
      manifests.push_back(data_root_ / "manifest.json");
    }
    for (const auto& entry : std::filesystem::directory_iterator(data_root_, ec)) {
      if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json")) {
        manifests.push_back(entry.path() / "manifest.json");
      }
    }
    if (ec) throw Error(ErrorCode::Io, "cannot list data root: " + ec.message(), "data_root");
    std::sort(manifests.begin(), manifests.end());
    if (manifests.empty()) {
      throw Error(ErrorCode::NotFound, "no manifest.json under '" + data_root_.string() + "'",
                  "data_root");
    }

    const auto now = AnnotationStore::Clock::now();
    for (const auto& path : manifests) {
      auto session = std::make_unique<SessionContext>();
      session->manifest = load_manifest(path);
      session->save_path = path.parent_path() / "annotations.json";
      const FrameIndex frames = session->manifest.frame_count();
      if (std::filesystem::exists(session->save_path)) {
        AnnotationFile saved = load_annotations(session->save_path);
        if (saved.sequence_id != session->manifest.sequence_id) {
          throw Error(ErrorCode::SequenceMismatch,
                      "'" + session->save_path.string() + "' belongs to '" + saved.sequence_id + "'");
        }
        session->store = std::make_unique<AnnotationStore>(saved, frames);
      } else {
        session->store = std::make_unique<AnnotationStore>(session->manifest.sequence_id, frames);
      }
      session->store->enable_autosave(
          {session->save_path, std::chrono::seconds(std::max(0, config.autosave_secs))}, now);
      const std::string id = session->manifest.sequence_id;
      if (!sessions_.emplace(id, std::move(session)).second) {
        throw Error(ErrorCode::InvariantViolation, "duplicate sequence id '" + id + "'", "sequence_id");
      }
    }
  }

  SessionContext* session(const std::string& id) {
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second.get();
  }

  /// Saves every store whose debounce interval has elapsed.
  void autosave_all(AnnotationStore::Clock::time_point now) {
    for (auto& [id, s] : sessions_) {
      try {
        s->store->autosave_tick(now);
      } catch (const Error& e) {
        std::cerr << "autosave of '" << id << "' failed: " << e.what() << "\n";
      }
    }
  }

  // -- endpoints -------------------------------------------------------------

  ApiResponse list_sequences() const {
    Json list = Json::array();
    for (const auto& [id, s] : sessions_) {
      Json cams = Json::array();
      for (const auto& cam : s->manifest.cameras) cams.push_back(cam.name);
      list.push_back({{"sequence_id", id}, {"frame_count", s->manifest.frame_count()}, {"cameras", cams}});
    }
    return json_response(list);
  }

  ApiResponse get_manifest(const std::string& id) {
    return guarded(id, [&](SessionContext& s) { return json_response(to_json(s.manifest)); });
  }

  ApiResponse get_pointcloud(const std::string& id, FrameIndex frame) {
    return guarded(id, [&](SessionContext& s) {
      const auto& rec = frame_record(s, frame);
      const auto points = load_point_cloud(s.manifest.base_dir / rec.pointcloud_path);
      return ApiResponse{200, "application/octet-stream", serialize_point_cloud(points)};
    });
  }

  ApiResponse get_image(const std::string& id, FrameIndex frame, const std::string& camera) {
    return guarded(id, [&](SessionContext& s) {
      const auto& rec = frame_record(s, frame);
      const auto it = rec.image_paths.find(camera);
      if (it == rec.image_paths.end()) {
        throw Error(ErrorCode::NotFound, "no camera '" + camera + "'", "camera");
      }
      const std::filesystem::path path = s.manifest.base_dir / it->second;
      return ApiResponse{200, image_content_type(path), read_file_bytes(path)};
    });
  }

  ApiResponse get_annotations(const std::string& id, FrameIndex frame) {
    return guarded(id, [&](SessionContext& s) {
      frame_record(s, frame);
      return text_response(dump_annotations(s.store->export_frame(frame)));
    });
  }

  /// Replaces the frame's annotation set with the body's entries.
  ApiResponse put_annotations(const std::string& id, FrameIndex frame, const std::string& body) {
    return guarded(id, [&](SessionContext& s) {
      frame_record(s, frame);
      const AnnotationFile file = annotations_from_json(detail::parse_json(body, "request body"));
      if (file.sequence_id != s.manifest.sequence_id) {
        throw Error(ErrorCode::SequenceMismatch, "body is for '" + file.sequence_id + "'", "sequence_id");
      }
      std::vector<Box3D> boxes;
      std::set<TrackId> interpolated;
      for (const auto& [f, list] : file.frames) {
        if (f != frame) {
          throw Error(ErrorCode::Schema, "entry for frame " + std::to_string(f) + " in frame " +
                                             std::to_string(frame) + " request",
                      "frame");
        }
        boxes = list;
      }
      for (const auto& [f, t] : file.interpolated) interpolated.insert(t);
      s.store->replace_frame(frame, std::move(boxes), interpolated);
      return text_response(dump_annotations(s.store->export_frame(frame)));
    });
  }

  /// Adds one box under a fresh track id. Body: {class, center, dims, yaw}.
  ApiResponse create_annotation(const std::string& id, FrameIndex frame, const std::string& body) {
    return guarded(id, [&](SessionContext& s) {
      frame_record(s, frame);
      Json j = detail::parse_json(body, "request body");
      if (j.is_object()) {
        j["frame"] = frame;
        j["track_id"] = 0;
      }
      const Json doc{{"format_version", kAnnotationFormatVersion},
                     {"sequence_id", s.manifest.sequence_id},
                     {"annotations", Json::array({j})}};
      const Box3D box = annotations_from_json(doc).frames.at(frame).front();
      const TrackId track = s.store->create_annotation(frame, box);
      return json_response({{"track_id", track}, {"frame", frame}}, 201);
    });
  }

  ApiResponse mark_keyframe(const std::string& id, FrameIndex frame, TrackId track) {
    return guarded(id, [&](SessionContext& s) {
      s.store->mark_keyframe(frame, track);
      return json_response({{"frame", frame}, {"track_id", track}, {"keyframe", true}});
    });
  }

  ApiResponse interpolate(const std::string& id, TrackId track, const std::string& body) {
    return guarded(id, [&](SessionContext& s) {
      const Json j = detail::parse_json(body, "request body");
      const FrameIndex start = detail::require_integer(j, "start", "body");
      const FrameIndex end = detail::require_integer(j, "end", "body");
      const std::size_t written = s.store->interpolate_range(track, start, end);
      return json_response({{"track_id", track}, {"start", start}, {"end", end}, {"written", written}});
    });
  }

  ApiResponse projections(const std::string& id, FrameIndex frame, TrackId track) {
    return guarded(id, [&](SessionContext& s) {
      frame_record(s, frame);
      const auto box = s.store->get(frame, track);
      if (!box) {
        throw Error(ErrorCode::NotFound, "no annotation for track " + std::to_string(track) +
                                             " in frame " + std::to_string(frame));
      }
      Json list = Json::array();
      for (const auto& cam : s.manifest.cameras) {
        if (auto pb = project_box(cam, *box)) list.push_back(to_json(*pb));
      }
      return json_response(list);
    });
  }

  ApiResponse undo(const std::string& id) {
    return guarded(id, [&](SessionContext& s) { return history_response(s.store->undo()); });
  }

  ApiResponse redo(const std::string& id) {
    return guarded(id, [&](SessionContext& s) { return history_response(s.store->redo()); });
  }

  /// Body: {gt_path, threshold?, schema?, track_consistent?}. Relative
  /// paths resolve against the data root.
  ApiResponse evaluate(const std::string& id, const std::string& body) {
    return guarded(id, [&](SessionContext& s) {
      const Json j = detail::parse_json(body, "request body");
      std::filesystem::path gt_path = detail::require_string(j, "gt_path", "body");
      if (gt_path.is_relative()) gt_path = data_root_ / gt_path;
      EvalOptions options;
      if (j.contains("threshold")) options.iou_threshold = detail::require_number(j, "threshold", "body");
      if (j.contains("track_consistent")) {
        if (!j["track_consistent"].is_boolean()) {
          throw Error(ErrorCode::Malformed, "'track_consistent' must be a boolean", "body.track_consistent");
        }
        options.track_consistent = j["track_consistent"].get<bool>();
      }
      const auto schema = parse_ground_truth_schema(
          j.contains("schema") ? detail::require_string(j, "schema", "body") : "native");
      AnnotationFile gt;
      try {
        gt = import_ground_truth(gt_path, schema, s.manifest.sequence_id);
      } catch (const Error& e) {
        // Any import failure is the client's to fix.
        throw Error(e.code() == ErrorCode::MissingFile ? ErrorCode::Malformed : e.code(), e.what(),
                    e.field().empty() ? "gt_path" : e.field());
      }
      return text_response(to_json(evaluate_sequence(s.store->export_file(), gt, options)).dump(2) + "\n");
    });
  }

  ApiResponse export_annotations(const std::string& id) {
    return guarded(id, [&](SessionContext& s) { return text_response(dump_annotations(s.store->export_file())); });
  }

 private:
  static ApiResponse json_response(const Json& j, int status = 200) {
    return {status, "application/json", j.dump(2) + "\n"};
  }
  static ApiResponse text_response(std::string body) {
    return {200, "application/json", std::move(body)};
  }

  static ApiResponse history_response(const std::optional<EditOp>& op) {
    if (!op) return json_response({{"applied", false}});
    return json_response({{"applied", true},
                          {"kind", to_string(op->kind)},
                          {"frame", op->frame},
                          {"track_id", op->track_id},
                          {"cells", op->after.size()}});
  }

  static const FrameRecord& frame_record(const SessionContext& s, FrameIndex frame) {
    if (frame < 0 || frame >= s.manifest.frame_count()) {
      throw Error(ErrorCode::NotFound, "frame " + std::to_string(frame) + " does not exist", "frame");
    }
    return s.manifest.frames[static_cast<std::size_t>(frame)];
  }

  static std::string image_content_type(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".png") return "image/png";
    return "application/octet-stream";
  }

  static int status_for(ErrorCode code) {
    switch (code) {
      case ErrorCode::NotFound: return 404;
      case ErrorCode::Io: return 500;
      default: return 400;
    }
  }

  template <typename Fn>
  ApiResponse guarded(const std::string& id, Fn&& fn) {
    SessionContext* s = session(id);
    if (!s) {
      return json_response(error_body("unknown sequence '" + id + "'", "not-found", "sequence_id"), 404);
    }
    try {
      return fn(*s);
    } catch (const Error& e) {
      return json_response(error_body(e.what(), to_string(e.code()), e.field()), status_for(e.code()));
    }
  }

  std::filesystem::path data_root_;
  std::map<std::string, std::unique_ptr<SessionContext>> sessions_;
};

inline constexpr std::string_view kPlaceholderIndex =
    "<!doctype html><html><head><title>3D box annotation server</title></head>"
    "<body><h1>3D box annotation server</h1><p>The JSON API lives under "
    "<code>/api/sequences</code>. Start the server with <code>--static-dir</code> "
    "to serve the browser annotator here.</p></body></html>\n";

/// HTTP front end for ApiService plus the autosave loop.
class AnnotationServer {
 public:
  explicit AnnotationServer(ServerConfig config)
      : config_(std::move(config)), api_(config_) {
    route();
  }

  ~AnnotationServer() { stop(); }
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  ApiService& api() { return api_; }

  /// Binds and starts serving on background threads. Returns the port.
  int start() {
    if (config_.port == 0) {
      port_ = http_.bind_to_any_port(config_.host);
      if (port_ <= 0) throw Error(ErrorCode::Io, "cannot bind " + config_.host, "port");
    } else {
      if (!http_.bind_to_port(config_.host, config_.port)) {
        throw Error(ErrorCode::Io, "port " + std::to_string(config_.port) + " is in use", "port");
      }
      port_ = config_.port;
    }
    listener_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    autosaver_ = std::thread([this] {
      std::unique_lock lock(stop_mutex_);
      while (!stopping_) {
        stop_cv_.wait_for(lock, std::chrono::milliseconds(500));
        lock.unlock();
        api_.autosave_all(AnnotationStore::Clock::now());
        lock.lock();
      }
    });
    return port_;
  }

  void wait() {
    if (listener_.joinable()) listener_.join();
  }

  /// Stops serving and flushes unsaved annotations regardless of debounce.
  void stop() {
    {
      std::scoped_lock lock(stop_mutex_);
      if (stopping_) return;
      stopping_ = true;
    }
    stop_cv_.notify_all();
    http_.stop();
    if (listener_.joinable()) listener_.join();
    if (autosaver_.joinable()) autosaver_.join();
    api_.autosave_all(AnnotationStore::Clock::now() + std::chrono::hours(24));
  }

  int port() const { return port_; }

 private:
  static void reply(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  }

  static FrameIndex as_index(const std::string& s) { return std::stoll(s); }
  static TrackId as_track(const std::string& s) {
    const auto v = std::stoull(s);
    if (v > std::numeric_limits<TrackId>::max()) throw std::out_of_range("track id");
    return static_cast<TrackId>(v);
  }

  void route() {
    const std::string seq = R"(/api/sequences/([^/]+))";
    const std::string frame = seq + R"(/frames/(\d+))";

    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::out_of_range&) {
        res.status = 404;
        res.set_content(error_body("index out of range", "not-found").dump(2) + "\n", "application/json");
        return;
      } catch (const std::exception& e) {
        what = e.what();
      }
      res.status = 500;
      res.set_content(error_body(what, "internal").dump(2) + "\n", "application/json");
    });

    http_.Get("/api/sequences", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, api_.list_sequences());
    });
    http_.Get(seq + "/manifest", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.get_manifest(req.matches[1]));
    });
    http_.Get(seq + "/export", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.export_annotations(req.matches[1]));
    });
    http_.Get(frame + "/pointcloud", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.get_pointcloud(req.matches[1], as_index(req.matches[2])));
    });
    http_.Get(frame + "/images/([^/]+)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.get_image(req.matches[1], as_index(req.matches[2]), req.matches[3]));
    });
    http_.Get(frame + "/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.get_annotations(req.matches[1], as_index(req.matches[2])));
    });
    http_.Put(frame + "/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.put_annotations(req.matches[1], as_index(req.matches[2]), req.body));
    });
    http_.Post(frame + "/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.create_annotation(req.matches[1], as_index(req.matches[2]), req.body));
    });
    http_.Get(frame + R"(/tracks/(\d+)/projections)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.projections(req.matches[1], as_index(req.matches[2]), as_track(req.matches[3])));
    });
    http_.Post(frame + R"(/tracks/(\d+)/keyframe)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.mark_keyframe(req.matches[1], as_index(req.matches[2]), as_track(req.matches[3])));
    });
    http_.Post(seq + R"(/tracks/(\d+)/interpolate)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.interpolate(req.matches[1], as_track(req.matches[2]), req.body));
    });
    http_.Post(seq + "/undo", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.undo(req.matches[1]));
    });
    http_.Post(seq + "/redo", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.redo(req.matches[1]));
    });
    http_.Post(seq + "/evaluate", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, api_.evaluate(req.matches[1], req.body));
    });

    if (!config_.static_dir.empty()) {
      if (!http_.set_mount_point("/", config_.static_dir.string())) {
        throw Error(ErrorCode::MissingFile, "static dir '" + config_.static_dir.string() + "' not found",
                    "static_dir");
      }
    } else {
      http_.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(std::string(kPlaceholderIndex), "text/html");
      });
    }
  }

  ServerConfig config_;
  ApiService api_;
  httplib::Server http_;
  std::thread listener_;
  std::thread autosaver_;
  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
  int port_ = 0;
};

}  // namespace bat3d
