#pragma once

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bat3d/annotation_store.hpp"
#include "bat3d/dataset_io.hpp"
#include "bat3d/evaluation.hpp"
#include "bat3d/ground.hpp"
#include "bat3d/server.hpp"

namespace bat3d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

inline constexpr std::string_view kProjectionHeader =
    "frame,track_id,class,xmin,ymin,xmax,ymax,visible_corners";

/// Six significant digits, for terminal output only.
inline std::string short_number(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

inline void print_metrics(std::ostream& out, const MetricsReport& report) {
  const auto& a = report.aggregate;
  out << "iou_threshold " << short_number(report.iou_threshold) << "\n"
      << "frames " << report.per_frame.size() << "\n"
      << "gt_boxes " << a.gt_count << "\n"
      << "tp " << a.tp << "\nfp " << a.fp << "\nfn " << a.fn << "\n"
      << "mean_iou " << short_number(a.mean_iou) << "\n"
      << "frac_iou_above_0_6 " << short_number(a.frac_iou_above_0_6) << "\n"
      << "precision " << short_number(a.precision) << "\n"
      << "recall " << short_number(a.recall) << "\n"
      << "f1 " << short_number(a.f1) << "\n";
}

/// One CSV per camera: a row for every annotation visible in that camera.
inline std::map<std::string, std::string> projection_tables(const SequenceManifest& manifest,
                                                            const AnnotationFile& annotations) {
  std::map<std::string, std::string> tables;
  for (const auto& cam : manifest.cameras) tables[cam.name] = std::string(kProjectionHeader) + "\n";
  for (const auto& [frame, boxes] : annotations.frames) {
    if (frame >= manifest.frame_count()) {
      throw Error(ErrorCode::OutOfRange, "annotation frame " + std::to_string(frame) + " is past the sequence end",
                  "frame");
    }
    for (const auto& box : boxes) {
      for (const auto& cam : manifest.cameras) {
        const auto pb = project_box(cam, box);
        if (!pb) continue;
        tables[cam.name] += std::to_string(frame) + "," + std::to_string(box.track_id) + "," +
                            std::string(to_string(box.label)) + "," + format_exact(pb->rect.xmin) + "," +
                            format_exact(pb->rect.ymin) + "," + format_exact(pb->rect.xmax) + "," +
                            format_exact(pb->rect.ymax) + "," + std::to_string(pb->visible_corner_count) +
                            "\n";
      }
    }
  }
  return tables;
}

namespace detail {

inline std::atomic<bool>& stop_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}

extern "C" inline void on_stop_signal(int) { stop_requested() = true; }

inline FrameIndex frame_span(const AnnotationFile& file, FrameIndex at_least) {
  FrameIndex n = at_least;
  if (!file.frames.empty()) n = std::max(n, file.frames.rbegin()->first + 1);
  return n;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns 0, 1 for domain errors or
/// 2 for usage errors.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"3D bounding box annotation tools", "bat3d"};
  app.require_subcommand(1, 1);

  ServerConfig serve_cfg;
  std::string static_dir;
  auto* serve = app.add_subcommand("serve", "Run the annotation server");
  serve->add_option("--data-root", serve_cfg.data_root, "Directory holding sequences")->required();
  serve->add_option("--port", serve_cfg.port, "TCP port, 0 for any")->capture_default_str();
  serve->add_option("--host", serve_cfg.host, "Bind address")->capture_default_str();
  serve->add_option("--autosave-secs", serve_cfg.autosave_secs, "Autosave debounce")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  serve->add_option("--static-dir", static_dir, "Browser UI assets");

  std::string pred_path, gt_path, series_path, report_path, schema_name = "native";
  double threshold = 0.6;
  bool track_consistent = false;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  evaluate->add_option("--pred", pred_path, "Predicted annotations")->required();
  evaluate->add_option("--gt", gt_path, "Ground truth")->required();
  evaluate->add_option("--iou-threshold", threshold, "Match threshold")->capture_default_str();
  evaluate->add_option("--out", series_path, "Per-frame metric series (CSV)")->required();
  evaluate->add_option("--schema", schema_name, "Ground truth schema: native or external-boxes")
      ->capture_default_str();
  evaluate->add_option("--report", report_path, "Full report as JSON");
  evaluate->add_flag("--track-consistent", track_consistent, "Keep a track matched to one gt track");

  std::string ann_path, out_path;
  std::int64_t track = 0, start = 0, end = 0;
  auto* interpolate = app.add_subcommand("interpolate", "Fill a track between two keyframes");
  interpolate->add_option("--annotations", ann_path, "Annotation file")->required();
  interpolate->add_option("--track", track, "Track id")->required()->check(CLI::Range(0LL, 4294967295LL));
  interpolate->add_option("--start", start, "Start keyframe")->required();
  interpolate->add_option("--end", end, "End keyframe")->required();
  interpolate->add_option("--out", out_path, "Output annotation file")->required();

  std::string manifest_path, out_dir;
  auto* project = app.add_subcommand("project", "Write per-camera 2D labels for every annotation");
  project->add_option("--manifest", manifest_path, "Sequence manifest")->required();
  project->add_option("--annotations", ann_path, "Annotation file")->required();
  project->add_option("--out-dir", out_dir, "Directory for <camera>.csv files")->required();

  std::string cloud_path;
  double margin = 0.2;
  std::uint32_t seed = 42;
  auto* ground = app.add_subcommand("ground-filter", "Remove ground points from a point cloud");
  ground->add_option("--pointcloud", cloud_path, "Input cloud")->required();
  ground->add_option("--margin", margin, "Height above the plane to keep")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  ground->add_option("--seed", seed, "RANSAC seed")->capture_default_str();
  ground->add_option("--out", out_path, "Output cloud (binary)")->required();

  std::string in_path, sequence_id;
  auto* convert = app.add_subcommand("convert", "Convert ground truth to the annotation format");
  convert->add_option("--in", in_path, "Input file")->required();
  convert->add_option("--schema", schema_name, "native or external-boxes")->required();
  convert->add_option("--out", out_path, "Output annotation file")->required();
  convert->add_option("--sequence-id", sequence_id, "Sequence id for flat tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*serve) {
      serve_cfg.static_dir = static_dir;
      AnnotationServer server(serve_cfg);
      detail::stop_requested() = false;
      std::signal(SIGINT, detail::on_stop_signal);
      std::signal(SIGTERM, detail::on_stop_signal);
      const int port = server.start();
      out << "serving " << serve_cfg.data_root.string() << " on " << serve_cfg.host << ":" << port << std::endl;
      while (!detail::stop_requested()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      out << "stopped" << std::endl;
    } else if (*evaluate) {
      const AnnotationFile pred = load_annotations(pred_path);
      const AnnotationFile gt = import_ground_truth(gt_path, parse_ground_truth_schema(schema_name), pred.sequence_id);
      const MetricsReport report = evaluate_sequence(pred, gt, {threshold, track_consistent});
      export_metric_series(report, series_path);
      if (!report_path.empty()) write_file_atomic(report_path, to_json(report).dump(2) + "\n");
      print_metrics(out, report);
    } else if (*interpolate) {
      const AnnotationFile file = load_annotations(ann_path);
      AnnotationStore store(file, detail::frame_span(file, std::max(start, end) + 1));
      const std::size_t written = store.interpolate_range(static_cast<TrackId>(track), start, end);
      save_annotations(store.export_file(), out_path);
      out << "interpolated " << written << " frames of track " << track << "\n";
    } else if (*project) {
      const SequenceManifest manifest = load_manifest(manifest_path);
      const AnnotationFile annotations = load_annotations(ann_path);
      if (annotations.sequence_id != manifest.sequence_id) {
        throw Error(ErrorCode::SequenceMismatch,
                    "annotations are for '" + annotations.sequence_id + "', manifest is '" + manifest.sequence_id + "'");
      }
      std::error_code ec;
      std::filesystem::create_directories(out_dir, ec);
      if (ec) throw Error(ErrorCode::Io, "cannot create '" + out_dir + "': " + ec.message(), "out-dir");
      for (const auto& [camera, table] : projection_tables(manifest, annotations)) {
        const auto path = std::filesystem::path(out_dir) / (camera + ".csv");
        write_file_atomic(path, table);
        out << camera << " " << std::count(table.begin(), table.end(), '\n') - 1 << " labels\n";
      }
    } else if (*ground) {
      const auto cloud = load_point_cloud(cloud_path);
      const auto xyz = positions(cloud);
      const GroundFit fit = detect_ground_plane(xyz, seed);
      const auto keep = above_ground_indices(xyz, fit.plane, margin);
      std::vector<PointXYZI> kept;
      kept.reserve(keep.size());
      for (std::size_t i : keep) kept.push_back(cloud[i]);
      write_file_atomic(out_path, serialize_point_cloud(kept));
      const Vec3 n = fit.plane.normal;
      out << "normal " << short_number(n.x) << " " << short_number(n.y) << " " << short_number(n.z) << "\n"
          << "offset " << short_number(fit.plane.offset) << "\n"
          << "ground_inliers " << fit.inliers.size() << "\n"
          << "kept " << kept.size() << " of " << cloud.size() << "\n";
    } else if (*convert) {
      const auto schema = parse_ground_truth_schema(schema_name);
      const AnnotationFile file = import_ground_truth(
          in_path, schema, sequence_id.empty() ? std::nullopt : std::optional<std::string>(sequence_id));
      save_annotations(file, out_path);
      out << "converted " << file.box_count() << " boxes in " << file.frames.size() << " frames\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what();
    if (!e.field().empty()) err << " [" << e.field() << "]";
    err << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitOk;
}

}  // namespace bat3d::cli
