#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bat3d/dataset_io.hpp"
#include "bat3d/geometry.hpp"

namespace bat3d {

enum class EditKind {
  Create,
  Delete,
  SetPose,
  SetDims,
  SetYaw,
  SetClass,
  InterpolateRange,
  MarkKeyframe,
  ReplaceFrame,
};

inline std::string_view to_string(EditKind kind) {
  switch (kind) {
    case EditKind::Create: return "create";
    case EditKind::Delete: return "delete";
    case EditKind::SetPose: return "set-pose";
    case EditKind::SetDims: return "set-dims";
    case EditKind::SetYaw: return "set-yaw";
    case EditKind::SetClass: return "set-class";
    case EditKind::InterpolateRange: return "interpolate-range";
    case EditKind::MarkKeyframe: return "mark-keyframe";
    case EditKind::ReplaceFrame: return "replace-frame";
  }
  return "unknown";
}

/// Full state of one (frame, track) cell. An empty `box` means no annotation.
struct Slot {
  FrameIndex frame = 0;
  TrackId track_id = 0;
  std::optional<Box3D> box;
  bool keyframe = false;

  friend bool operator==(const Slot&, const Slot&) = default;
};

/// A reversible edit: applying `after` performs it, applying `before`
/// reverts it. Compound edits carry one slot per touched cell.
struct EditOp {
  EditKind kind = EditKind::Create;
  FrameIndex frame = 0;
  TrackId track_id = 0;
  std::vector<Slot> before;
  std::vector<Slot> after;
};

struct Translate { Vec3 offset; };
struct MoveTo { Vec3 center; };
struct Resize { Vec3 dims; };
struct Rotate { double radians = 0.0; };
struct SetYaw { double yaw = 0.0; };
struct Relabel { ClassLabel label = ClassLabel::Car; };

using EditDelta = std::variant<Translate, MoveTo, Resize, Rotate, SetYaw, Relabel>;

/// Annotation content of a store, without history.
struct StoreSnapshot {
  std::map<std::pair<FrameIndex, TrackId>, Box3D> annotations;
  std::map<TrackId, std::set<FrameIndex>> keyframes;
  TrackId next_track_id = 0;
  bool dirty = false;

  friend bool operator==(const StoreSnapshot&, const StoreSnapshot&) = default;
};

enum class AutosaveResult { Saved, Skipped };

struct AutosaveConfig {
  std::filesystem::path path;
  std::chrono::milliseconds debounce{5000};
};

/// Authoritative annotation state of one sequence with unbounded undo/redo.
/// Mutations are serialized by an internal writer lock; readers see the
/// state between two edits.
class AnnotationStore {
 public:
  using Clock = std::chrono::steady_clock;

  AnnotationStore(std::string sequence_id, FrameIndex frame_count)
      : sequence_id_(std::move(sequence_id)), frame_count_(frame_count) {}

  /// Seeds the store from a file without recording history. Entries not
  /// marked as interpolated become keyframes.
  AnnotationStore(const AnnotationFile& file, FrameIndex frame_count)
      : AnnotationStore(file.sequence_id, frame_count) {
    for (const auto& [frame, boxes] : file.frames) {
      check_frame(frame);
      for (const auto& box : boxes) {
        state_.annotations[{frame, box.track_id}] = box;
        if (!file.interpolated.contains({frame, box.track_id})) {
          state_.keyframes[box.track_id].insert(frame);
        }
        state_.next_track_id = std::max(state_.next_track_id, box.track_id + 1);
      }
    }
  }

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  const std::string& sequence_id() const { return sequence_id_; }
  FrameIndex frame_count() const { return frame_count_; }

  /// Adds a box under a fresh track id and marks the frame as a keyframe.
  TrackId create_annotation(FrameIndex frame, Box3D box) {
    std::unique_lock lock(mutex_);
    check_frame(frame);
    check_box(box);
    box.track_id = state_.next_track_id++;
    EditOp op{EditKind::Create, frame, box.track_id, {slot(frame, box.track_id)}, {}};
    op.after.push_back({frame, box.track_id, box, true});
    commit(std::move(op));
    return box.track_id;
  }

  /// Places a keyframe box for an existing or explicitly numbered track.
  void set_keyframe(FrameIndex frame, TrackId track, Box3D box) {
    std::unique_lock lock(mutex_);
    check_frame(frame);
    box.track_id = track;
    check_box(box);
    check_track_class(track, box.label, frame);
    const Slot before = slot(frame, track);
    EditOp op{before.box ? EditKind::SetPose : EditKind::Create, frame, track, {before}, {}};
    op.after.push_back({frame, track, box, true});
    state_.next_track_id = std::max(state_.next_track_id, track + 1);
    commit(std::move(op));
  }

  /// Turns an existing (for example interpolated) box into a keyframe.
  void mark_keyframe(FrameIndex frame, TrackId track) {
    std::unique_lock lock(mutex_);
    Slot before = existing(frame, track);
    if (before.keyframe) return;
    Slot after = before;
    after.keyframe = true;
    commit({EditKind::MarkKeyframe, frame, track, {before}, {after}});
  }

  void edit_annotation(FrameIndex frame, TrackId track, const EditDelta& delta) {
    std::unique_lock lock(mutex_);
    const Slot before = existing(frame, track);
    Box3D box = *before.box;
    EditKind kind = EditKind::SetPose;
    std::visit(
        [&](const auto& d) {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, Translate>) {
            box.center = box.center + d.offset;
          } else if constexpr (std::is_same_v<D, MoveTo>) {
            box.center = d.center;
          } else if constexpr (std::is_same_v<D, Resize>) {
            kind = EditKind::SetDims;
            box.dims = {std::max(d.dims.x, kMinDimension), std::max(d.dims.y, kMinDimension),
                        std::max(d.dims.z, kMinDimension)};
          } else if constexpr (std::is_same_v<D, Rotate>) {
            kind = EditKind::SetYaw;
            box.yaw = wrap_angle(box.yaw + wrap_angle(d.radians));
          } else if constexpr (std::is_same_v<D, SetYaw>) {
            kind = EditKind::SetYaw;
            box.yaw = wrap_angle(d.yaw);
          } else {
            kind = EditKind::SetClass;
            box.label = d.label;
          }
        },
        delta);
    if (!is_finite(box.center) || !is_finite(box.dims) || !std::isfinite(box.yaw)) {
      throw Error(ErrorCode::OutOfRange, "edit produces a non-finite box");
    }

    EditOp op{kind, frame, track, {}, {}};
    if (kind == EditKind::SetClass) {
      // A track carries one class across all frames.
      for (const auto& [key, other] : state_.annotations) {
        if (key.second != track) continue;
        Slot s = slot(key.first, track);
        op.before.push_back(s);
        s.box->label = box.label;
        op.after.push_back(std::move(s));
      }
    } else {
      Slot after = before;
      after.box = box;
      op.before.push_back(before);
      op.after.push_back(std::move(after));
    }
    commit(std::move(op));
  }

  void delete_annotation(FrameIndex frame, TrackId track) {
    std::unique_lock lock(mutex_);
    const Slot before = existing(frame, track);
    commit({EditKind::Delete, frame, track, {before}, {Slot{frame, track, std::nullopt, false}}});
  }

  /// Removes every frame of a track as one edit. Returns the box count.
  std::size_t delete_track(TrackId track) {
    std::unique_lock lock(mutex_);
    EditOp op{EditKind::Delete, 0, track, {}, {}};
    for (const auto& [key, box] : state_.annotations) {
      if (key.second != track) continue;
      op.before.push_back(slot(key.first, track));
      op.after.push_back({key.first, track, std::nullopt, false});
    }
    if (op.before.empty()) {
      throw Error(ErrorCode::NotFound, "no annotations for track " + std::to_string(track));
    }
    op.frame = op.before.front().frame;
    const std::size_t n = op.before.size();
    commit(std::move(op));
    return n;
  }

  /// Fills the frames between two keyframes of a track. Keyframes inside
  /// the range split it into independently interpolated segments and are
  /// never overwritten. Returns the number of boxes written.
  std::size_t interpolate_range(TrackId track, FrameIndex start, FrameIndex end) {
    std::unique_lock lock(mutex_);
    if (start >= end) throw Error(ErrorCode::Ordering, "start frame must precede end frame");
    const auto kf = state_.keyframes.find(track);
    for (FrameIndex f : {start, end}) {
      if (kf == state_.keyframes.end() || !kf->second.contains(f)) {
        throw Error(ErrorCode::MissingKeyframe,
                    "frame " + std::to_string(f) + " is not a keyframe of track " +
                        std::to_string(track),
                    f == start ? "start" : "end");
      }
    }
    std::vector<FrameIndex> controls(kf->second.lower_bound(start), kf->second.upper_bound(end));

    EditOp op{EditKind::InterpolateRange, start, track, {}, {}};
    for (std::size_t i = 0; i + 1 < controls.size(); ++i) {
      const Keyframe a{controls[i], state_.annotations.at({controls[i], track})};
      const Keyframe b{controls[i + 1], state_.annotations.at({controls[i + 1], track})};
      for (const Keyframe& sample : interpolate_track(a, b)) {
        op.before.push_back(slot(sample.frame, track));
        op.after.push_back({sample.frame, track, sample.box, false});
      }
    }
    const std::size_t written = op.after.size();
    if (written > 0) commit(std::move(op));
    return written;
  }

  /// Makes `boxes` the complete annotation set of one frame as a single edit.
  /// Tracks absent from `boxes` are removed from the frame; tracks listed in
  /// `interpolated` are stored as non-keyframes.
  void replace_frame(FrameIndex frame, std::vector<Box3D> boxes,
                     const std::set<TrackId>& interpolated = {}) {
    std::unique_lock lock(mutex_);
    check_frame(frame);
    std::set<TrackId> seen;
    TrackId max_track = state_.next_track_id;
    for (const auto& box : boxes) {
      check_box(box);
      if (!seen.insert(box.track_id).second) {
        throw Error(ErrorCode::Schema, "duplicate track " + std::to_string(box.track_id));
      }
      check_track_class(box.track_id, box.label, frame);
      max_track = std::max(max_track, box.track_id + 1);
    }
    EditOp op{EditKind::ReplaceFrame, frame, 0, {}, {}};
    for (const auto& [key, box] : state_.annotations) {
      if (key.first == frame && !seen.contains(key.second)) {
        op.before.push_back(slot(frame, key.second));
        op.after.push_back({frame, key.second, std::nullopt, false});
      }
    }
    for (const auto& box : boxes) {
      Slot before = slot(frame, box.track_id);
      Slot after{frame, box.track_id, box, !interpolated.contains(box.track_id)};
      if (before == after) continue;
      op.before.push_back(std::move(before));
      op.after.push_back(std::move(after));
    }
    state_.next_track_id = max_track;
    if (!op.after.empty()) commit(std::move(op));
  }

  /// Reverts the latest edit. Returns the reverted op, or nullopt when
  /// there is nothing to undo.
  std::optional<EditOp> undo() {
    std::unique_lock lock(mutex_);
    if (undo_stack_.empty()) return std::nullopt;
    EditOp op = std::move(undo_stack_.back());
    undo_stack_.pop_back();
    apply(op.before);
    redo_stack_.push_back(op);
    touch();
    return op;
  }

  std::optional<EditOp> redo() {
    std::unique_lock lock(mutex_);
    if (redo_stack_.empty()) return std::nullopt;
    EditOp op = std::move(redo_stack_.back());
    redo_stack_.pop_back();
    apply(op.after);
    undo_stack_.push_back(op);
    touch();
    return op;
  }

  std::size_t undo_depth() const {
    std::shared_lock lock(mutex_);
    return undo_stack_.size();
  }
  std::size_t redo_depth() const {
    std::shared_lock lock(mutex_);
    return redo_stack_.size();
  }

  // -- reads ---------------------------------------------------------------

  std::optional<Box3D> get(FrameIndex frame, TrackId track) const {
    std::shared_lock lock(mutex_);
    const auto it = state_.annotations.find({frame, track});
    if (it == state_.annotations.end()) return std::nullopt;
    return it->second;
  }

  bool is_keyframe(FrameIndex frame, TrackId track) const {
    std::shared_lock lock(mutex_);
    const auto it = state_.keyframes.find(track);
    return it != state_.keyframes.end() && it->second.contains(frame);
  }

  StoreSnapshot snapshot() const {
    std::shared_lock lock(mutex_);
    return state_;
  }

  bool dirty() const {
    std::shared_lock lock(mutex_);
    return state_.dirty;
  }

  AnnotationFile export_file() const {
    std::shared_lock lock(mutex_);
    return export_locked();
  }

  /// Annotations of one frame only, in the interchange layout.
  AnnotationFile export_frame(FrameIndex frame) const {
    std::shared_lock lock(mutex_);
    AnnotationFile file;
    file.sequence_id = sequence_id_;
    for (auto it = state_.annotations.lower_bound({frame, 0});
         it != state_.annotations.end() && it->first.first == frame; ++it) {
      file.frames[frame].push_back(it->second);
      if (!is_keyframe_locked(frame, it->first.second)) {
        file.interpolated.insert(it->first);
      }
    }
    return file;
  }

  // -- autosave ------------------------------------------------------------

  void enable_autosave(AutosaveConfig config, Clock::time_point now = Clock::now()) {
    std::unique_lock lock(mutex_);
    autosave_ = std::move(config);
    last_save_ = now;
  }

  /// Persists the annotations when they changed and the debounce interval
  /// has elapsed since the last save. A failed write throws and leaves the
  /// store dirty.
  AutosaveResult autosave_tick(Clock::time_point now) {
    AnnotationFile file;
    std::uint64_t revision = 0;
    std::filesystem::path path;
    {
      std::shared_lock lock(mutex_);
      if (!autosave_ || !state_.dirty || now - last_save_ < autosave_->debounce) {
        return AutosaveResult::Skipped;
      }
      file = export_locked();
      revision = revision_;
      path = autosave_->path;
    }
    std::scoped_lock save_lock(save_mutex_);
    save_annotations(file, path);
    std::unique_lock lock(mutex_);
    last_save_ = now;
    if (revision_ == revision) state_.dirty = false;
    return AutosaveResult::Saved;
  }

 private:
  void check_frame(FrameIndex frame) const {
    if (frame < 0 || frame >= frame_count_) {
      throw Error(ErrorCode::OutOfRange,
                  "frame " + std::to_string(frame) + " outside [0, " +
                      std::to_string(frame_count_) + ")",
                  "frame");
    }
  }

  static void check_box(const Box3D& box) {
    Box3D wrapped = box;
    wrapped.yaw = wrap_angle(box.yaw);
    if (!is_valid(wrapped) || wrapped.yaw != box.yaw) {
      throw Error(ErrorCode::InvariantViolation, "invalid box geometry", "box");
    }
  }

  void check_track_class(TrackId track, ClassLabel label, FrameIndex skip_frame) const {
    for (const auto& [key, box] : state_.annotations) {
      if (key.second == track && key.first != skip_frame && box.label != label) {
        throw Error(ErrorCode::Schema,
                    "track " + std::to_string(track) + " is " + std::string(to_string(box.label)),
                    "class");
      }
    }
  }

  bool is_keyframe_locked(FrameIndex frame, TrackId track) const {
    const auto it = state_.keyframes.find(track);
    return it != state_.keyframes.end() && it->second.contains(frame);
  }

  Slot slot(FrameIndex frame, TrackId track) const {
    Slot s{frame, track, std::nullopt, false};
    if (const auto it = state_.annotations.find({frame, track}); it != state_.annotations.end()) {
      s.box = it->second;
      s.keyframe = is_keyframe_locked(frame, track);
    }
    return s;
  }

  Slot existing(FrameIndex frame, TrackId track) const {
    Slot s = slot(frame, track);
    if (!s.box) {
      throw Error(ErrorCode::NotFound,
                  "no annotation for track " + std::to_string(track) + " in frame " +
                      std::to_string(frame));
    }
    return s;
  }

  void apply(const std::vector<Slot>& slots) {
    for (const Slot& s : slots) {
      if (s.box) {
        state_.annotations[{s.frame, s.track_id}] = *s.box;
      } else {
        state_.annotations.erase({s.frame, s.track_id});
      }
      auto& kf = state_.keyframes[s.track_id];
      if (s.box && s.keyframe) {
        kf.insert(s.frame);
      } else {
        kf.erase(s.frame);
      }
      if (kf.empty()) state_.keyframes.erase(s.track_id);
    }
  }

  void commit(EditOp op) {
    apply(op.after);
    undo_stack_.push_back(std::move(op));
    redo_stack_.clear();
    touch();
  }

  void touch() {
    state_.dirty = true;
    ++revision_;
  }

  AnnotationFile export_locked() const {
    AnnotationFile file;
    file.sequence_id = sequence_id_;
    for (const auto& [key, box] : state_.annotations) {
      file.frames[key.first].push_back(box);
      if (!is_keyframe_locked(key.first, key.second)) file.interpolated.insert(key);
    }
    return file;
  }

  std::string sequence_id_;
  FrameIndex frame_count_;
  mutable std::shared_mutex mutex_;
  std::mutex save_mutex_;
  StoreSnapshot state_;
  std::vector<EditOp> undo_stack_;
  std::vector<EditOp> redo_stack_;
  std::uint64_t revision_ = 0;
  std::optional<AutosaveConfig> autosave_;
  Clock::time_point last_save_{};
};

}  // namespace bat3d
