#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "tfm/tensor.hpp"

namespace tfm {

/// Extents of a context stack: T frames of D x H x W voxels.
struct SequenceShape {
  std::int64_t frames = 1;
  std::int64_t depth = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;

  void validate() const;
  Shape volume_shape() const { return {depth, height, width}; }
  Shape stack_shape() const { return {frames, depth, height, width}; }
  std::int64_t voxels() const { return depth * height * width; }

  friend bool operator==(const SequenceShape&, const SequenceShape&) = default;
};

/// One longitudinal sample: the (possibly sparse) context stack plus the
/// follow-up target it should predict. Missing slots are all-zero and flagged
/// absent in `presence`; the mask, not the voxel values, is authoritative.
struct ImageSequence {
  Array frames;                ///< [T, D, H, W]
  std::vector<bool> presence;  ///< length T, true = acquired
  std::vector<double> times;   ///< length T, acquisition times (NaN allowed for missing slots)
  Array target;                ///< [D, H, W]
  double target_time = 0.0;

  SequenceShape shape() const;
  std::int64_t present_count() const;

  /// Throws std::invalid_argument if any structural invariant is violated.
  void validate() const;
};

struct FilledSequence {
  Array frames;                          ///< [T, D, H, W]
  std::vector<std::int64_t> fill_source;  ///< slot each frame was copied from
};

/// Source and target of the per-frame flow: x1 is the target repeated T times.
struct PairedFlowEndpoints {
  Array x0;
  Array x1;
};

struct IndexedFrame {
  std::int64_t index = 0;
  double time = 0.0;
  Array volume;
};

/// Places the given frames at their slots and zeros every other slot.
ImageSequence zero_fill(const std::vector<IndexedFrame>& frames, const SequenceShape& shape, Array target,
                        double target_time);

/// Forward-fills missing slots from the most recent present slot; leading
/// gaps take the earliest present slot.
FilledSequence sparsity_fill(const ImageSequence& seq);

/// Core of sparsity_fill on a raw stack; no checks on the missing slots' content.
FilledSequence fill_frames(const Array& frames, const std::vector<bool>& presence);

PairedFlowEndpoints replicate_target(const Array& context, const Array& target);
inline PairedFlowEndpoints replicate_target(const FilledSequence& seq, const Array& target) {
  return replicate_target(seq.frames, target);
}
inline PairedFlowEndpoints replicate_target(const ImageSequence& seq, const Array& target) {
  return replicate_target(seq.frames, target);
}

/// The acquired frame with the largest slot index.
Array last_context_image(const ImageSequence& seq);

/// Drops slots where `keep` is false: zeroes them and clears their presence.
ImageSequence apply_mask(const ImageSequence& seq, const std::vector<bool>& keep);

/// Min-max rescales frames and target jointly to [0, 1] using present frames and the target.
ImageSequence normalize_intensities(const ImageSequence& seq);

// On-disk format: <stem>.hdr (UTF-8 key=value lines) + <stem>.raw (float32
// little-endian frames followed by the target volume).

enum class SequenceIoErrc { io, format, truncated, extent_mismatch };

class SequenceIoError : public std::runtime_error {
 public:
  SequenceIoError(SequenceIoErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  SequenceIoErrc code() const noexcept { return code_; }

 private:
  SequenceIoErrc code_;
};

void save_sequence(const std::filesystem::path& stem, const ImageSequence& seq);
ImageSequence load_sequence(const std::filesystem::path& stem);

}  // namespace tfm
