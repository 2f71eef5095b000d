#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfm/sequence_data.hpp"

namespace tfm {

enum class DynamicsKind { pulsating_ellipse, growing_disk, drifting_texture };

std::string to_string(DynamicsKind k);
DynamicsKind parse_dynamics_kind(const std::string& name);

/// Generator parameters. Lengths are in pixels, rates per unit of acquisition
/// time (one grid step). Per-patient values are drawn uniformly within
/// +-parameter_spread (relative) around the nominal ones.
struct DynamicsSpec {
  DynamicsKind kind = DynamicsKind::growing_disk;
  SequenceShape shape{7, 8, 32, 32};
  double radius = 5.0;          ///< initial disk radius / ellipse semi-axis
  double growth_rate = 0.8;     ///< growing_disk: radius gain per time unit
  double amplitude = 0.25;      ///< pulsating_ellipse: relative axis modulation
  double period = 6.0;          ///< pulsating_ellipse
  double drift_velocity = 0.6;  ///< drifting_texture: pixels per time unit
  double parameter_spread = 0.25;
  double center_jitter = 2.0;   ///< max center offset from the volume center
  double foreground = 0.8;
  double background = 0.15;     ///< amplitude of the static background pattern
  double time_jitter = 0.3;     ///< context times are i + U(-j, j)
  double target_jitter = 0.1;   ///< target time is T + U(-j, j)
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  /// Rejects parameters that could leave the field of view or the [0, 1] range.
  void validate() const;

  nlohmann::json to_json() const;
  static DynamicsSpec from_json(const nlohmann::json& j);
};

/// Concrete per-patient draw of the dynamics.
struct PatientDynamics {
  double center_y = 0, center_x = 0;
  double radius = 0, growth_rate = 0;
  double amplitude = 0, phase = 0;
  double drift_y = 0, drift_x = 0;
  double texture_phase = 0;
};

PatientDynamics patient_dynamics(const DynamicsSpec& spec, std::size_t index);

/// Noise-free volume [D, H, W] of one patient at time t.
Array render_frame(const DynamicsSpec& spec, const PatientDynamics& patient, double t);

/// Noise-free ground truth of patient `index` at `target_time`.
Array oracle_target(const DynamicsSpec& spec, std::size_t index, double target_time);

struct SyntheticCohort {
  DynamicsSpec spec;
  std::size_t first_index = 0;
  std::vector<ImageSequence> sequences;
  std::vector<Array> oracles;  ///< noise-free targets, aligned with sequences
};

/// Fully present sequences for patients first_index .. first_index + n - 1.
SyntheticCohort generate_cohort(const DynamicsSpec& spec, std::size_t n_sequences, std::size_t first_index = 0);

struct StaticBiasReport {
  double lci_nrmse = 0;     ///< mean NRMSE(last context image, target)
  double random_nrmse = 0;  ///< mean NRMSE(another patient's target, target)
  double ratio = 0;
};

/// Pairs every patient with a different one (seeded rotation) for the random baseline.
StaticBiasReport static_bias_report(const std::vector<ImageSequence>& cohort, std::uint64_t seed = 0);

/// Writes <dir>/seq_NNNN.{hdr,raw} plus spec.json.
void save_cohort(const std::filesystem::path& dir, const SyntheticCohort& cohort);
/// Reads a directory written by save_cohort; oracles are re-rendered from spec.json.
SyntheticCohort load_cohort(const std::filesystem::path& dir);

}  // namespace tfm
