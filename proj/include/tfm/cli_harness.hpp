#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfm/metrics.hpp"
#include "tfm/ode_integrator.hpp"
#include "tfm/synth_data.hpp"
#include "tfm/trainer.hpp"
#include "tfm/velocity_model.hpp"

namespace tfm::cli {

/// Bad flags, unreadable or malformed configs: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { ok = 0, runtime_failure = 1, usage_error = 2 };

struct SplitSizes {
  std::size_t train = 64;
  std::size_t val = 16;
  std::size_t test = 16;
};

/// Frozen evaluation masks.
struct MaskSettings {
  double rate = 0.4;
  std::uint64_t val_seed = 101;
  std::uint64_t test_seed = 202;
};

struct ExperimentConfig {
  DynamicsSpec dataset;
  SplitSizes splits;
  ModelConfig model;
  TrainConfig train;
  SolverConfig solver;
  MaskSettings masks;
  /// Optimizer-step cap across all epochs (0 = none).
  std::int64_t max_steps = 0;
  std::vector<int> nfe_steps{1, 5, 10, 25, 50, 100};
  SsimMode ssim_mode = SsimMode::slice2d;
  std::string output_dir = "runs/default";

  /// Checks cross-section consistency (model extents vs dataset shape, ...).
  void validate() const;

  nlohmann::json to_json() const;
  /// Unknown sections or keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// Reads and validates a config file; every failure is a UsageError.
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a 64 of the canonical JSON (output_dir excluded), as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

struct Context {
  ExperimentConfig config;
  std::filesystem::path out;
  bool deterministic = true;
  std::ostream* log = nullptr;
};

void cmd_generate(const Context& ctx);
void cmd_train(const Context& ctx);
void cmd_eval(const Context& ctx, const std::filesystem::path& checkpoint);

struct NfeRow {
  int steps = 0;
  int nfe = 0;
  double mse = 0;
  double ssim = 0;
};
std::vector<NfeRow> cmd_nfe_sweep(const Context& ctx, const std::filesystem::path& checkpoint,
                                  const std::vector<int>& steps);

enum class MaskDirection { first_to_last, last_to_first };
std::string to_string(MaskDirection d);
MaskDirection parse_mask_direction(const std::string& name);

struct MaskSweepRow {
  MaskDirection direction = MaskDirection::first_to_last;
  int k = 0;
  double mse = 0;
  double ssim = 0;
  double lci_mse = 0;
};
std::vector<MaskSweepRow> cmd_mask_sweep(const Context& ctx, const std::filesystem::path& checkpoint,
                                         const std::vector<MaskDirection>& directions);

struct AblationRow {
  std::string variant;
  double mse = 0;
  double psnr_db = 0;
  double ssim = 0;
  int best_epoch = 0;
};
std::vector<AblationRow> cmd_ablate(const Context& ctx);

/// Prints the toy scene and table; returns true when the exact expectations hold.
bool cmd_paradox(std::ostream& out);

/// Re-plots every CSV found in ctx.out and writes report.md.
void cmd_report(const Context& ctx);

// Helpers shared with tests.

/// Masks the k earliest (first_to_last) or k latest (last_to_first) slots.
std::vector<bool> directional_mask(std::int64_t frames, int k, MaskDirection direction);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
};

/// Standalone SVG line chart.
std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& opts);

}  // namespace tfm::cli
