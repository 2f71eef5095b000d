#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfm/flow_transport.hpp"
#include "tfm/ode_integrator.hpp"
#include "tfm/sequence_data.hpp"
#include "tfm/velocity_model.hpp"

namespace tfm {

enum class TrainMethod { tfm, direct_baseline, lci_fm };

std::string to_string(TrainMethod m);
TrainMethod parse_train_method(const std::string& name);

struct TrainConfig {
  int epochs = 500;
  int batch_size = 4;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double warmup_fraction = 0.1;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  TrainMethod method = TrainMethod::tfm;
  bool sparsity_filling = true;
  /// Per-slot drop probability for the masks drawn during training.
  double mask_rate = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Per-sample context masks (true = keep), fixed by one seed.
struct MaskSet {
  std::uint64_t seed = 0;
  double rate = 0;
  std::vector<std::vector<bool>> masks;

  nlohmann::json to_json() const;
  static MaskSet from_json(const nlohmann::json& j);
  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

/// Independent Bernoulli drop per slot; with `repair` an all-dropped mask keeps its latest slot.
std::vector<bool> draw_mask(Rng& rng, std::int64_t frames, double mask_rate, bool repair = true);

MaskSet generate_masks(std::size_t split_size, std::int64_t frames, double mask_rate, std::uint64_t seed);

/// Learning rate before optimizer step `step` of `total_steps`: linear warmup
/// from 0, then cosine decay to 0 at `total_steps`.
double learning_rate_at(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
double clip_grad_norm(ParameterSet<float>& grads, double max_norm);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet<float>& params, const ParameterSet<float>& grads, double lr);
  std::int64_t steps_taken() const noexcept { return t_; }

 private:
  double weight_decay_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  ParameterSet<float> m_, v_;
};

/// Owns the parameters and optimizer state of one training run.
class Trainer {
 public:
  /// `total_steps` fixes the length of the learning-rate schedule.
  Trainer(TrainConfig cfg, ModelConfig model, std::int64_t total_steps);
  Trainer(TrainConfig cfg, ModelConfig model, ParameterSet<float> params, std::int64_t total_steps);

  /// One FM update: tau ~ U[0, 1) per sample, regress x1 - x0 at x_tau.
  double train_step_tfm(const std::vector<PairedFlowEndpoints>& batch, Rng& rng);
  /// As train_step_tfm but requires single-frame endpoints.
  double train_step_lci_fm(const std::vector<PairedFlowEndpoints>& batch, Rng& rng);
  /// Direct regression of the target from the context, network evaluated at tau = 0.
  double train_step_baseline(const std::vector<Array>& contexts, const std::vector<Array>& targets);

  const VelocityNet<float>& net() const noexcept { return net_; }
  const ParameterSet<float>& params() const noexcept { return params_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::int64_t step() const noexcept { return step_; }
  double last_lr() const noexcept { return last_lr_; }
  double last_grad_norm() const noexcept { return last_grad_norm_; }

 private:
  double apply(const Array& x, const std::vector<double>& taus, const Array& truth, bool reduce_frames);

  TrainConfig cfg_;
  VelocityNet<float> net_;
  ParameterSet<float> params_;
  ParameterSet<float> grads_;
  AdamW opt_;
  std::int64_t total_steps_;
  std::int64_t step_ = 0;
  double last_lr_ = 0;
  double last_grad_norm_ = 0;
};

/// Model input for one (already masked) sequence under `method`.
Array method_context(TrainMethod method, const ImageSequence& seq, bool sparsity_filling);

/// Predicted target volumes for every sequence.
std::vector<Array> predict_with_method(TrainMethod method, const VelocityNet<float>& net,
                                       const ParameterSet<float>& params, const std::vector<ImageSequence>& seqs,
                                       const SolverConfig& solver, bool sparsity_filling,
                                       std::size_t chunk = 16);

/// Model config actually trained for `method` (single input frame for lci_fm).
ModelConfig model_for_method(ModelConfig model, TrainMethod method);

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0;
  double val_mse = 0;
  double val_ssim = 0;
  double lr = 0;
};

struct FitResult {
  Checkpoint best;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  ParameterSet<float> final_params;
};

/// Index of the smallest value, earliest on ties.
std::size_t best_epoch_index(const std::vector<double>& val_mse);

struct FitOptions {
  SolverConfig solver;
  /// Stop after this many optimizer steps (0 = run all epochs); the schedule uses the capped length.
  std::int64_t max_steps = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains on `train` with fresh masks every epoch and selects the epoch with
/// the lowest validation MSE under the frozen `val_masks`.
FitResult fit(const TrainConfig& cfg, const ModelConfig& model, const std::vector<ImageSequence>& train,
              const std::vector<ImageSequence>& val, const MaskSet& val_masks, const FitOptions& options = {});

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace tfm
