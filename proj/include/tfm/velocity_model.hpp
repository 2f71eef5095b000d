#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfm/autograd.hpp"
#include "tfm/flow_transport.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

enum class Conditioning { cross_attention, bottleneck_concat };

std::string to_string(Conditioning c);
Conditioning parse_conditioning(const std::string& name);

/// Volumetric UNet hyperparameters. The T context frames enter as channels.
struct ModelConfig {
  int in_frames = 7;
  std::int64_t depth = 8;
  std::int64_t height = 32;
  std::int64_t width = 32;
  int base_features = 32;
  std::vector<int> channel_mults{1, 1, 2, 4};
  int res_blocks_per_level = 1;
  /// Cross-attention is inserted at levels whose in-plane extent is <= this.
  int attention_resolution = 16;
  Conditioning conditioning = Conditioning::cross_attention;
  /// Number of key/value tokens derived from the FM-step embedding.
  int attention_tokens = 4;

  int levels() const { return static_cast<int>(channel_mults.size()); }
  int time_dim() const { return 4 * base_features; }

  /// Rejects malformed configs, including extents not divisible by 2^(levels-1).
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Largest group count <= 8 that divides `channels`.
int norm_groups(std::int64_t channels);

/// Named tensors kept sorted by name.
template <class T>
class ParameterSet {
 public:
  void insert(std::string name, Tensor<T> value);

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor<T>>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const noexcept { return tensors_; }

  /// Index of `name`, or -1.
  std::ptrdiff_t find(const std::string& name) const;
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);

  ParameterSet zeros_like() const;
  std::size_t element_count() const;
  bool all_finite() const;

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.insert(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
};

/// Sinusoidal FM-step embedding [cos(w_i s), sin(w_i s)] with s = 1000 tau.
std::vector<double> fm_step_embedding(double tau, int dim);

/// The trainable velocity field v(x_tau, tau).
template <class T>
class VelocityNet {
 public:
  explicit VelocityNet(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }

  /// Deterministic in `seed`; the output projection starts at zero.
  ParameterSet<T> init_parameters(std::uint64_t seed) const;

  /// x is [B, T, D, H, W] with one FM step per batch entry; returns the same shape.
  Tensor<T> forward(const ParameterSet<T>& params, const Tensor<T>& x, std::span<const double> taus) const;

  /// Mean-square loss of the network output against `truth`, with gradients
  /// for every parameter written to `grads` (resized as needed). When
  /// `reduce_frames` is set the output is averaged over frames first and
  /// `truth` must be [B, 1, D, H, W].
  double loss_and_gradients(const ParameterSet<T>& params, const Tensor<T>& x, std::span<const double> taus,
                            const Tensor<T>& truth, ParameterSet<T>& grads, bool reduce_frames = false,
                            Tensor<T>* input_grad = nullptr) const;

 private:
  ModelConfig cfg_;
};

/// Single-sample convenience: velocity for one FlowState [T, D, H, W].
Array predict_velocity(const VelocityNet<float>& net, const ParameterSet<float>& params, const FlowState& state);

/// Named-tensor container with the model config, a step counter, and free-form metadata.
struct Checkpoint {
  ModelConfig model;
  ParameterSet<float> params;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tfm
