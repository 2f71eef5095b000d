#include "tfm/trainer.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tfm/metrics.hpp"

namespace tfm {

std::string to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::tfm: return "tfm";
    case TrainMethod::direct_baseline: return "direct_baseline";
    case TrainMethod::lci_fm: return "lci_fm";
  }
  return "?";
}

TrainMethod parse_train_method(const std::string& name) {
  if (name == "tfm") return TrainMethod::tfm;
  if (name == "direct_baseline") return TrainMethod::direct_baseline;
  if (name == "lci_fm") return TrainMethod::lci_fm;
  throw std::invalid_argument("unknown training method '" + name + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + msg);
  };
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0, "learning_rate must be positive");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(warmup_fraction >= 0 && warmup_fraction < 1, "warmup_fraction must be in [0, 1)");
  require(grad_clip > 0, "grad_clip must be positive");
  require(mask_rate >= 0 && mask_rate < 1, "mask_rate must be in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"warmup_fraction", warmup_fraction},
          {"grad_clip", grad_clip},
          {"seed", seed},
          {"method", to_string(method)},
          {"sparsity_filling", sparsity_filling},
          {"mask_rate", mask_rate}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "warmup_fraction") c.warmup_fraction = v.get<double>();
    else if (key == "grad_clip") c.grad_clip = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "method") c.method = parse_train_method(v.get<std::string>());
    else if (key == "sparsity_filling") c.sparsity_filling = v.get<bool>();
    else if (key == "mask_rate") c.mask_rate = v.get<double>();
    else throw std::invalid_argument("train config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string bits(const std::vector<bool>& m) {
  std::string s;
  for (bool b : m) s += b ? '1' : '0';
  return s;
}

}  // namespace

nlohmann::json MaskSet::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& m : masks) list.push_back(bits(m));
  return {{"seed", seed}, {"rate", rate}, {"masks", list}};
}

MaskSet MaskSet::from_json(const nlohmann::json& j) {
  MaskSet ms;
  ms.seed = j.at("seed").get<std::uint64_t>();
  ms.rate = j.at("rate").get<double>();
  for (const auto& s : j.at("masks")) {
    std::vector<bool> m;
    for (char c : s.get<std::string>()) {
      if (c != '0' && c != '1') throw std::invalid_argument("mask bitstring contains '" + std::string(1, c) + "'");
      m.push_back(c == '1');
    }
    ms.masks.push_back(std::move(m));
  }
  return ms;
}

std::vector<bool> draw_mask(Rng& rng, std::int64_t frames, double mask_rate, bool repair) {
  if (frames < 1) throw std::invalid_argument("draw_mask: need at least one frame");
  std::vector<bool> keep(static_cast<std::size_t>(frames));
  bool any = false;
  for (auto&& k : keep) {
    k = !(uniform01(rng) < mask_rate);
    any = any || k;
  }
  if (repair && !any) keep.back() = true;
  return keep;
}

MaskSet generate_masks(std::size_t split_size, std::int64_t frames, double mask_rate, std::uint64_t seed) {
  if (!(mask_rate >= 0 && mask_rate < 1)) throw std::invalid_argument("generate_masks: mask_rate must be in [0, 1)");
  MaskSet ms;
  ms.seed = seed;
  ms.rate = mask_rate;
  Rng rng(seed);
  for (std::size_t i = 0; i < split_size; ++i) ms.masks.push_back(draw_mask(rng, frames, mask_rate));
  return ms;
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (total_steps < 1) throw std::invalid_argument("learning_rate_at: total_steps must be >= 1");
  step = std::clamp<std::int64_t>(step, 0, total_steps);
  const auto warmup = static_cast<std::int64_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(total_steps - warmup);
  const double progress = span > 0 ? static_cast<double>(step - warmup) / span : 1.0;
  return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(ParameterSet<float>& grads, double max_norm) {
  double ss = 0;
  for (const auto& g : grads.tensors()) {
    for (float v : g) ss += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& g : grads.tensors()) {
      for (auto& v : g) v *= scale;
    }
  }
  return norm;
}

void AdamW::step(ParameterSet<float>& params, const ParameterSet<float>& grads, double lr) {
  if (m_.size() == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  if (grads.names() != params.names()) throw std::invalid_argument("AdamW: gradient names differ from parameters");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double decay = 1.0 - lr * weight_decay_;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.tensors()[k];
    const auto& g = grads.tensors()[k];
    auto& m = m_.tensors()[k];
    auto& v = v_.tensors()[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = beta1_ * m[i] + (1 - beta1_) * gi;
      const double vi = beta2_ * v[i] + (1 - beta2_) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
      p[i] = static_cast<float>(p[i] * decay - lr * update);
    }
  }
}

Trainer::Trainer(TrainConfig cfg, ModelConfig model, std::int64_t total_steps)
    : Trainer(cfg, model, VelocityNet<float>(model).init_parameters(cfg.seed), total_steps) {}

Trainer::Trainer(TrainConfig cfg, ModelConfig model, ParameterSet<float> params, std::int64_t total_steps)
    : cfg_(cfg), net_(std::move(model)), params_(std::move(params)), opt_(cfg.weight_decay),
      total_steps_(total_steps) {
  cfg_.validate();
  if (total_steps_ < 1) throw std::invalid_argument("Trainer: total_steps must be >= 1");
}

double Trainer::apply(const Array& x, const std::vector<double>& taus, const Array& truth, bool reduce_frames) {
  double loss = 0;
  try {
    loss = net_.loss_and_gradients(params_, x, taus, truth, grads_, reduce_frames);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("training step " + std::to_string(step_) + " (lr " + std::to_string(last_lr_) +
                             "): " + e.what());
  }
  last_grad_norm_ = clip_grad_norm(grads_, cfg_.grad_clip);
  // Schedule position counts the update being applied, so the last one decays to 0.
  last_lr_ = learning_rate_at(cfg_, step_ + 1, total_steps_);
  opt_.step(params_, grads_, last_lr_);
  ++step_;
  return loss;
}

namespace {

void require_uniform(const std::vector<PairedFlowEndpoints>& batch) {
  if (batch.empty()) throw std::invalid_argument("training batch is empty");
  for (const auto& e : batch) {
    require_same_shape(e.x0.shape(), batch.front().x0.shape(), "training batch");
    require_same_shape(e.x1.shape(), e.x0.shape(), "flow endpoints");
  }
}

}  // namespace

double Trainer::train_step_tfm(const std::vector<PairedFlowEndpoints>& batch, Rng& rng) {
  require_uniform(batch);
  std::vector<Array> xs, us;
  std::vector<double> taus;
  for (const auto& e : batch) {
    const double tau = sample_fm_step(rng);
    taus.push_back(tau);
    xs.push_back(interpolate(e.x0, e.x1, tau).x_tau);
    us.push_back(true_velocity(e.x0, e.x1));
  }
  return apply(stack(std::span<const Array>(xs)), taus, stack(std::span<const Array>(us)), false);
}

double Trainer::train_step_lci_fm(const std::vector<PairedFlowEndpoints>& batch, Rng& rng) {
  require_uniform(batch);
  if (batch.front().x0.dim(0) != 1) throw std::invalid_argument("lci_fm expects single-frame endpoints");
  return train_step_tfm(batch, rng);
}

double Trainer::train_step_baseline(const std::vector<Array>& contexts, const std::vector<Array>& targets) {
  if (contexts.empty() || contexts.size() != targets.size()) {
    throw std::invalid_argument("baseline batch: need matching non-empty contexts and targets");
  }
  std::vector<Array> ts;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    require_same_shape(contexts[i].shape(), contexts.front().shape(), "baseline batch");
    Shape s{1};
    s.insert(s.end(), targets[i].shape().begin(), targets[i].shape().end());
    ts.push_back(targets[i].reshaped(s));
  }
  const std::vector<double> taus(contexts.size(), 0.0);
  return apply(stack(std::span<const Array>(contexts)), taus, stack(std::span<const Array>(ts)), true);
}

ModelConfig model_for_method(ModelConfig model, TrainMethod method) {
  if (method == TrainMethod::lci_fm) model.in_frames = 1;
  return model;
}

Array method_context(TrainMethod method, const ImageSequence& seq, bool sparsity_filling) {
  if (method == TrainMethod::lci_fm) {
    const Array lci = last_context_image(seq);
    Shape s{1};
    s.insert(s.end(), lci.shape().begin(), lci.shape().end());
    return lci.reshaped(s);
  }
  return sparsity_filling ? sparsity_fill(seq).frames : seq.frames;
}

std::vector<Array> predict_with_method(TrainMethod method, const VelocityNet<float>& net,
                                       const ParameterSet<float>& params, const std::vector<ImageSequence>& seqs,
                                       const SolverConfig& solver, bool sparsity_filling, std::size_t chunk) {
  if (chunk < 1) chunk = 1;
  std::vector<Array> out;
  for (std::size_t begin = 0; begin < seqs.size(); begin += chunk) {
    const std::size_t end = std::min(seqs.size(), begin + chunk);
    std::vector<Array> ctx;
    for (std::size_t i = begin; i < end; ++i) ctx.push_back(method_context(method, seqs[i], sparsity_filling));
    const Array x0 = stack(std::span<const Array>(ctx));
    Array reduced;
    if (method == TrainMethod::direct_baseline) {
      const std::vector<double> taus(ctx.size(), 0.0);
      reduced = temporal_reduce(net.forward(params, x0, taus), Reduction::mean);
    } else {
      reduced = temporal_reduce(integrate<float>(network_field(net, params), x0, solver), solver.reduction);
    }
    for (std::int64_t b = 0; b < reduced.dim(0); ++b) out.push_back(reduced.slice(b));
  }
  return out;
}

std::size_t best_epoch_index(const std::vector<double>& val_mse) {
  if (val_mse.empty()) throw std::invalid_argument("best_epoch_index: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_mse.size(); ++i) {
    if (val_mse[i] < val_mse[best]) best = i;
  }
  return best;
}

FitResult fit(const TrainConfig& cfg, const ModelConfig& model, const std::vector<ImageSequence>& train,
              const std::vector<ImageSequence>& val, const MaskSet& val_masks, const FitOptions& options) {
  cfg.validate();
  if (train.empty() || val.empty()) throw std::invalid_argument("fit: training and validation sets must be non-empty");
  if (val_masks.masks.size() != val.size()) throw std::invalid_argument("fit: validation mask count mismatch");
  const ModelConfig mcfg = model_for_method(model, cfg.method);

  std::vector<ImageSequence> val_masked;
  for (std::size_t i = 0; i < val.size(); ++i) val_masked.push_back(apply_mask(val[i], val_masks.masks[i]));

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((train.size() + bs - 1) / bs);
  std::int64_t total = steps_per_epoch * cfg.epochs;
  if (options.max_steps > 0) total = std::min(total, options.max_steps);

  Trainer trainer(cfg, mcfg, total);
  FitResult result;
  std::vector<double> val_mse;
  const std::int64_t frames = train.front().frames.dim(0);

  for (int epoch = 1; epoch <= cfg.epochs && trainer.step() < total; ++epoch) {
    Rng rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double loss_sum = 0;
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size() && trainer.step() < total; begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      std::vector<PairedFlowEndpoints> pairs;
      std::vector<Array> contexts, targets;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = order[k];
        Rng mask_rng(mix(mix(cfg.seed, static_cast<std::uint64_t>(epoch)), i + 1));
        const ImageSequence masked = apply_mask(train[i], draw_mask(mask_rng, frames, cfg.mask_rate));
        const Array ctx = method_context(cfg.method, masked, cfg.sparsity_filling);
        if (cfg.method == TrainMethod::direct_baseline) {
          contexts.push_back(ctx);
          targets.push_back(masked.target);
        } else {
          pairs.push_back(replicate_target(ctx, masked.target));
        }
      }
      switch (cfg.method) {
        case TrainMethod::tfm: loss_sum += trainer.train_step_tfm(pairs, rng); break;
        case TrainMethod::lci_fm: loss_sum += trainer.train_step_lci_fm(pairs, rng); break;
        case TrainMethod::direct_baseline: loss_sum += trainer.train_step_baseline(contexts, targets); break;
      }
      ++batches;
    }

    const auto preds = predict_with_method(cfg.method, trainer.net(), trainer.params(), val_masked, options.solver,
                                           cfg.sparsity_filling);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / std::max(1, batches);
    // Volumes smaller than the SSIM window only report MSE.
    const SsimOptions ssim_opts;
    const bool with_ssim = mcfg.height >= ssim_opts.window && mcfg.width >= ssim_opts.window;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      rec.val_mse += mse(preds[i], val_masked[i].target);
      rec.val_ssim += with_ssim ? ssim(preds[i], val_masked[i].target, ssim_opts) : std::nan("");
    }
    rec.val_mse /= static_cast<double>(preds.size());
    rec.val_ssim /= static_cast<double>(preds.size());
    rec.lr = trainer.last_lr();
    result.history.push_back(rec);
    val_mse.push_back(rec.val_mse);
    if (best_epoch_index(val_mse) == val_mse.size() - 1) {
      result.best.model = mcfg;
      result.best.params = trainer.params();
      result.best.step = trainer.step();
      result.best.epoch = epoch;
      result.best_epoch = epoch;
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  result.best.meta = {{"method", to_string(cfg.method)},
                      {"sparsity_filling", cfg.sparsity_filling},
                      {"val_mse", val_mse.at(static_cast<std::size_t>(result.best_epoch - 1))},
                      {"val_mask_seed", val_masks.seed}};
  result.final_params = trainer.params();
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  auto num = [](double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  std::ostringstream os;
  os << "epoch,train_loss,val_mse,val_ssim,lr\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_mse) << ',' << num(r.val_ssim) << ',' << num(r.lr)
       << '\n';
  }
  return os.str();
}

}  // namespace tfm
