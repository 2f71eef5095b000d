#include "tfm/velocity_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>

namespace tfm {

std::string to_string(Conditioning c) {
  return c == Conditioning::cross_attention ? "cross_attention" : "bottleneck_concat";
}

Conditioning parse_conditioning(const std::string& name) {
  if (name == "cross_attention") return Conditioning::cross_attention;
  if (name == "bottleneck_concat") return Conditioning::bottleneck_concat;
  throw std::invalid_argument("unknown conditioning '" + name + "'");
}

void ModelConfig::validate() const {
  if (in_frames < 1) throw std::invalid_argument("model: in_frames must be >= 1");
  if (base_features < 1) throw std::invalid_argument("model: base_features must be >= 1");
  if (channel_mults.empty()) throw std::invalid_argument("model: channel_mults must be non-empty");
  if (std::any_of(channel_mults.begin(), channel_mults.end(), [](int m) { return m < 1; })) {
    throw std::invalid_argument("model: channel_mults must all be >= 1");
  }
  if (res_blocks_per_level < 1) throw std::invalid_argument("model: res_blocks_per_level must be >= 1");
  if (attention_tokens < 1) throw std::invalid_argument("model: attention_tokens must be >= 1");
  if (depth < 1 || height < 1 || width < 1) throw std::invalid_argument("model: extents must be >= 1");
  const std::int64_t factor = std::int64_t{1} << (levels() - 1);
  if (depth % factor || height % factor || width % factor) {
    throw std::invalid_argument("model: extents [" + std::to_string(depth) + ", " + std::to_string(height) + ", " +
                                std::to_string(width) + "] are not divisible by 2^(levels-1) = " +
                                std::to_string(factor));
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"in_frames", in_frames},
          {"depth", depth},
          {"height", height},
          {"width", width},
          {"base_features", base_features},
          {"channel_mults", channel_mults},
          {"res_blocks_per_level", res_blocks_per_level},
          {"attention_resolution", attention_resolution},
          {"conditioning", to_string(conditioning)},
          {"attention_tokens", attention_tokens}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "in_frames") cfg.in_frames = value.get<int>();
    else if (key == "depth") cfg.depth = value.get<std::int64_t>();
    else if (key == "height") cfg.height = value.get<std::int64_t>();
    else if (key == "width") cfg.width = value.get<std::int64_t>();
    else if (key == "base_features") cfg.base_features = value.get<int>();
    else if (key == "channel_mults") cfg.channel_mults = value.get<std::vector<int>>();
    else if (key == "res_blocks_per_level") cfg.res_blocks_per_level = value.get<int>();
    else if (key == "attention_resolution") cfg.attention_resolution = value.get<int>();
    else if (key == "conditioning") cfg.conditioning = parse_conditioning(value.get<std::string>());
    else if (key == "attention_tokens") cfg.attention_tokens = value.get<int>();
    else throw std::invalid_argument("model: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

int norm_groups(std::int64_t channels) {
  int g = static_cast<int>(std::min<std::int64_t>(8, channels));
  while (channels % g) --g;
  return g;
}

// ---------------------------------------------------------------------------
// ParameterSet

template <class T>
void ParameterSet<T>::insert(std::string name, Tensor<T> value) {
  const auto it = std::lower_bound(names_.begin(), names_.end(), name);
  if (it != names_.end() && *it == name) throw std::invalid_argument("duplicate parameter " + name);
  const auto pos = it - names_.begin();
  names_.insert(it, std::move(name));
  tensors_.insert(tensors_.begin() + pos, std::move(value));
}

template <class T>
std::ptrdiff_t ParameterSet<T>::find(const std::string& name) const {
  const auto it = std::lower_bound(names_.begin(), names_.end(), name);
  return it != names_.end() && *it == name ? it - names_.begin() : -1;
}

template <class T>
const Tensor<T>& ParameterSet<T>::at(const std::string& name) const {
  const auto i = find(name);
  if (i < 0) throw std::out_of_range("no parameter named " + name);
  return tensors_[static_cast<std::size_t>(i)];
}

template <class T>
Tensor<T>& ParameterSet<T>::at(const std::string& name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
}

template <class T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out;
  out.names_ = names_;
  for (const auto& t : tensors_) out.tensors_.emplace_back(t.shape());
  return out;
}

template <class T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <class T>
bool ParameterSet<T>::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(), [](const Tensor<T>& t) {
    return std::all_of(t.begin(), t.end(), [](T v) { return std::isfinite(v); });
  });
}

template class ParameterSet<float>;
template class ParameterSet<double>;

std::vector<double> fm_step_embedding(double tau, int dim) {
  std::vector<double> out(static_cast<std::size_t>(std::max(dim, 0)), 0.0);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = 1000.0 * tau * freq;
    out[static_cast<std::size_t>(i)] = std::cos(arg);
    out[static_cast<std::size_t>(half + i)] = std::sin(arg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network

namespace {

enum class Init { fan_in_uniform, zeros, ones };

// Hands out graph leaves for named parameters. In creation mode, missing
// parameters are initialized on first use, so the parameter layout is defined
// by the forward pass itself.
template <class T>
class ParamScope {
 public:
  ParamScope(nn::Graph<T>& g, const ParameterSet<T>& params) : g_(g), params_(&params) {}
  ParamScope(nn::Graph<T>& g, ParameterSet<T>& creating, Rng& rng) : g_(g), creating_(&creating), rng_(&rng) {}

  nn::Var<T> get(const std::string& name, const Shape& shape, Init init, std::int64_t fan_in) {
    if (creating_) {
      Tensor<T> value(shape);
      if (init == Init::ones) value.fill(T{1});
      if (init == Init::fan_in_uniform) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : value) v = static_cast<T>((2.0 * uniform01(*rng_) - 1.0) * bound);
      }
      creating_->insert(name, value);
      return g_.leaf(std::move(value));
    }
    const auto index = params_->find(name);
    if (index < 0) throw std::invalid_argument("parameter set lacks " + name);
    const auto& value = params_->tensors()[static_cast<std::size_t>(index)];
    if (value.shape() != shape) {
      throw std::invalid_argument("parameter " + name + " has shape " + shape_string(value.shape()) + ", expected " +
                                  shape_string(shape));
    }
    auto leaf = g_.leaf(value);
    used.emplace_back(index, leaf);
    return leaf;
  }

  std::vector<std::pair<std::ptrdiff_t, nn::Var<T>>> used;

 private:
  nn::Graph<T>& g_;
  const ParameterSet<T>* params_ = nullptr;
  ParameterSet<T>* creating_ = nullptr;
  Rng* rng_ = nullptr;
};

template <class T>
class UNet {
 public:
  using V = nn::Var<T>;

  UNet(const ModelConfig& cfg, nn::Graph<T>& g, ParamScope<T>& scope) : cfg_(cfg), g_(g), scope_(scope) {}

  V run(const V& x, std::span<const double> taus) {
    const std::int64_t batch = x.dim(0);
    const std::int64_t c0 = cfg_.base_features;
    const bool cross = cfg_.conditioning == Conditioning::cross_attention;

    Tensor<T> emb({batch, c0});
    for (std::int64_t b = 0; b < batch; ++b) {
      const auto e = fm_step_embedding(taus[static_cast<std::size_t>(b)], static_cast<int>(c0));
      std::transform(e.begin(), e.end(), emb.data() + b * c0, [](double v) { return static_cast<T>(v); });
    }
    const V temb = dense("time_embed.1", nn::silu(dense("time_embed.0", g_.constant(std::move(emb)), cfg_.time_dim())),
                         cfg_.time_dim());
    temb_act_ = nn::silu(temb);
    if (cross) {
      tokens_ = nn::reshape(dense("time_tokens", temb_act_, std::int64_t{cfg_.attention_tokens} * cfg_.time_dim()),
                            {batch * cfg_.attention_tokens, cfg_.time_dim()});
    }

    V h = conv("input", x, c0, 3);
    std::vector<V> skips{h};
    for (int l = 0; l < cfg_.levels(); ++l) {
      const std::int64_t ch = c0 * cfg_.channel_mults[static_cast<std::size_t>(l)];
      for (int i = 0; i < cfg_.res_blocks_per_level; ++i) {
        const auto name = "down." + std::to_string(l) + "." + std::to_string(i);
        h = res_block(name, h, ch);
        if (attends(l)) h = cross_attention(name + ".attn", h);
        skips.push_back(h);
      }
      if (l + 1 < cfg_.levels()) {
        h = nn::avg_pool2(h);
        skips.push_back(h);
      }
    }

    const std::int64_t mid = h.dim(1);
    h = res_block("mid.0", h, mid);
    if (cross) {
      if (attends(cfg_.levels() - 1)) h = cross_attention("mid.attn", h);
    } else {
      const V cond = nn::broadcast_spatial(temb_act_, h.dim(2), h.dim(3), h.dim(4));
      h = conv("mid.concat", nn::concat_channels(h, cond), mid, 1);
    }
    h = res_block("mid.1", h, mid);

    for (int l = cfg_.levels() - 1; l >= 0; --l) {
      const std::int64_t ch = c0 * cfg_.channel_mults[static_cast<std::size_t>(l)];
      for (int i = 0; i <= cfg_.res_blocks_per_level; ++i) {
        const auto name = "up." + std::to_string(l) + "." + std::to_string(i);
        h = nn::concat_channels(h, skips.back());
        skips.pop_back();
        h = res_block(name, h, ch);
        if (attends(l)) h = cross_attention(name + ".attn", h);
      }
      if (l > 0) h = conv("up." + std::to_string(l) + ".upsample", nn::upsample_nearest2(h), ch, 3);
    }
    return conv("out", nn::silu(norm("out.norm", h)), cfg_.in_frames, 3, /*zero=*/true);
  }

 private:
  bool attends(int level) const {
    return cfg_.conditioning == Conditioning::cross_attention && (cfg_.height >> level) <= cfg_.attention_resolution;
  }

  V conv(const std::string& name, const V& x, std::int64_t cout, int k, bool zero = false) {
    const std::int64_t cin = x.dim(1);
    const std::int64_t fan = cin * k * k * k;
    const Init init = zero ? Init::zeros : Init::fan_in_uniform;
    const V w = scope_.get(name + ".weight", {cout, cin, k, k, k}, init, fan);
    const V b = scope_.get(name + ".bias", {cout}, init, fan);
    return nn::conv3d(x, w, b);
  }

  V dense(const std::string& name, const V& x, std::int64_t outs) {
    const std::int64_t in = x.dim(1);
    const V w = scope_.get(name + ".weight", {outs, in}, Init::fan_in_uniform, in);
    const V b = scope_.get(name + ".bias", {outs}, Init::fan_in_uniform, in);
    return nn::linear(x, w, b);
  }

  V norm(const std::string& name, const V& x) {
    const std::int64_t c = x.dim(1);
    const V gamma = scope_.get(name + ".weight", {c}, Init::ones, c);
    const V beta = scope_.get(name + ".bias", {c}, Init::zeros, c);
    return nn::group_norm(x, gamma, beta, norm_groups(c));
  }

  V res_block(const std::string& name, const V& x, std::int64_t cout) {
    V h = conv(name + ".conv1", nn::silu(norm(name + ".norm1", x)), cout, 3);
    if (cfg_.conditioning == Conditioning::cross_attention) {
      h = nn::add_channel_bias(h, dense(name + ".emb", temb_act_, cout));
    }
    h = conv(name + ".conv2", nn::silu(norm(name + ".norm2", h)), cout, 3);
    const V skip = x.dim(1) == cout ? x : conv(name + ".skip", x, cout, 1);
    return nn::add(skip, h);
  }

  // Queries from the feature map, keys and values from the FM-step tokens.
  V cross_attention(const std::string& name, const V& x) {
    const Shape s = x.shape();
    const std::int64_t batch = s[0], c = s[1], n = s[2] * s[3] * s[4];
    const V q = nn::reshape(conv(name + ".q", norm(name + ".norm", x), c, 1), {batch, c, n});
    const V k = nn::reshape(dense(name + ".k", tokens_, c), {batch, std::int64_t{cfg_.attention_tokens}, c});
    const V v = nn::reshape(dense(name + ".v", tokens_, c), {batch, std::int64_t{cfg_.attention_tokens}, c});
    const V o = nn::reshape(nn::attention(q, k, v), s);
    return nn::add(x, conv(name + ".proj", o, c, 1));
  }

  const ModelConfig& cfg_;
  nn::Graph<T>& g_;
  ParamScope<T>& scope_;
  V temb_act_;
  V tokens_;
};

template <class T>
void check_input(const ModelConfig& cfg, const Tensor<T>& x, std::span<const double> taus) {
  const Shape expected{x.rank() ? x.dim(0) : 0, cfg.in_frames, cfg.depth, cfg.height, cfg.width};
  if (x.rank() != 5 || x.shape() != expected) {
    throw std::invalid_argument("velocity net: input " + shape_string(x.shape()) + " does not match [B, " +
                                std::to_string(cfg.in_frames) + ", " + std::to_string(cfg.depth) + ", " +
                                std::to_string(cfg.height) + ", " + std::to_string(cfg.width) + "]");
  }
  if (taus.size() != static_cast<std::size_t>(x.dim(0))) {
    throw std::invalid_argument("velocity net: expected one FM step per batch entry");
  }
  for (double tau : taus) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("velocity net: FM step outside [0, 1]");
  }
}

}  // namespace

template <class T>
VelocityNet<T>::VelocityNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

template <class T>
ParameterSet<T> VelocityNet<T>::init_parameters(std::uint64_t seed) const {
  Rng rng(seed);
  ParameterSet<T> params;
  nn::Graph<T> g(false);
  ParamScope<T> scope(g, params, rng);
  UNet<T> net(cfg_, g, scope);
  const double tau = 0.0;
  net.run(g.constant(Tensor<T>({1, cfg_.in_frames, cfg_.depth, cfg_.height, cfg_.width})), std::span(&tau, 1));
  return params;
}

template <class T>
Tensor<T> VelocityNet<T>::forward(const ParameterSet<T>& params, const Tensor<T>& x,
                                  std::span<const double> taus) const {
  check_input(cfg_, x, taus);
  nn::Graph<T> g(false);
  ParamScope<T> scope(g, params);
  UNet<T> net(cfg_, g, scope);
  return net.run(g.constant(x), taus).value();
}

template <class T>
double VelocityNet<T>::loss_and_gradients(const ParameterSet<T>& params, const Tensor<T>& x,
                                          std::span<const double> taus, const Tensor<T>& truth,
                                          ParameterSet<T>& grads, bool reduce_frames, Tensor<T>* input_grad) const {
  check_input(cfg_, x, taus);
  nn::Graph<T> g(true);
  ParamScope<T> scope(g, params);
  UNet<T> net(cfg_, g, scope);
  const auto input = input_grad ? g.leaf(x) : g.constant(x);
  auto out = net.run(input, taus);
  if (reduce_frames) out = nn::channel_mean(out);
  const auto loss = nn::mse_loss(out, truth);
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) {
    throw std::runtime_error("non-finite loss " + std::to_string(value) + " (parameters finite: " +
                             (params.all_finite() ? "yes" : "no") + ")");
  }
  g.backward(loss);

  if (grads.names() != params.names()) grads = params.zeros_like();
  for (auto& t : grads.tensors()) t.fill(T{0});
  for (const auto& [index, leaf] : scope.used) {
    if (!g.has_grad(leaf.id)) continue;
    auto& dst = grads.tensors()[static_cast<std::size_t>(index)];
    const auto& src = g.grad(leaf.id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  if (input_grad) *input_grad = g.has_grad(input.id) ? g.grad(input.id) : Tensor<T>(x.shape());
  return value;
}

template class VelocityNet<float>;
template class VelocityNet<double>;

Array predict_velocity(const VelocityNet<float>& net, const ParameterSet<float>& params, const FlowState& state) {
  Shape batched{1};
  batched.insert(batched.end(), state.x_tau.shape().begin(), state.x_tau.shape().end());
  auto out = net.forward(params, state.x_tau.reshaped(batched), std::span(&state.tau, 1));
  return std::move(out).reshaped(state.x_tau.shape());
}

// ---------------------------------------------------------------------------
// Checkpoints: "TFMCKPT1" | u64 LE header length | JSON header | f32 LE tensors

namespace {

constexpr char kCheckpointMagic[8] = {'T', 'F', 'M', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header{{"format", "tfm-checkpoint"},
                        {"version", 1},
                        {"model", ckpt.model.to_json()},
                        {"step", ckpt.step},
                        {"epoch", ckpt.epoch},
                        {"meta", ckpt.meta}};
  auto& index = header["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    index.push_back({{"name", ckpt.params.names()[i]}, {"shape", ckpt.params.tensors()[i].shape()}});
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.params.tensors()) {
    for (float v : t) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || !std::equal(kCheckpointMagic, kCheckpointMagic + 8, bytes.data())) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const std::uint64_t header_len = get_u64(p + 8);
  if (bytes.size() < 16 + header_len) throw std::runtime_error("truncated checkpoint header: " + path.string());
  const auto header = nlohmann::json::parse(bytes.substr(16, header_len));
  if (header.at("format") != "tfm-checkpoint" || header.at("version") != 1) {
    throw std::runtime_error("unsupported checkpoint format in " + path.string());
  }
  Checkpoint ckpt;
  ckpt.model = ModelConfig::from_json(header.at("model"));
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.epoch = header.at("epoch").get<std::int64_t>();
  ckpt.meta = header.at("meta");
  std::size_t offset = 16 + header_len;
  for (const auto& entry : header.at("tensors")) {
    Tensor<float> t(entry.at("shape").get<Shape>());
    if (bytes.size() < offset + 4 * t.size()) throw std::runtime_error("truncated checkpoint payload: " + path.string());
    for (auto& v : t) {
      const auto* b = p + offset;
      v = std::bit_cast<float>(std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                               (std::uint32_t(b[3]) << 24));
      offset += 4;
    }
    ckpt.params.insert(entry.at("name").get<std::string>(), std::move(t));
  }
  if (offset != bytes.size()) throw std::runtime_error("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

}  // namespace tfm
