#include "tfm/sequence_data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace tfm {

void SequenceShape::validate() const {
  if (frames < 1 || depth < 1 || height < 1 || width < 1) {
    throw std::invalid_argument("sequence shape extents must be >= 1, got " + shape_string(stack_shape()));
  }
}

SequenceShape ImageSequence::shape() const {
  if (frames.rank() != 4) throw std::invalid_argument("frames must be [T, D, H, W], got " + shape_string(frames.shape()));
  return {frames.dim(0), frames.dim(1), frames.dim(2), frames.dim(3)};
}

std::int64_t ImageSequence::present_count() const {
  return std::count(presence.begin(), presence.end(), true);
}

void ImageSequence::validate() const {
  const auto s = shape();
  s.validate();
  const auto t = static_cast<std::size_t>(s.frames);
  if (presence.size() != t || times.size() != t) {
    throw std::invalid_argument("presence/times length must equal T=" + std::to_string(t));
  }
  if (target.shape() != s.volume_shape()) {
    throw std::invalid_argument("target shape " + shape_string(target.shape()) + " does not match context volume " +
                                shape_string(s.volume_shape()));
  }
  if (present_count() == 0) throw std::invalid_argument("sequence has no present frame");

  double last_time = -INFINITY;
  for (std::size_t i = 0; i < t; ++i) {
    const auto slice = frames.slice_span(static_cast<std::int64_t>(i));
    if (!presence[i]) {
      if (std::any_of(slice.begin(), slice.end(), [](float v) { return v != 0.0f; })) {
        throw std::invalid_argument("missing slot " + std::to_string(i) + " is not zero-filled");
      }
      continue;
    }
    if (!(times[i] > last_time)) {
      throw std::invalid_argument("present acquisition times must be strictly increasing (slot " + std::to_string(i) + ")");
    }
    last_time = times[i];
  }
  if (!(target_time >= last_time)) throw std::invalid_argument("target_time precedes the last acquisition");

  auto in_range = [](float v) { return std::isfinite(v) && v >= -1e-6f && v <= 1.0f + 1e-6f; };
  if (!std::all_of(frames.begin(), frames.end(), in_range) || !std::all_of(target.begin(), target.end(), in_range)) {
    throw std::invalid_argument("intensities must be finite and within [0, 1]");
  }
}

ImageSequence zero_fill(const std::vector<IndexedFrame>& frames, const SequenceShape& shape, Array target,
                        double target_time) {
  shape.validate();
  ImageSequence seq;
  seq.frames = Array(shape.stack_shape());
  seq.presence.assign(static_cast<std::size_t>(shape.frames), false);
  seq.times.assign(static_cast<std::size_t>(shape.frames), std::nan(""));
  for (const auto& f : frames) {
    if (f.index < 0 || f.index >= shape.frames) {
      throw std::invalid_argument("frame index " + std::to_string(f.index) + " outside [0, " +
                                  std::to_string(shape.frames) + ")");
    }
    if (seq.presence[static_cast<std::size_t>(f.index)]) {
      throw std::invalid_argument("duplicate frame index " + std::to_string(f.index));
    }
    require_same_shape(f.volume.shape(), shape.volume_shape(), "zero_fill volume");
    seq.frames.set_slice(f.index, f.volume);
    seq.presence[static_cast<std::size_t>(f.index)] = true;
    seq.times[static_cast<std::size_t>(f.index)] = f.time;
  }
  require_same_shape(target.shape(), shape.volume_shape(), "zero_fill target");
  seq.target = std::move(target);
  seq.target_time = target_time;
  return seq;
}

FilledSequence fill_frames(const Array& frames, const std::vector<bool>& presence) {
  if (frames.rank() != 4 || static_cast<std::size_t>(frames.dim(0)) != presence.size()) {
    throw std::invalid_argument("fill_frames: frames " + shape_string(frames.shape()) + " vs presence length " +
                                std::to_string(presence.size()));
  }
  const auto first = std::find(presence.begin(), presence.end(), true);
  if (first == presence.end()) throw std::invalid_argument("sparsity_fill: all context slots are missing");

  FilledSequence out{frames, std::vector<std::int64_t>(presence.size())};
  std::int64_t source = first - presence.begin();
  for (std::size_t i = 0; i < presence.size(); ++i) {
    if (presence[i]) source = static_cast<std::int64_t>(i);
    out.fill_source[i] = source;
    if (!presence[i]) {
      const auto src = frames.slice_span(source);
      std::copy(src.begin(), src.end(), out.frames.slice_span(static_cast<std::int64_t>(i)).begin());
    }
  }
  return out;
}

FilledSequence sparsity_fill(const ImageSequence& seq) {
  seq.shape().validate();
  return fill_frames(seq.frames, seq.presence);
}

PairedFlowEndpoints replicate_target(const Array& context, const Array& target) {
  if (context.rank() != 4) throw std::invalid_argument("replicate_target: context must be [T, D, H, W]");
  require_same_shape(target.shape(), Shape(context.shape().begin() + 1, context.shape().end()), "replicate_target");
  PairedFlowEndpoints out{context, Array(context.shape())};
  for (std::int64_t t = 0; t < context.dim(0); ++t) out.x1.set_slice(t, target);
  return out;
}

Array last_context_image(const ImageSequence& seq) {
  const auto it = std::find(seq.presence.rbegin(), seq.presence.rend(), true);
  if (it == seq.presence.rend()) throw std::invalid_argument("last_context_image: no present frame");
  return seq.frames.slice(static_cast<std::int64_t>(seq.presence.rend() - it) - 1);
}

ImageSequence apply_mask(const ImageSequence& seq, const std::vector<bool>& keep) {
  if (keep.size() != seq.presence.size()) throw std::invalid_argument("apply_mask: mask length mismatch");
  ImageSequence out = seq;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) continue;
    out.presence[i] = false;
    auto slice = out.frames.slice_span(static_cast<std::int64_t>(i));
    std::fill(slice.begin(), slice.end(), 0.0f);
  }
  if (out.present_count() == 0) throw std::invalid_argument("apply_mask: mask removes every present frame");
  return out;
}

ImageSequence normalize_intensities(const ImageSequence& seq) {
  float lo = INFINITY, hi = -INFINITY;
  auto scan = [&](std::span<const float> values) {
    for (float v : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  };
  for (std::size_t i = 0; i < seq.presence.size(); ++i) {
    if (seq.presence[i]) scan(seq.frames.slice_span(static_cast<std::int64_t>(i)));
  }
  scan(seq.target.values());
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("normalize_intensities: non-finite data");
  const float range = hi - lo;
  auto map = [&](float v) { return range > 0.0f ? (v - lo) / range : 0.0f; };
  ImageSequence out = seq;
  for (std::size_t i = 0; i < seq.presence.size(); ++i) {
    if (!seq.presence[i]) continue;
    for (float& v : out.frames.slice_span(static_cast<std::int64_t>(i))) v = map(v);
  }
  for (float& v : out.target) v = map(v);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kMagic = "TFMSEQ";

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  auto p = stem;
  p += suffix;
  return p;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw SequenceIoError(SequenceIoErrc::format, "header: cannot parse '" + s + "' for key " + key);
  }
  return v;
}

std::int64_t parse_extent(const std::string& s, const std::string& key) {
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || v < 1) {
    throw SequenceIoError(SequenceIoErrc::format, "header: invalid extent '" + s + "' for key " + key);
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void write_f32le(std::ofstream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                            static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

void decode_f32le(const char* bytes, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* b = reinterpret_cast<const unsigned char*>(bytes + 4 * i);
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                               (std::uint32_t(b[3]) << 24);
    out[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace

void save_sequence(const std::filesystem::path& stem, const ImageSequence& seq) {
  const auto s = seq.shape();
  if (seq.presence.size() != static_cast<std::size_t>(s.frames) || seq.times.size() != seq.presence.size()) {
    throw std::invalid_argument("save_sequence: presence/times length mismatch");
  }
  require_same_shape(seq.target.shape(), s.volume_shape(), "save_sequence target");

  std::ofstream hdr(with_suffix(stem, ".hdr"), std::ios::binary | std::ios::trunc);
  if (!hdr) throw SequenceIoError(SequenceIoErrc::io, "cannot write " + with_suffix(stem, ".hdr").string());
  hdr << kMagic << "\nversion=1\ndtype=f32le\n";
  hdr << "T=" << s.frames << "\nD=" << s.depth << "\nH=" << s.height << "\nW=" << s.width << "\n";
  hdr << "presence=";
  for (std::size_t i = 0; i < seq.presence.size(); ++i) hdr << (i ? "," : "") << (seq.presence[i] ? '1' : '0');
  hdr << "\ntimes=";
  for (std::size_t i = 0; i < seq.times.size(); ++i) hdr << (i ? "," : "") << format_double(seq.times[i]);
  hdr << "\ntarget_time=" << format_double(seq.target_time) << "\n";
  if (!hdr) throw SequenceIoError(SequenceIoErrc::io, "failed writing header for " + stem.string());

  std::ofstream raw(with_suffix(stem, ".raw"), std::ios::binary | std::ios::trunc);
  if (!raw) throw SequenceIoError(SequenceIoErrc::io, "cannot write " + with_suffix(stem, ".raw").string());
  write_f32le(raw, seq.frames.values());
  write_f32le(raw, seq.target.values());
  if (!raw) throw SequenceIoError(SequenceIoErrc::io, "failed writing payload for " + stem.string());
}

ImageSequence load_sequence(const std::filesystem::path& stem) {
  std::ifstream hdr(with_suffix(stem, ".hdr"), std::ios::binary);
  if (!hdr) throw SequenceIoError(SequenceIoErrc::io, "cannot open " + with_suffix(stem, ".hdr").string());
  std::string line;
  if (!std::getline(hdr, line) || line != kMagic) {
    throw SequenceIoError(SequenceIoErrc::format, "bad magic in " + with_suffix(stem, ".hdr").string());
  }
  std::map<std::string, std::string> kv;
  while (std::getline(hdr, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SequenceIoError(SequenceIoErrc::format, "header line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  static const std::set<std::string> required{"version", "dtype", "T", "D", "H", "W", "presence", "times", "target_time"};
  for (const auto& key : required) {
    if (!kv.count(key)) throw SequenceIoError(SequenceIoErrc::format, "header missing key " + key);
  }
  for (const auto& [key, _] : kv) {
    if (!required.count(key)) throw SequenceIoError(SequenceIoErrc::format, "header has unknown key " + key);
  }
  if (kv["version"] != "1") throw SequenceIoError(SequenceIoErrc::format, "unsupported version " + kv["version"]);
  if (kv["dtype"] != "f32le") throw SequenceIoError(SequenceIoErrc::format, "unsupported dtype " + kv["dtype"]);

  const SequenceShape s{parse_extent(kv["T"], "T"), parse_extent(kv["D"], "D"), parse_extent(kv["H"], "H"),
                        parse_extent(kv["W"], "W")};
  ImageSequence seq;
  for (const auto& flag : split_csv(kv["presence"])) {
    if (flag != "0" && flag != "1") throw SequenceIoError(SequenceIoErrc::format, "presence flag '" + flag + "'");
    seq.presence.push_back(flag == "1");
  }
  for (const auto& t : split_csv(kv["times"])) seq.times.push_back(parse_double(t, "times"));
  if (seq.presence.size() != static_cast<std::size_t>(s.frames) || seq.times.size() != seq.presence.size()) {
    throw SequenceIoError(SequenceIoErrc::extent_mismatch, "presence/times length disagrees with T=" + kv["T"]);
  }
  seq.target_time = parse_double(kv["target_time"], "target_time");

  std::ifstream raw(with_suffix(stem, ".raw"), std::ios::binary);
  if (!raw) throw SequenceIoError(SequenceIoErrc::io, "cannot open " + with_suffix(stem, ".raw").string());
  const std::string payload((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  const std::size_t expected = static_cast<std::size_t>((s.frames + 1) * s.voxels()) * sizeof(float);
  if (payload.size() < expected) {
    throw SequenceIoError(SequenceIoErrc::truncated, "payload has " + std::to_string(payload.size()) +
                                                         " bytes, header implies " + std::to_string(expected));
  }
  if (payload.size() > expected) {
    throw SequenceIoError(SequenceIoErrc::extent_mismatch, "payload has " + std::to_string(payload.size()) +
                                                               " bytes, header implies " + std::to_string(expected));
  }
  seq.frames = Array(s.stack_shape());
  seq.target = Array(s.volume_shape());
  decode_f32le(payload.data(), seq.frames.values());
  decode_f32le(payload.data() + seq.frames.size() * sizeof(float), seq.target.values());
  return seq;
}

}  // namespace tfm
