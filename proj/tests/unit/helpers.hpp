#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "tfm/sequence_data.hpp"

namespace tfm::testing {

inline Array random_array(Shape shape, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Array a(std::move(shape));
  for (auto& v : a) v = u(rng);
  return a;
}

/// Fully present sequence with constant-valued frames 0.1, 0.2, ... and target 0.9.
inline ImageSequence ramp_sequence(const SequenceShape& s) {
  ImageSequence seq;
  seq.frames = Array(s.stack_shape());
  for (std::int64_t t = 0; t < s.frames; ++t) {
    auto slice = seq.frames.slice_span(t);
    std::fill(slice.begin(), slice.end(), 0.1f * static_cast<float>(t + 1));
    seq.times.push_back(static_cast<double>(t));
  }
  seq.presence.assign(static_cast<std::size_t>(s.frames), true);
  seq.target = Array(s.volume_shape(), 0.9f);
  seq.target_time = static_cast<double>(s.frames);
  return seq;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("tfm_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace tfm::testing
