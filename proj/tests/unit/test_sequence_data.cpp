#include <cmath>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "helpers.hpp"

using namespace tfm;
using tfm::testing::ramp_sequence;

namespace {

ImageSequence with_presence(const std::vector<bool>& keep) {
  return apply_mask(ramp_sequence({static_cast<std::int64_t>(keep.size()), 1, 2, 2}), keep);
}

float frame_value(const Array& frames, std::int64_t t) { return frames.slice_span(t)[0]; }

}  // namespace

TEST_CASE("sequence shape validation") {
  CHECK_NOTHROW(SequenceShape{7, 8, 32, 32}.validate());
  CHECK_THROWS_AS(SequenceShape({0, 8, 32, 32}).validate(), std::invalid_argument);
  CHECK(SequenceShape{7, 8, 32, 32}.voxels() == 8 * 32 * 32);
}

TEST_CASE("zero_fill places frames and zeroes the gaps") {
  const SequenceShape s{4, 1, 2, 2};
  std::vector<IndexedFrame> frames{{1, 1.0, Array(s.volume_shape(), 0.5f)}, {3, 3.2, Array(s.volume_shape(), 0.7f)}};
  const auto seq = zero_fill(frames, s, Array(s.volume_shape(), 0.8f), 4.0);
  CHECK(seq.presence == std::vector<bool>{false, true, false, true});
  CHECK(frame_value(seq.frames, 0) == 0.0f);
  CHECK(frame_value(seq.frames, 1) == 0.5f);
  CHECK(frame_value(seq.frames, 3) == 0.7f);
  CHECK(std::isnan(seq.times[0]));
  CHECK(seq.times[3] == 3.2);
  CHECK_NOTHROW(seq.validate());

  SUBCASE("rejections") {
    std::vector<IndexedFrame> dup{{1, 1.0, Array(s.volume_shape())}, {1, 1.5, Array(s.volume_shape())}};
    CHECK_THROWS_AS(zero_fill(dup, s, Array(s.volume_shape()), 4.0), std::invalid_argument);
    std::vector<IndexedFrame> out_of_range{{4, 1.0, Array(s.volume_shape())}};
    CHECK_THROWS_AS(zero_fill(out_of_range, s, Array(s.volume_shape()), 4.0), std::invalid_argument);
    std::vector<IndexedFrame> bad_shape{{0, 0.0, Array({1, 3, 2})}};
    CHECK_THROWS_AS(zero_fill(bad_shape, s, Array(s.volume_shape()), 4.0), std::invalid_argument);
  }
}

TEST_CASE("validate catches broken invariants") {
  auto seq = ramp_sequence({3, 1, 2, 2});
  CHECK_NOTHROW(seq.validate());

  auto nonzero_missing = seq;
  nonzero_missing.presence[1] = false;
  CHECK_THROWS_AS(nonzero_missing.validate(), std::invalid_argument);

  CHECK_THROWS_AS(apply_mask(seq, {false, false, false}), std::invalid_argument);
  auto none = seq;
  none.presence.assign(3, false);
  none.frames.fill(0.0f);
  CHECK_THROWS_AS(none.validate(), std::invalid_argument);

  auto unordered = seq;
  unordered.times = {0.0, 2.0, 1.0};
  CHECK_THROWS_AS(unordered.validate(), std::invalid_argument);

  auto early_target = seq;
  early_target.target_time = 1.5;
  CHECK_THROWS_AS(early_target.validate(), std::invalid_argument);

  auto out_of_range = seq;
  out_of_range.target[0] = 1.5f;
  CHECK_THROWS_AS(out_of_range.validate(), std::invalid_argument);
}

TEST_CASE("sparsity_fill forward-fills and back-fills leading gaps") {
  // present: slots 1 and 3 (values 0.2, 0.4)
  const auto seq = with_presence({false, true, false, true, false});
  const auto filled = sparsity_fill(seq);
  CHECK(filled.fill_source == std::vector<std::int64_t>{1, 1, 1, 3, 3});
  CHECK(frame_value(filled.frames, 0) == doctest::Approx(0.2f));
  CHECK(frame_value(filled.frames, 2) == doctest::Approx(0.2f));
  CHECK(frame_value(filled.frames, 4) == doctest::Approx(0.4f));
}

TEST_CASE("sparsity_fill is the identity on dense sequences and idempotent") {
  const auto seq = ramp_sequence({4, 1, 2, 2});
  CHECK(sparsity_fill(seq).frames == seq.frames);

  const auto sparse = with_presence({true, false, false, true});
  const auto once = fill_frames(sparse.frames, sparse.presence);
  const std::vector<bool> all(4, true);
  CHECK(fill_frames(once.frames, all).frames == once.frames);
}

TEST_CASE("every filled slot copies the latest present slot at or before it") {
  const std::vector<std::vector<bool>> patterns{
      {true, false, false, false}, {false, false, false, true}, {false, true, true, false}, {true, false, true, false}};
  for (const auto& p : patterns) {
    const auto filled = sparsity_fill(with_presence(p));
    const std::int64_t first = std::find(p.begin(), p.end(), true) - p.begin();
    std::int64_t last = -1;
    for (std::int64_t t = 0; t < 4; ++t) {
      if (p[static_cast<std::size_t>(t)]) last = t;
      CHECK(filled.fill_source[static_cast<std::size_t>(t)] == (last >= 0 ? last : first));
    }
  }
}

TEST_CASE("replicate_target repeats the target per frame") {
  const auto seq = ramp_sequence({3, 1, 2, 2});
  const auto ends = replicate_target(seq, seq.target);
  CHECK(ends.x0 == seq.frames);
  REQUIRE(ends.x1.shape() == seq.frames.shape());
  for (std::int64_t t = 0; t < 3; ++t) CHECK(ends.x1.slice(t) == seq.target);
  CHECK_THROWS_AS(replicate_target(seq.frames, Array({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("last_context_image picks the latest acquired slot") {
  CHECK(frame_value(last_context_image(with_presence({true, true, false})), 0) == doctest::Approx(0.2f));
  CHECK(frame_value(last_context_image(with_presence({true, true, true})), 0) == doctest::Approx(0.3f));
}

TEST_CASE("normalize_intensities maps into the unit range") {
  auto seq = ramp_sequence({2, 1, 2, 2});
  const auto n = normalize_intensities(seq);
  CHECK(*std::min_element(n.frames.begin(), n.frames.end()) == doctest::Approx(0.0f));
  CHECK(*std::max_element(n.target.begin(), n.target.end()) == doctest::Approx(1.0f));
}

TEST_CASE("sequence files round-trip") {
  tfm::testing::TempDir dir("seqio");
  const auto seq = with_presence({true, false, true});
  save_sequence(dir.path / "a", seq);
  const auto back = load_sequence(dir.path / "a");
  CHECK(back.frames == seq.frames);
  CHECK(back.presence == seq.presence);
  CHECK(back.target == seq.target);
  CHECK(back.target_time == seq.target_time);
  CHECK(back.times == seq.times);

  const SequenceShape s{3, 1, 1, 2};
  const auto sparse = zero_fill({{2, 2.5, Array(s.volume_shape(), 0.25f)}}, s, Array(s.volume_shape(), 0.5f), 3.0);
  save_sequence(dir.path / "b", sparse);
  const auto back_sparse = load_sequence(dir.path / "b");
  CHECK(std::isnan(back_sparse.times[0]));
  CHECK(back_sparse.times[2] == 2.5);
}

TEST_CASE("sequence file errors carry a category") {
  tfm::testing::TempDir dir("seqerr");
  const auto seq = ramp_sequence({2, 1, 2, 2});
  save_sequence(dir.path / "s", seq);

  auto code_of = [&](const std::filesystem::path& stem) {
    try {
      load_sequence(stem);
    } catch (const SequenceIoError& e) {
      return e.code();
    }
    FAIL("expected SequenceIoError");
    return SequenceIoErrc::io;
  };

  CHECK(code_of(dir.path / "missing") == SequenceIoErrc::io);

  std::filesystem::resize_file(dir.path / "s.raw", std::filesystem::file_size(dir.path / "s.raw") - 4);
  CHECK(code_of(dir.path / "s") == SequenceIoErrc::truncated);

  save_sequence(dir.path / "s", seq);
  {
    std::ofstream extra(dir.path / "s.raw", std::ios::app | std::ios::binary);
    extra.write("\0\0\0\0", 4);
  }
  CHECK(code_of(dir.path / "s") == SequenceIoErrc::extent_mismatch);

  {
    std::ofstream bad(dir.path / "b.hdr");
    bad << "TFMSEQ\nversion=1\nbogus=3\n";
  }
  std::ofstream(dir.path / "b.raw").put('x');
  CHECK(code_of(dir.path / "b") == SequenceIoErrc::format);
}
