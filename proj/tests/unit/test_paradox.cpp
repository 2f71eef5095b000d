#include "doctest.h"
#include "tfm/paradox_demo.hpp"

using namespace tfm::paradox;

namespace {

int count_nonzero(const Image& img) {
  int n = 0;
  for (const auto& row : img)
    for (const auto& v : row) n += v == Rational(0) ? 0 : 1;
  return n;
}

}  // namespace

TEST_CASE("rational arithmetic stays reduced") {
  CHECK(Rational(2, 4) == Rational(1, 2));
  CHECK(Rational(1, -2) == Rational(-1, 2));
  CHECK(Rational(1, 3) + Rational(1, 6) == Rational(1, 2));
  CHECK(Rational(3, 16).over(64) == "12/64");
  CHECK(Rational(1, 3).over(64) == "1/3");
  CHECK(Rational(1, 4) < Rational(1, 3));
  CHECK_THROWS_AS(Rational(1, 0), std::domain_error);
}

TEST_CASE("scene structure") {
  const auto s = build_scene();
  const Image diff = difference(s.i1, s.i0);
  CHECK(count_nonzero(diff) == 4);
  Rational first;
  bool have = false;
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      const auto& v = diff[y][x];
      CHECK(((v == Rational(0)) || (v == Rational(-1))));
      if (!(v == Rational(0))) {
        if (have) CHECK(v == first);
        first = v;
        have = true;
        CHECK(y >= 2);
        CHECK(y < 6);
        CHECK(x >= 2);
        CHECK(x < 6);
      }
      const bool binary0 = s.i0[y][x] == Rational(0) || s.i0[y][x] == Rational(1);
      const bool binary1 = s.i1[y][x] == Rational(0) || s.i1[y][x] == Rational(1);
      CHECK(binary0);
      CHECK(binary1);
      const bool outside = y < 2 || y >= 6 || x < 2 || x >= 6;
      if (outside) CHECK(s.i0[y][x] == Rational((x + y) % 2));
    }
  }
}

TEST_CASE("coarse prediction of a plain checkerboard is uniform one half") {
  Image board;
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) board[y][x] = Rational((x + y) % 2);
  const Image p = coarse_best_prediction(board, 2);
  for (const auto& row : p)
    for (const auto& v : row) CHECK(v == Rational(1, 2));
  CHECK(mse(p, board) == Rational(1, 4));
  CHECK(mse(coarse_best_prediction(board, 1), board) == Rational(0));
  CHECK_THROWS_AS(coarse_best_prediction(board, 3), std::invalid_argument);

  Image flat;
  for (auto& row : flat) row.fill(Rational(3, 7));
  CHECK(mse(coarse_best_prediction(flat, 4), flat) == Rational(0));
}

TEST_CASE("paradox table") {
  const auto t = paradox_mse_table();
  CHECK(t.difference_mse == Rational(0));
  CHECK(t.lci_mse == Rational(4, 64));
  CHECK(t.full_image_mse == Rational(12, 64));
  CHECK(t.difference_mse < t.lci_mse);
  CHECK(t.lci_mse < t.full_image_mse);
  CHECK(t.full_image_mse.over(64) == "12/64");
}

TEST_CASE("ascii art") {
  const auto art = ascii_art(build_scene().i0);
  CHECK(art.size() == 72);
  CHECK(art.substr(0, 9) == ".#.#.#.#\n");
}
