#include "tfm/paradox_demo.hpp"

#include <numeric>
#include <stdexcept>
#include <vector>

namespace tfm::paradox {

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::domain_error("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num, den);
  num_ = g ? num / g : 0;
  den_ = g ? den / g : 1;
}

std::string Rational::over(std::int64_t den) const {
  if (den > 0 && den % den_ == 0) return std::to_string(num_ * (den / den_)) + "/" + std::to_string(den);
  return str();
}

std::string Rational::str() const { return std::to_string(num_) + "/" + std::to_string(den_); }

Rational operator+(Rational a, Rational b) { return {a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_}; }
Rational operator-(Rational a, Rational b) { return {a.num_ * b.den_ - b.num_ * a.den_, a.den_ * b.den_}; }
Rational operator*(Rational a, Rational b) { return {a.num_ * b.num_, a.den_ * b.den_}; }
Rational operator/(Rational a, Rational b) { return {a.num_ * b.den_, a.den_ * b.num_}; }
bool operator<(Rational a, Rational b) { return a.num_ * b.den_ < b.num_ * a.den_; }

namespace {

enum class Square { checker, black, white };

constexpr int kBlocks = kSide / 2;
// Block coordinates of the central 4x4-pixel patch, in row-major order.
constexpr std::array<std::array<int, 2>, 4> kCenter{{{1, 1}, {1, 2}, {2, 1}, {2, 2}}};

Image render(const std::array<Square, 4>& center) {
  Image img;
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) img[y][x] = Rational((x + y) % 2);
  }
  for (std::size_t k = 0; k < center.size(); ++k) {
    if (center[k] == Square::checker) continue;
    const int by = kCenter[k][0], bx = kCenter[k][1];
    const Rational v(center[k] == Square::white ? 1 : 0);
    for (int y = 2 * by; y < 2 * by + 2; ++y) {
      for (int x = 2 * bx; x < 2 * bx + 2; ++x) img[y][x] = v;
    }
  }
  return img;
}

int count(const std::array<Square, 4>& c, Square s) {
  int n = 0;
  for (auto v : c) n += v == s ? 1 : 0;
  return n;
}

}  // namespace

Rational mse(const Image& a, const Image& b) {
  Rational sum;
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      const Rational d = a[y][x] - b[y][x];
      sum = sum + d * d;
    }
  }
  return sum / Rational(kSide * kSide);
}

Image difference(const Image& a, const Image& b) {
  Image out;
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) out[y][x] = a[y][x] - b[y][x];
  }
  return out;
}

Image coarse_best_prediction(const Image& target, int block) {
  if (block < 1 || kSide % block != 0) {
    throw std::invalid_argument("coarse_best_prediction: block " + std::to_string(block) + " does not divide " +
                                std::to_string(kSide));
  }
  Image out;
  for (int by = 0; by < kSide; by += block) {
    for (int bx = 0; bx < kSide; bx += block) {
      Rational sum;
      for (int y = by; y < by + block; ++y) {
        for (int x = bx; x < bx + block; ++x) sum = sum + target[y][x];
      }
      const Rational mean = sum / Rational(block * block);
      for (int y = by; y < by + block; ++y) {
        for (int x = bx; x < bx + block; ++x) out[y][x] = mean;
      }
    }
  }
  return out;
}

CheckerboardScene build_scene() {
  // Enumerate every assignment of the four central squares for both images:
  // i0 holds two black squares, i1 three, and they differ in exactly one
  // square. Keep the placements whose frames differ by a full 2x2 block
  // (4 of 64 pixels); prefer solid squares over untouched checker tiles, then
  // the first in enumeration order.
  const std::array<Square, 3> states{Square::checker, Square::black, Square::white};
  std::vector<std::array<Square, 4>> all;
  for (auto a : states)
    for (auto b : states)
      for (auto c : states)
        for (auto d : states) all.push_back({a, b, c, d});

  const Rational target_lci(4, kSide * kSide);
  bool found = false;
  int best_checker = 5;
  CheckerboardScene best;
  for (const auto& c0 : all) {
    if (count(c0, Square::black) != 2) continue;
    for (const auto& c1 : all) {
      if (count(c1, Square::black) != 3) continue;
      int changed = 0;
      for (std::size_t k = 0; k < 4; ++k) changed += c0[k] != c1[k] ? 1 : 0;
      if (changed != 1) continue;
      const Image i0 = render(c0), i1 = render(c1);
      if (!(mse(i0, i1) == target_lci)) continue;
      const int checker = count(c0, Square::checker) + count(c1, Square::checker);
      if (checker < best_checker) {
        best_checker = checker;
        best = {i0, i1, 2};
        found = true;
      }
    }
  }
  if (!found) throw std::logic_error("build_scene: no admissible placement");
  return best;
}

ParadoxTable paradox_mse_table(const CheckerboardScene& s) {
  ParadoxTable t;
  t.full_image_mse = mse(coarse_best_prediction(s.i1, s.block), s.i1);
  t.lci_mse = mse(s.i0, s.i1);
  const Image diff = difference(s.i1, s.i0);
  t.difference_mse = mse(coarse_best_prediction(diff, s.block), diff);
  return t;
}

std::string ascii_art(const Image& img) {
  std::string out;
  for (const auto& row : img) {
    for (const auto& v : row) {
      if (v == Rational(1)) out += '#';
      else if (v == Rational(0)) out += '.';
      else out += Rational(0) < v ? '+' : '-';
    }
    out += '\n';
  }
  return out;
}

}  // namespace tfm::paradox
