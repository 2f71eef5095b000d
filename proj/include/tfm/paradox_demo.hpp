#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tfm::paradox {

/// Exact fraction in lowest terms with a positive denominator.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1);

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }
  double value() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

  /// "n/den" when representable over `den`, otherwise the reduced form.
  std::string over(std::int64_t den) const;
  std::string str() const;

  friend Rational operator+(Rational a, Rational b);
  friend Rational operator-(Rational a, Rational b);
  friend Rational operator*(Rational a, Rational b);
  friend Rational operator/(Rational a, Rational b);
  friend bool operator==(const Rational&, const Rational&) = default;
  friend bool operator<(Rational a, Rational b);

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

inline constexpr int kSide = 8;
using Image = std::array<std::array<Rational, kSide>, kSide>;

struct CheckerboardScene {
  Image i0;
  Image i1;
  int block = 2;  ///< coarse resolution: block x block pixels per constant value
};

/// Checkerboard whose central squares are replaced by solid black/white blocks;
/// i1 blackens one more square than i0.
CheckerboardScene build_scene();

/// Replaces every block x block tile by its mean.
Image coarse_best_prediction(const Image& target, int block);

Rational mse(const Image& a, const Image& b);
Image difference(const Image& a, const Image& b);

struct ParadoxTable {
  Rational full_image_mse;  ///< coarse model predicting i1 directly
  Rational lci_mse;         ///< predicting i1 by i0
  Rational difference_mse;  ///< coarse model predicting i1 - i0
};

ParadoxTable paradox_mse_table(const CheckerboardScene& scene);
inline ParadoxTable paradox_mse_table() { return paradox_mse_table(build_scene()); }

/// '#' for 1, '.' for 0, '+' / '-' for other positive / negative values.
std::string ascii_art(const Image& img);

}  // namespace tfm::paradox
