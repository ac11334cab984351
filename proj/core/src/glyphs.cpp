#include "sefnet/data.hpp"

namespace sefnet::data {

namespace {

// 5x7 digit bitmaps, row-major, top row first.
constexpr const char* kGlyphs[10] = {
    "01110"
    "10001"
    "10011"
    "10101"
    "11001"
    "10001"
    "01110",  // 0
    "00100"
    "01100"
    "00100"
    "00100"
    "00100"
    "00100"
    "01110",  // 1
    "01110"
    "10001"
    "00001"
    "00010"
    "00100"
    "01000"
    "11111",  // 2
    "11111"
    "00010"
    "00100"
    "00010"
    "00001"
    "10001"
    "01110",  // 3
    "00010"
    "00110"
    "01010"
    "10010"
    "11111"
    "00010"
    "00010",  // 4
    "11111"
    "10000"
    "11110"
    "00001"
    "00001"
    "10001"
    "01110",  // 5
    "00110"
    "01000"
    "10000"
    "11110"
    "10001"
    "10001"
    "01110",  // 6
    "11111"
    "00001"
    "00010"
    "00100"
    "01000"
    "01000"
    "01000",  // 7
    "01110"
    "10001"
    "10001"
    "01110"
    "10001"
    "10001"
    "01110",  // 8
    "01110"
    "10001"
    "10001"
    "01111"
    "00001"
    "00010"
    "01100",  // 9
};

double glyph_bilinear(int digit, double u, double v) {
  // u in glyph rows [0,7), v in cols [0,5); cell centers at half-integers
  const double gu = u - 0.5, gv = v - 0.5;
  const int r0 = static_cast<int>(std::floor(gu)), c0 = static_cast<int>(std::floor(gv));
  const double fu = gu - r0, fv = gv - c0;
  auto cell = [&](int r, int c) -> double {
    if (r < 0 || r >= 7 || c < 0 || c >= 5) return 0;
    return kGlyphs[digit][r * 5 + c] == '1' ? 1.0 : 0.0;
  };
  return cell(r0, c0) * (1 - fu) * (1 - fv) + cell(r0 + 1, c0) * fu * (1 - fv) +
         cell(r0, c0 + 1) * (1 - fu) * fv + cell(r0 + 1, c0 + 1) * fu * fv;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

Tensor<float> render_digit(int digit, std::uint64_t seed, std::uint64_t index) {
  Rng rng(mix(seed, index));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double gh = 14.0 + 8.0 * uni(rng);   // glyph height in pixels
  const double gw = 10.0 + 6.0 * uni(rng);   // glyph width in pixels
  const double theta = -0.18 + 0.36 * uni(rng);
  const double cy = 14.0 + (-3.0 + 6.0 * uni(rng));
  const double cx = 14.0 + (-3.0 + 6.0 * uni(rng));
  const double intensity = 0.75 + 0.25 * uni(rng);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double ct = std::cos(theta), st = std::sin(theta);

  Tensor<float> img(Shape{28, 28});
  for (int i = 0; i < 28; ++i)
    for (int j = 0; j < 28; ++j) {
      const double dy = i + 0.5 - cy;
      const double dx = j + 0.5 - cx;
      const double ry = ct * dy + st * dx;
      const double rx = -st * dy + ct * dx;
      const double u = ry * (7.0 / gh) + 3.5;
      const double v = rx * (5.0 / gw) + 2.5;
      double val = intensity * glyph_bilinear(digit, u, v) + noise(rng);
      val = std::max(0.0, std::min(1.0, val));
      img.at({i, j}) = static_cast<float>(val);
    }
  return img;
}

}  // namespace

SourcePool synthetic_digits(int count, std::uint64_t seed) {
  if (count < 1) throw DataError("synthetic_digits: count must be positive");
  SourcePool pool;
  pool.name = "synthetic-digits-v1";
  const std::string ident = pool.name + ":" + std::to_string(seed) + ":" + std::to_string(count);
  pool.digest = sha256_hex_bytes(ident.data(), ident.size());
  pool.images.reserve(static_cast<std::size_t>(count));
  pool.labels.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int digit = i % 10;
    pool.images.push_back(render_digit(digit, seed, static_cast<std::uint64_t>(i)));
    pool.labels.push_back(static_cast<std::uint8_t>(digit));
  }
  return pool;
}

}  // namespace sefnet::data
