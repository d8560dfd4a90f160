#include "vln/data/mnist.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <numeric>

#include "vln/common/binary_io.hpp"
#include "vln/common/rng.hpp"

namespace vln::data {

float DigitSprite::ink() const { return std::accumulate(pixels.begin(), pixels.end(), 0.0f); }

std::vector<DigitSprite> parse_mnist(std::string_view image_bytes, std::string_view label_bytes) {
  try {
    binary::Reader images(image_bytes);
    binary::Reader labels(label_bytes);
    const auto image_magic = images.be<std::uint32_t>();
    if (image_magic != kIdxImagesMagic) {
      char found[16];
      std::snprintf(found, sizeof found, "%08x", image_magic);
      throw DataError(std::string("images file has magic 0x") + found + ", expected 0x00000803");
    }
    const auto label_magic = labels.be<std::uint32_t>();
    if (label_magic != kIdxLabelsMagic) throw DataError("labels file has wrong magic number");
    const auto count = images.be<std::uint32_t>();
    const auto rows = images.be<std::uint32_t>();
    const auto cols = images.be<std::uint32_t>();
    if (rows != kDigitSize || cols != kDigitSize) {
      throw DataError("images are " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", expected 28x28");
    }
    const auto label_count = labels.be<std::uint32_t>();
    if (label_count != count) {
      throw DataError("count mismatch: " + std::to_string(count) + " images vs " +
                      std::to_string(label_count) + " labels");
    }
    if (images.remaining() != std::size_t{count} * kDigitPixels) {
      throw DataError("images file holds " + std::to_string(images.remaining()) +
                      " pixel bytes, expected " + std::to_string(std::size_t{count} * kDigitPixels));
    }
    if (labels.remaining() != count) {
      throw DataError("labels file holds " + std::to_string(labels.remaining()) +
                      " label bytes, expected " + std::to_string(count));
    }
    std::vector<DigitSprite> sprites(count);
    for (auto& s : sprites) {
      auto raw = images.bytes(kDigitPixels);
      for (int i = 0; i < kDigitPixels; ++i) {
        s.pixels[i] = static_cast<float>(static_cast<unsigned char>(raw[i])) / 255.0f;
      }
      s.label = labels.le<std::uint8_t>();
      if (s.label > 9) throw DataError("label " + std::to_string(s.label) + " outside 0..9");
    }
    return sprites;
  } catch (const binary::FormatError& e) {
    throw DataError(std::string("truncated IDX file: ") + e.what());
  }
}

std::vector<DigitSprite> load_mnist(const std::string& images_path, const std::string& labels_path) {
  std::string images, labels;
  try {
    images = binary::read_file(images_path);
    labels = binary::read_file(labels_path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  try {
    return parse_mnist(images, labels);
  } catch (const DataError& e) {
    throw DataError(images_path + ": " + e.what());
  }
}

namespace {
void put_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}
}  // namespace

std::string encode_idx_images(std::span<const DigitSprite> sprites) {
  std::string out;
  out.reserve(16 + sprites.size() * kDigitPixels);
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(sprites.size()));
  put_be32(out, kDigitSize);
  put_be32(out, kDigitSize);
  for (const auto& s : sprites) {
    for (float v : s.pixels) {
      out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
  }
  return out;
}

std::string encode_idx_labels(std::span<const DigitSprite> sprites) {
  std::string out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(sprites.size()));
  for (const auto& s : sprites) out.push_back(static_cast<char>(s.label));
  return out;
}

SplitResult stratified_split(std::span<const DigitSprite> sprites, double fraction,
                             std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("split fraction outside [0, 1]");
  std::array<std::vector<std::size_t>, 10> by_class;
  for (std::size_t i = 0; i < sprites.size(); ++i) by_class[sprites[i].label].push_back(i);
  std::vector<bool> to_validation(sprites.size(), false);
  for (int c = 0; c < 10; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) throw DataError("class " + std::to_string(c) + " has no samples");
    CounterRng rng(CounterRng::derive(seed, {0x5350u, static_cast<std::uint64_t>(c)}));
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_val; ++i) to_validation[idx[i]] = true;
  }
  SplitResult out;
  for (std::size_t i = 0; i < sprites.size(); ++i) {
    (to_validation[i] ? out.validation : out.train).push_back(sprites[i]);
  }
  return out;
}

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

std::vector<Point> ellipse(double cx, double cy, double rx, double ry, int segments = 18) {
  std::vector<Point> pts;
  for (int i = 0; i <= segments; ++i) {
    const double a = 2 * std::numbers::pi * i / segments;
    pts.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
  }
  return pts;
}

// Glyphs in a unit box, x right and y down.
std::vector<Stroke> glyph(int digit) {
  switch (digit) {
    case 0: return {ellipse(0.5, 0.5, 0.3, 0.45)};
    case 1: return {{{0.32, 0.22}, {0.52, 0.05}, {0.52, 0.95}}};
    case 2: return {{{0.2, 0.28}, {0.32, 0.09}, {0.52, 0.04}, {0.72, 0.1}, {0.8, 0.3}, {0.7, 0.5},
                     {0.2, 0.95}, {0.85, 0.95}}};
    case 3: return {{{0.2, 0.1}, {0.55, 0.04}, {0.78, 0.18}, {0.72, 0.38}, {0.45, 0.47}, {0.76, 0.58},
                     {0.8, 0.8}, {0.6, 0.95}, {0.2, 0.9}}};
    case 4: return {{{0.66, 0.95}, {0.66, 0.05}, {0.14, 0.66}, {0.88, 0.66}}};
    case 5: return {{{0.8, 0.05}, {0.28, 0.05}, {0.22, 0.45}, {0.55, 0.38}, {0.78, 0.52}, {0.78, 0.8},
                     {0.55, 0.95}, {0.2, 0.9}}};
    case 6: return {{{0.72, 0.05}, {0.4, 0.25}, {0.22, 0.55}, {0.25, 0.85}, {0.5, 0.96}, {0.75, 0.85},
                     {0.78, 0.62}, {0.55, 0.5}, {0.3, 0.56}, {0.22, 0.68}}};
    case 7: return {{{0.15, 0.05}, {0.85, 0.05}, {0.42, 0.95}}};
    case 8: return {ellipse(0.5, 0.27, 0.22, 0.22), ellipse(0.5, 0.71, 0.28, 0.24)};
    case 9: return {ellipse(0.48, 0.3, 0.26, 0.25), {{0.74, 0.3}, {0.66, 0.65}, {0.55, 0.95}}};
    default: throw std::invalid_argument("digit outside 0..9");
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

DigitSprite render_glyph(int digit, CounterRng& rng) {
  const double angle = rng.uniform(-0.2, 0.2);
  const double shear = rng.uniform(-0.25, 0.25);
  const double sx = 14.0 * rng.uniform(0.85, 1.1) * (digit == 1 ? 0.8 : 1.0);
  const double sy = 19.0 * rng.uniform(0.88, 1.05);
  const double thickness = rng.uniform(1.4, 2.6);
  const double cx = 14.0 + rng.uniform(-1.0, 1.0), cy = 14.0 + rng.uniform(-1.0, 1.0);
  const double ca = std::cos(angle), sa = std::sin(angle);

  std::vector<std::vector<Point>> strokes;
  for (const auto& stroke : glyph(digit)) {
    std::vector<Point> mapped;
    for (auto p : stroke) {
      const double jx = p.x + rng.uniform(-0.03, 0.03), jy = p.y + rng.uniform(-0.03, 0.03);
      const double u = (jx - 0.5 + shear * (jy - 0.5)) * sx;
      const double v = (jy - 0.5) * sy;
      mapped.push_back({cx + ca * u - sa * v, cy + sa * u + ca * v});
    }
    strokes.push_back(std::move(mapped));
  }

  DigitSprite sprite;
  sprite.label = static_cast<std::uint8_t>(digit);
  for (int r = 0; r < kDigitSize; ++r) {
    for (int c = 0; c < kDigitSize; ++c) {
      const Point p{c + 0.5, r + 0.5};
      double d = 1e9;
      for (const auto& s : strokes) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
      }
      const double v = std::clamp(1.0 - (d - thickness / 2) / 1.2, 0.0, 1.0);
      sprite.pixels[r * kDigitSize + c] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
  }
  return sprite;
}

}  // namespace

std::vector<DigitSprite> render_synthetic_digits(std::span<const int> per_class_counts,
                                                 std::uint64_t seed) {
  if (per_class_counts.size() != 10) throw std::invalid_argument("need ten per-class counts");
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c) labels.insert(labels.end(), per_class_counts[c], c);
  CounterRng order(CounterRng::derive(seed, {0x4f52u}));
  for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[order.below(i)]);
  std::vector<DigitSprite> sprites;
  sprites.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CounterRng rng(CounterRng::derive(seed, {0x4749u, i}));
    sprites.push_back(render_glyph(labels[i], rng));
  }
  return sprites;
}

}  // namespace vln::data
