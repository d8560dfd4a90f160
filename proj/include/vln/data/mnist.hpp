#pragma once

// MNIST digits in IDX format (big-endian): images magic 0x00000803 with
// dimensions (count, 28, 28), labels magic 0x00000801 with dimension (count).

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vln::data {

inline constexpr int kDigitSize = 28;
inline constexpr int kDigitPixels = kDigitSize * kDigitSize;
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Per-class sample counts of the MNIST train and test partitions.
inline constexpr std::array<int, 10> kMnistTrainClassCounts{5923, 6742, 5958, 6131, 5842,
                                                            5421, 5918, 6265, 5851, 5949};
inline constexpr std::array<int, 10> kMnistTestClassCounts{980, 1135, 1032, 1010, 982,
                                                           892, 958,  1028, 974,  1009};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DigitSprite {
  std::array<float, kDigitPixels> pixels{};  // row-major, [0, 1]
  std::uint8_t label = 0;

  float ink() const;
};

std::vector<DigitSprite> parse_mnist(std::string_view image_bytes, std::string_view label_bytes);
std::vector<DigitSprite> load_mnist(const std::string& images_path, const std::string& labels_path);

// Pixels are quantized to round(255 * v).
std::string encode_idx_images(std::span<const DigitSprite> sprites);
std::string encode_idx_labels(std::span<const DigitSprite> sprites);

struct SplitResult {
  std::vector<DigitSprite> train;
  std::vector<DigitSprite> validation;
};

// Per class, round(fraction * class_count) sprites go to validation, chosen by
// a seeded shuffle. Both partitions keep the input order.
SplitResult stratified_split(std::span<const DigitSprite> sprites, double fraction,
                             std::uint64_t seed);

// Procedurally drawn stroke digits, for environments without the MNIST files.
// Each sprite is a jittered polyline glyph of its class, anti-aliased and
// quantized to 8 bits like the real data.
std::vector<DigitSprite> render_synthetic_digits(std::span<const int> per_class_counts,
                                                 std::uint64_t seed);

}  // namespace vln::data
