#pragma once

// Sequence dump: header of four little-endian u32 (count, frames = 20,
// height = 64, width = 64), then count * frames * height * width bytes, each
// round(255 * pixel).
//
// Frame grids: cells of 64x64 separated and surrounded by kGridMargin pixels
// of value kGridBackground. A grid of R rows and C columns is
// (C * 64 + (C + 1) * margin) wide and (R * 64 + (R + 1) * margin) tall.
// Empty cells are drawn black.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vln/data/moving_mnist.hpp"

namespace vln::data {

inline constexpr int kGridMargin = 2;
inline constexpr std::uint8_t kGridBackground = 128;

std::uint8_t quantize_pixel(float value);

std::string encode_sequence_dump(std::span<const VideoSequence> sequences);
std::vector<VideoSequence> decode_sequence_dump(std::string_view bytes);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * width + x]; }
};

// rows[r][c] is a 64x64 frame or an empty span for a blank cell.
GrayImage frame_grid(const std::vector<std::vector<std::span<const float>>>& rows);

// Row 1: the 20 frames of the sequence. Row 2 (if given): blanks under the
// 10 past frames, then the predicted future frames.
GrayImage sequence_grid(const VideoSequence& sequence,
                        std::span<const std::vector<float>> predictions = {});

void write_png(const std::string& path, const GrayImage& image);
GrayImage read_png(const std::string& path);

}  // namespace vln::data
