#include "vln/data/sequence_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "vln/common/binary_io.hpp"

namespace vln::data {

std::uint8_t quantize_pixel(float value) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0f, 1.0f) * 255.0f));
}

std::string encode_sequence_dump(std::span<const VideoSequence> sequences) {
  std::string out;
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sequences.size()));
  binary::put_le<std::uint32_t>(out, kSequenceFrames);
  binary::put_le<std::uint32_t>(out, kFrameSize);
  binary::put_le<std::uint32_t>(out, kFrameSize);
  out.reserve(out.size() + sequences.size() * kSequenceFrames * kFramePixels);
  for (const auto& seq : sequences) {
    for (float v : seq.pixels) out.push_back(static_cast<char>(quantize_pixel(v)));
  }
  return out;
}

std::vector<VideoSequence> decode_sequence_dump(std::string_view bytes) {
  binary::Reader in(bytes);
  const auto count = in.le<std::uint32_t>();
  const auto frames = in.le<std::uint32_t>();
  const auto height = in.le<std::uint32_t>();
  const auto width = in.le<std::uint32_t>();
  if (frames != kSequenceFrames || height != kFrameSize || width != kFrameSize) {
    throw DataError("sequence dump has unexpected geometry");
  }
  std::vector<VideoSequence> out(count);
  for (auto& seq : out) {
    auto raw = in.bytes(std::size_t{kSequenceFrames} * kFramePixels);
    seq.pixels.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      seq.pixels[i] = static_cast<float>(static_cast<unsigned char>(raw[i])) / 255.0f;
    }
  }
  if (in.remaining() != 0) throw DataError("trailing bytes in sequence dump");
  return out;
}

GrayImage frame_grid(const std::vector<std::vector<std::span<const float>>>& rows) {
  std::size_t columns = 0;
  for (const auto& r : rows) columns = std::max(columns, r.size());
  GrayImage img;
  img.width = static_cast<int>(columns) * kFrameSize + (static_cast<int>(columns) + 1) * kGridMargin;
  img.height = static_cast<int>(rows.size()) * kFrameSize + (static_cast<int>(rows.size()) + 1) * kGridMargin;
  img.pixels.assign(std::size_t(img.width) * img.height, kGridBackground);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < columns; ++c) {
      const int x0 = kGridMargin + static_cast<int>(c) * (kFrameSize + kGridMargin);
      const int y0 = kGridMargin + static_cast<int>(r) * (kFrameSize + kGridMargin);
      const bool blank = c >= rows[r].size() || rows[r][c].empty();
      if (!blank && rows[r][c].size() != std::size_t{kFramePixels}) {
        throw std::invalid_argument("frame_grid: cell is not a 64x64 frame");
      }
      for (int y = 0; y < kFrameSize; ++y) {
        for (int x = 0; x < kFrameSize; ++x) {
          img.pixels[std::size_t(y0 + y) * img.width + x0 + x] =
              blank ? 0 : quantize_pixel(rows[r][c][std::size_t(y) * kFrameSize + x]);
        }
      }
    }
  }
  return img;
}

GrayImage sequence_grid(const VideoSequence& sequence, std::span<const std::vector<float>> predictions) {
  std::vector<std::vector<std::span<const float>>> rows(predictions.empty() ? 1 : 2);
  for (int t = 0; t < kSequenceFrames; ++t) rows[0].push_back(sequence.frame(t));
  if (!predictions.empty()) {
    rows[1].assign(kPastFrames, std::span<const float>{});
    for (const auto& p : predictions) rows[1].push_back(p);
  }
  return frame_grid(rows);
}

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
}  // namespace

void write_png(const std::string& path, const GrayImage& image) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed for " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + std::size_t(y) * image.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path);
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path);
  }
  return out;
}

}  // namespace vln::data
