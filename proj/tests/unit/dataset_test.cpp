#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "vln/common/binary_io.hpp"
#include "vln/data/fetch.hpp"
#include "vln/data/moving_mnist.hpp"
#include "vln/data/sequence_io.hpp"

namespace vln::data {
namespace {

namespace fs = std::filesystem;

// Labels only; pixels are a cheap class-dependent pattern.
std::vector<DigitSprite> labelled_sprites(std::span<const int> counts) {
  std::vector<DigitSprite> out;
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < counts[c]; ++i) {
      DigitSprite s;
      s.label = static_cast<std::uint8_t>(c);
      s.pixels[(i * 7 + c) % kDigitPixels] = 1.0f;
      out.push_back(s);
    }
  }
  return out;
}

std::vector<DigitSprite> small_pool(std::uint64_t seed) {
  std::array<int, 10> counts;
  counts.fill(12);
  return render_synthetic_digits(counts, seed);
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("vln_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Idx, RoundTripsQuantizedSprites) {
  auto sprites = small_pool(3);
  auto parsed = parse_mnist(encode_idx_images(sprites), encode_idx_labels(sprites));
  ASSERT_EQ(parsed.size(), sprites.size());
  for (std::size_t i = 0; i < sprites.size(); ++i) {
    EXPECT_EQ(parsed[i].label, sprites[i].label);
    EXPECT_EQ(parsed[i].pixels, sprites[i].pixels);
  }
}

TEST(Idx, RejectsWrongMagic) {
  auto sprites = small_pool(3);
  auto images = encode_idx_images(sprites);
  images[3] = 0x01;
  try {
    parse_mnist(images, encode_idx_labels(sprites));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("0x00000801"), std::string::npos) << e.what();
  }
}

TEST(Idx, RejectsTruncationAndCountMismatch) {
  auto sprites = small_pool(3);
  const auto images = encode_idx_images(sprites);
  const auto labels = encode_idx_labels(sprites);
  EXPECT_THROW(parse_mnist(images.substr(0, images.size() - 1), labels), DataError);
  EXPECT_THROW(parse_mnist(images.substr(0, 10), labels), DataError);
  auto fewer = std::vector<DigitSprite>(sprites.begin(), sprites.end() - 1);
  EXPECT_THROW(parse_mnist(images, encode_idx_labels(fewer)), DataError);
}

TEST(Idx, SyntheticDigitsAreInRangeAndInked) {
  for (const auto& s : small_pool(9)) {
    EXPECT_GT(s.ink(), 20.0f);
    for (float v : s.pixels) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(StratifiedSplit, MnistCountsGive48000And12000) {
  const auto sprites = labelled_sprites(kMnistTrainClassCounts);
  ASSERT_EQ(sprites.size(), 60000u);
  const auto split = stratified_split(sprites, 0.2, 11);
  EXPECT_EQ(split.train.size(), 48000u);
  EXPECT_EQ(split.validation.size(), 12000u);
  std::array<int, 10> val{};
  for (const auto& s : split.validation) ++val[s.label];
  for (int c = 0; c < 10; ++c) EXPECT_LE(std::abs(val[c] - 0.2 * kMnistTrainClassCounts[c]), 1.0) << c;
}

TEST(StratifiedSplit, DeterministicAndDisjoint) {
  std::array<int, 10> counts{7, 9, 11, 13, 15, 17, 19, 21, 23, 25};
  const auto sprites = labelled_sprites(counts);
  const auto a = stratified_split(sprites, 0.2, 5);
  const auto b = stratified_split(sprites, 0.2, 5);
  const auto c = stratified_split(sprites, 0.2, 6);
  auto key = [](const DigitSprite& s) { return std::make_pair(s.label, s.pixels); };
  ASSERT_EQ(a.validation.size(), b.validation.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.validation.size(); ++i) {
    EXPECT_EQ(key(a.validation[i]), key(b.validation[i]));
    differs |= key(a.validation[i]) != key(c.validation[i]);
  }
  EXPECT_TRUE(differs);
  std::map<std::pair<std::uint8_t, std::array<float, kDigitPixels>>, int> seen;
  for (const auto& s : a.train) ++seen[key(s)];
  for (const auto& s : a.validation) ++seen[key(s)];
  EXPECT_EQ(seen.size(), sprites.size());
  for (const auto& s : sprites) EXPECT_EQ(seen[key(s)], 1);
}

TEST(StratifiedSplit, EmptyClassIsAnError) {
  std::array<int, 10> counts{5, 5, 5, 0, 5, 5, 5, 5, 5, 5};
  EXPECT_THROW(stratified_split(labelled_sprites(counts), 0.2, 1), DataError);
}

TEST(Trajectory, ReflectsOffFarWall) {
  DigitTrajectory t{35.0, 10.0, 3.0, 0.0};
  t.advance();
  EXPECT_DOUBLE_EQ(t.x, 34.0);
  EXPECT_DOUBLE_EQ(t.vx, -3.0);
  DigitTrajectory u{1.0, 0.0, -4.0, -0.5};
  u.advance();
  EXPECT_DOUBLE_EQ(u.x, 3.0);
  EXPECT_DOUBLE_EQ(u.vx, 4.0);
  EXPECT_DOUBLE_EQ(u.y, 0.5);
  EXPECT_DOUBLE_EQ(u.vy, 0.5);
}

TEST(MovingMnist, ThousandSequencesSatisfyInvariants) {
  const auto pool = small_pool(21);
  for (std::uint64_t i = 0; i < 1000; ++i) {
    CounterRng rng(CounterRng::derive(77, {i}));
    SequenceTrace trace;
    const auto seq = generate_sequence(pool, rng, {}, &trace);
    ASSERT_EQ(seq.pixels.size(), std::size_t{20} * 64 * 64);
    for (int d = 0; d < kDigitsPerSequence; ++d) {
      const double speed = trace[d][0].speed();
      ASSERT_GE(speed, 2.0);
      ASSERT_LE(speed, 5.0);
      for (int t = 0; t < kSequenceFrames; ++t) {
        const auto& p = trace[d][t];
        ASSERT_NEAR(p.speed(), speed, 1e-12);
        ASSERT_GE(p.x, 0.0);
        ASSERT_LE(p.x, kPositionLimit);
        ASSERT_GE(p.y, 0.0);
        ASSERT_LE(p.y, kPositionLimit);
        ASSERT_LE(std::lround(p.x) + kDigitSize, kFrameSize);
        ASSERT_LE(std::lround(p.y) + kDigitSize, kFrameSize);
      }
    }
    for (int t = 0; t < kSequenceFrames; ++t) {
      const auto frame = seq.frame(t);
      for (int r = 0; r < kFrameSize; ++r) {
        for (int c = 0; c < kFrameSize; ++c) {
          const float v = frame[r * kFrameSize + c];
          ASSERT_GE(v, 0.0f);
          ASSERT_LE(v, 1.0f);
          if (v == 0.0f) continue;
          bool covered = false;
          for (int d = 0; d < kDigitsPerSequence; ++d) {
            const long x0 = std::lround(trace[d][t].x), y0 = std::lround(trace[d][t].y);
            covered |= c >= x0 && c < x0 + kDigitSize && r >= y0 && r < y0 + kDigitSize;
          }
          ASSERT_TRUE(covered) << "ink outside both digit boxes";
        }
      }
    }
    CounterRng again(CounterRng::derive(77, {i}));
    ASSERT_EQ(generate_sequence(pool, again).pixels, seq.pixels);
  }
}

TEST(MovingMnist, NonOverlappingDigitsConserveInk) {
  const auto pool = small_pool(4);
  int checked = 0;
  for (std::uint64_t i = 0; i < 300 && checked < 200; ++i) {
    CounterRng rng(i);
    SequenceTrace trace;
    const auto seq = generate_sequence(pool, rng, {}, &trace);
    // Recover the sprites by replaying the draws.
    CounterRng replay(i);
    const auto& s0 = pool[replay.below(pool.size())];
    replay.uniform(); replay.uniform(); replay.uniform(); replay.uniform();
    const auto& s1 = pool[replay.below(pool.size())];
    for (int t = 0; t < kSequenceFrames; ++t) {
      const long dx = std::labs(std::lround(trace[0][t].x) - std::lround(trace[1][t].x));
      const long dy = std::labs(std::lround(trace[0][t].y) - std::lround(trace[1][t].y));
      if (dx < kDigitSize && dy < kDigitSize) continue;
      double sum = 0;
      for (float v : seq.frame(t)) sum += v;
      ASSERT_NEAR(sum, double(s0.ink()) + double(s1.ink()), 1e-3);
      ++checked;
    }
  }
  EXPECT_GE(checked, 200);
}

TEST(MovingMnist, EpochKeyingAndStreamSizes) {
  MovingMnist data(small_pool(1), small_pool(2), small_pool(3), 99);
  EXPECT_EQ(data.stream(SplitKind::kTrain, 0).size(), 10000u);
  EXPECT_EQ(data.stream(SplitKind::kValidation, 0).size(), 1000u);
  EXPECT_EQ(data.stream(SplitKind::kTest, 0).size(), 10000u);

  const auto train0 = data.stream(SplitKind::kTrain, 0);
  const auto train1 = data.stream(SplitKind::kTrain, 1);
  for (std::size_t i : {0u, 1u, 9999u}) {
    EXPECT_EQ(train0.at(i).pixels, data.stream(SplitKind::kTrain, 0).at(i).pixels);
    EXPECT_NE(train0.at(i).pixels, train1.at(i).pixels);
    EXPECT_EQ(data.stream(SplitKind::kTest, 0).at(i).pixels, data.stream(SplitKind::kTest, 7).at(i).pixels);
  }
  EXPECT_NE(train0.at(0).pixels, train0.at(1).pixels);
  EXPECT_THROW(train0.at(10000), std::out_of_range);
  MovingMnist other(small_pool(1), small_pool(2), small_pool(3), 100);
  EXPECT_NE(other.stream(SplitKind::kTest, 0).at(0).pixels, data.stream(SplitKind::kTest, 0).at(0).pixels);
}

TEST(MovingMnist, TestStreamIsBitIdenticalAcrossCalls) {
  MovingMnist data(small_pool(1), small_pool(2), small_pool(3), 5, StreamSizes{10, 10, 10000});
  const auto a = data.stream(SplitKind::kTest, 0);
  const auto b = data.stream(SplitKind::kTest, 3);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.at(i).pixels, b.at(i).pixels);
}

TEST(SequenceIo, DumpRoundTrip) {
  MovingMnist data(small_pool(1), small_pool(2), small_pool(3), 5);
  std::vector<VideoSequence> seqs{data.stream(SplitKind::kTest, 0).at(0), data.stream(SplitKind::kTest, 0).at(1)};
  const auto bytes = encode_sequence_dump(seqs);
  ASSERT_EQ(bytes.size(), 16u + 2u * 20 * 64 * 64);
  binary::Reader header(bytes);
  EXPECT_EQ(header.le<std::uint32_t>(), 2u);
  EXPECT_EQ(header.le<std::uint32_t>(), 20u);
  const auto decoded = decode_sequence_dump(bytes);
  ASSERT_EQ(decoded.size(), 2u);
  for (std::size_t i = 0; i < seqs[0].pixels.size(); ++i) {
    ASSERT_NEAR(decoded[0].pixels[i], seqs[0].pixels[i], 0.5f / 255.0f + 1e-6f);
  }
  EXPECT_EQ(encode_sequence_dump(decoded), bytes);
  EXPECT_THROW(decode_sequence_dump(bytes.substr(0, 100)), std::exception);
}

TEST(SequenceIo, QuantizationIsRound255) {
  EXPECT_EQ(quantize_pixel(0.0f), 0);
  EXPECT_EQ(quantize_pixel(1.0f), 255);
  EXPECT_EQ(quantize_pixel(0.5f), 128);
  EXPECT_EQ(quantize_pixel(0.25f), 64);
  EXPECT_EQ(quantize_pixel(1.0f / 255.0f), 1);
}

TEST(SequenceIo, GridLayoutAndPngRoundTrip) {
  MovingMnist data(small_pool(1), small_pool(2), small_pool(3), 5);
  const auto seq = data.stream(SplitKind::kTest, 0).at(2);
  std::vector<std::vector<float>> preds(10, std::vector<float>(kFramePixels, 0.25f));
  const auto grid = sequence_grid(seq, preds);
  EXPECT_EQ(grid.width, 20 * 64 + 21 * kGridMargin);
  EXPECT_EQ(grid.height, 2 * 64 + 3 * kGridMargin);
  EXPECT_EQ(grid.at(0, 0), kGridBackground);
  EXPECT_EQ(grid.at(kGridMargin + 5, 2 * kGridMargin + 64 + 5), 0);  // blank cell under past frames
  const int px = kGridMargin + 10 * (64 + kGridMargin);
  EXPECT_EQ(grid.at(px, 2 * kGridMargin + 64), 64);  // first prediction cell
  EXPECT_EQ(grid.at(kGridMargin + 7, kGridMargin + 9), quantize_pixel(seq.frame(0)[9 * 64 + 7]));

  const auto path = (scratch_dir("png") / "grid.png").string();
  write_png(path, grid);
  const auto back = read_png(path);
  EXPECT_EQ(back.width, grid.width);
  EXPECT_EQ(back.height, grid.height);
  EXPECT_EQ(back.pixels, grid.pixels);
}

TEST(Fetch, Md5AndGzipHelpers) {
  EXPECT_EQ(md5_hex(""), "d41d8cd98f00b204e9800998ecf8427e");
  EXPECT_EQ(md5_hex("abc"), "900150983cd24fb0d6963f7d28e17f72");
  const std::string text(10000, 'q');
  EXPECT_EQ(gunzip(gzip(text)), text);
  EXPECT_THROW(gunzip(gzip(text).substr(0, 12)), DataError);
}

struct LocalArchives {
  fs::path dir;
  std::array<std::string, 4> md5;
};

LocalArchives write_local_archives(const std::string& name) {
  LocalArchives out{scratch_dir(name), {}};
  const auto train = labelled_sprites(kMnistTrainClassCounts);
  const auto test = labelled_sprites(kMnistTestClassCounts);
  const std::array<std::string, 4> raw{encode_idx_images(train), encode_idx_labels(train),
                                       encode_idx_images(test), encode_idx_labels(test)};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto gz = gzip(raw[i]);
    out.md5[i] = md5_hex(gz);
    binary::write_file((out.dir / mnist_files()[i].archive_name).string(), gz);
  }
  return out;
}

TEST(Fetch, ValidLocalArchivesProduceManifestAndRerunIsNoop) {
  const auto src = write_local_archives("fetch_src");
  const auto dst = scratch_dir("fetch_dst");
  FetchOptions opts;
  opts.data_dir = dst.string();
  opts.source_dir = src.dir.string();
  opts.archive_md5 = src.md5;
  const auto first = fetch_mnist(opts);
  EXPECT_FALSE(first.already_present);
  EXPECT_TRUE(fs::exists(dst / kDataManifestFile));
  EXPECT_TRUE(verify_data_manifest(dst.string()));
  const auto stamp = fs::last_write_time(dst / kTrainImagesFile);
  const auto second = fetch_mnist(opts);
  EXPECT_TRUE(second.already_present);
  EXPECT_EQ(fs::last_write_time(dst / kTrainImagesFile), stamp);
  EXPECT_EQ(load_mnist((dst / kTrainImagesFile).string(), (dst / kTrainLabelsFile).string()).size(), 60000u);
  EXPECT_EQ(load_mnist((dst / kTestImagesFile).string(), (dst / kTestLabelsFile).string()).size(), 10000u);
}

TEST(Fetch, TruncatedArchiveNamesTheFile) {
  const auto src = write_local_archives("fetch_trunc");
  const auto victim = src.dir / mnist_files()[3].archive_name;
  const auto bytes = binary::read_file(victim.string());
  binary::write_file(victim.string(), bytes.substr(0, bytes.size() / 2));
  FetchOptions opts;
  opts.data_dir = scratch_dir("fetch_trunc_dst").string();
  opts.source_dir = src.dir.string();
  opts.archive_md5 = src.md5;
  try {
    fetch_mnist(opts);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("t10k-labels-idx1-ubyte.gz"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(fs::path(opts.data_dir) / kDataManifestFile));
}

TEST(Fetch, MissingSourceFileIsReported) {
  FetchOptions opts;
  opts.data_dir = scratch_dir("fetch_missing_dst").string();
  opts.source_dir = scratch_dir("fetch_missing_src").string();
  EXPECT_THROW(fetch_mnist(opts), DataError);
  opts.source_dir.reset();
  EXPECT_THROW(fetch_mnist(opts), DataError);
}

TEST(Fetch, TamperedDataInvalidatesManifest) {
  const auto src = write_local_archives("fetch_tamper");
  const auto dst = scratch_dir("fetch_tamper_dst");
  FetchOptions opts;
  opts.data_dir = dst.string();
  opts.source_dir = src.dir.string();
  opts.archive_md5 = src.md5;
  fetch_mnist(opts);
  auto labels = binary::read_file((dst / kTestLabelsFile).string());
  labels.back() = 3;
  binary::write_file((dst / kTestLabelsFile).string(), labels);
  EXPECT_FALSE(verify_data_manifest(dst.string()));
  EXPECT_FALSE(fetch_mnist(opts).already_present);
  EXPECT_TRUE(verify_data_manifest(dst.string()));
}

}  // namespace
}  // namespace vln::data
