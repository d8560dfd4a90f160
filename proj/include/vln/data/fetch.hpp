#pragma once

// Obtaining and validating the four MNIST IDX files.
//
// Sources, in order of preference: gzip archives (or raw IDX files) in a
// local directory, an HTTP(S) mirror, or the synthetic stand-in. Archives
// are verified by MD5 before decompression; every resulting IDX file is parsed
// and its sample count checked. A manifest (data_manifest.txt) lists the
// verified files with their MD5; when it matches the directory contents a
// re-run does nothing.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vln/data/mnist.hpp"

namespace vln::data {

struct MnistFile {
  std::string raw_name;
  std::string archive_name;
  std::string archive_md5;
  std::size_t expected_count;
};

const std::array<MnistFile, 4>& mnist_files();

inline constexpr const char* kDataManifestFile = "data_manifest.txt";

struct FetchOptions {
  std::string data_dir;
  std::optional<std::string> source_dir;
  std::optional<std::string> base_url;
  bool synthetic = false;
  std::uint64_t synthetic_seed = 20170614;
  // Overrides the archive MD5 table (tests).
  std::optional<std::array<std::string, 4>> archive_md5;
};

struct FetchReport {
  bool already_present = false;
  std::string source;
  std::vector<std::string> files;
};

FetchReport fetch_mnist(const FetchOptions& options);

// True when the manifest exists and every listed file matches its MD5.
bool verify_data_manifest(const std::string& data_dir);

std::string md5_hex(std::string_view bytes);
std::string gunzip(std::string_view compressed);
std::string gzip(std::string_view raw);

}  // namespace vln::data
