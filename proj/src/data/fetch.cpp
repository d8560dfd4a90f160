#include "vln/data/fetch.hpp"

#include <curl/curl.h>
#include <openssl/evp.h>
#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "vln/common/binary_io.hpp"

namespace vln::data {

namespace fs = std::filesystem;

const std::array<MnistFile, 4>& mnist_files() {
  static const std::array<MnistFile, 4> files{{
      {"train-images-idx3-ubyte", "train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873", 60000},
      {"train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432", 60000},
      {"t10k-images-idx3-ubyte", "t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3", 10000},
      {"t10k-labels-idx1-ubyte", "t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c", 10000},
  }};
  return files;
}

std::string md5_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_md5(), nullptr)) {
    throw std::runtime_error("MD5 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string gunzip(std::string_view compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw DataError("zlib initialization failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::string out;
  char buffer[1 << 16];
  int rc;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buffer);
    zs.avail_out = sizeof buffer;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt gzip stream");
    }
    out.append(buffer, sizeof buffer - zs.avail_out);
  } while (rc != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw DataError("truncated gzip stream");
  return out;
}

std::string gzip(std::string_view raw) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw std::runtime_error("zlib initialization failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(raw.data()));
  zs.avail_in = static_cast<uInt>(raw.size());
  std::string out;
  char buffer[1 << 16];
  int rc;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buffer);
    zs.avail_out = sizeof buffer;
    rc = deflate(&zs, Z_FINISH);
    out.append(buffer, sizeof buffer - zs.avail_out);
  } while (rc == Z_OK);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("gzip compression failed");
  return out;
}

namespace {

std::size_t curl_sink(char* data, std::size_t size, std::size_t n, void* user) {
  static_cast<std::string*>(user)->append(data, size * n);
  return size * n;
}

std::string download(const std::string& url) {
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw DataError("libcurl initialization failed");
  std::string body;
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 20L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, curl_sink);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &body);
  const CURLcode rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK) throw DataError("download of " + url + " failed: " + curl_easy_strerror(rc));
  return body;
}

std::map<std::string, std::string> read_manifest(const fs::path& path) {
  std::map<std::string, std::string> md5s;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string key, name, md5;
    if (fields >> key >> name >> md5 && key == "file") md5s[name] = md5;
  }
  return md5s;
}

void check_count(const std::string& path, const std::string& raw, std::size_t expected, bool images) {
  binary::Reader header(raw);
  header.be<std::uint32_t>();
  const auto count = header.be<std::uint32_t>();
  if (count != expected) {
    throw DataError(path + ": holds " + std::to_string(count) + (images ? " images" : " labels") +
                    ", expected " + std::to_string(expected));
  }
}

}  // namespace

bool verify_data_manifest(const std::string& data_dir) {
  const fs::path dir(data_dir);
  if (!fs::exists(dir / kDataManifestFile)) return false;
  const auto md5s = read_manifest(dir / kDataManifestFile);
  if (md5s.size() != mnist_files().size()) return false;
  for (const auto& f : mnist_files()) {
    auto it = md5s.find(f.raw_name);
    if (it == md5s.end() || !fs::exists(dir / f.raw_name)) return false;
    if (md5_hex(binary::read_file((dir / f.raw_name).string())) != it->second) return false;
  }
  return true;
}

FetchReport fetch_mnist(const FetchOptions& options) {
  const fs::path dir(options.data_dir);
  fs::create_directories(dir);
  FetchReport report;
  if (verify_data_manifest(options.data_dir)) {
    report.already_present = true;
    std::ifstream in(dir / kDataManifestFile);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("source ", 0) == 0) report.source = line.substr(7);
    }
    for (const auto& f : mnist_files()) report.files.push_back((dir / f.raw_name).string());
    return report;
  }

  const auto& files = mnist_files();
  std::array<std::string, 4> raw;
  if (options.synthetic) {
    report.source = "synthetic seed=" + std::to_string(options.synthetic_seed);
    auto train = render_synthetic_digits(kMnistTrainClassCounts, options.synthetic_seed);
    auto test = render_synthetic_digits(kMnistTestClassCounts, options.synthetic_seed + 1);
    raw = {encode_idx_images(train), encode_idx_labels(train), encode_idx_images(test),
           encode_idx_labels(test)};
  } else if (options.source_dir || options.base_url) {
    report.source = options.source_dir ? "local " + *options.source_dir : "url " + *options.base_url;
    for (std::size_t i = 0; i < files.size(); ++i) {
      const auto& f = files[i];
      if (options.source_dir && fs::exists(fs::path(*options.source_dir) / f.raw_name)) {
        raw[i] = binary::read_file((fs::path(*options.source_dir) / f.raw_name).string());
        continue;
      }
      std::string archive;
      if (options.source_dir) {
        const auto path = fs::path(*options.source_dir) / f.archive_name;
        if (!fs::exists(path)) throw DataError("missing file " + path.string());
        archive = binary::read_file(path.string());
      } else {
        archive = download(*options.base_url + "/" + f.archive_name);
      }
      const std::string expected = options.archive_md5 ? (*options.archive_md5)[i] : f.archive_md5;
      const std::string actual = md5_hex(archive);
      if (actual != expected) {
        throw DataError("checksum mismatch for " + f.archive_name + ": got " + actual + ", expected " + expected);
      }
      raw[i] = gunzip(archive);
    }
  } else {
    throw DataError("no data source: pass a local source directory, a mirror URL, or request synthetic data");
  }

  for (std::size_t i = 0; i < files.size(); ++i) {
    check_count(files[i].raw_name, raw[i], files[i].expected_count, i % 2 == 0);
  }
  parse_mnist(raw[0], raw[1]);
  parse_mnist(raw[2], raw[3]);

  std::ostringstream manifest;
  manifest << "source " << report.source << '\n';
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto path = dir / files[i].raw_name;
    binary::write_file(path.string(), raw[i]);
    manifest << "file " << files[i].raw_name << ' ' << md5_hex(raw[i]) << ' ' << raw[i].size() << '\n';
    report.files.push_back(path.string());
  }
  binary::write_file((dir / kDataManifestFile).string(), manifest.str());
  return report;
}

}  // namespace vln::data
