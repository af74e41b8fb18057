#include "saii/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "saii/error.hpp"

namespace saii::io {

static_assert(std::endian::native == std::endian::little, "f32 files are little-endian");

void atomic_write(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("rename failed for " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_f32(const fs::path& path, std::span<const float> values) {
  atomic_write(path, std::string_view(reinterpret_cast<const char*>(values.data()), values.size_bytes()));
}

void write_f32(const fs::path& path, const Array2D& a) {
  std::vector<float> buf(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) buf[i] = static_cast<float>(a.data()[i]);
  write_f32(path, buf);
}

std::vector<float> read_f32_raw(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() % sizeof(float) != 0) throw IoError(path.string() + ": size is not a multiple of 4");
  std::vector<float> out(bytes.size() / sizeof(float));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

Array2D read_f32(const fs::path& path, std::size_t rows, std::size_t cols) {
  const auto raw = read_f32_raw(path);
  if (raw.size() != rows * cols) {
    throw IoError(path.string() + ": holds " + std::to_string(raw.size()) + " values, expected " +
                  std::to_string(rows * cols));
  }
  return Array2D(rows, cols, std::vector<double>(raw.begin(), raw.end()));
}

void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed");
  }
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace saii::io
