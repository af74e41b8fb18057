#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"

namespace saii::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void atomic_write(const fs::path& path, std::string_view bytes);

std::string read_file(const fs::path& path);

/// Raw little-endian float32, row-major. Shape lives in the caller's manifest.
void write_f32(const fs::path& path, const Array2D& a);
void write_f32(const fs::path& path, std::span<const float> values);
Array2D read_f32(const fs::path& path, std::size_t rows, std::size_t cols);
std::vector<float> read_f32_raw(const fs::path& path);

void write_json(const fs::path& path, const json& j);
json read_json(const fs::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

/// SplitMix64 finalizer; used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace saii::io
