#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/nn/layers.hpp"

namespace saii::nn {

using BlobMap = std::map<std::string, std::vector<float>>;

/// Parsed checkpoint: the JSON header (including "format") and named blobs.
struct Container {
  nlohmann::json header;
  BlobMap blobs;
};

/// Layout: "SAIICKPT", u64 LE header length, UTF-8 JSON header, then the
/// float32 LE blobs listed in header["blobs"] as {name, offset, count}.
void save_container(const std::filesystem::path& path, std::string_view format, nlohmann::json header,
                    const BlobMap& blobs);
/// Throws CheckpointMismatch when the format tag differs, IoError on corruption.
Container load_container(const std::filesystem::path& path, std::string_view expected_format);

/// In-memory forms of the same layout.
std::string serialize_container(std::string_view format, nlohmann::json header, const BlobMap& blobs);
Container parse_container(const std::string& bytes, std::string_view expected_format, const std::string& label);

/// Every parameter and buffer of `m`, keyed prefix + dotted name.
BlobMap state_dict(Module& m, const std::string& prefix = "");
/// Copies matching blobs into `m`; any missing or mis-sized entry throws CheckpointMismatch.
void load_state(Module& m, const BlobMap& blobs, const std::string& prefix = "");

}  // namespace saii::nn
