#include "saii/nn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "saii/error.hpp"
#include "saii/io.hpp"

namespace saii::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr std::string_view kMagic = "SAIICKPT";
}

std::string serialize_container(std::string_view format, nlohmann::json header, const BlobMap& blobs) {
  header["format"] = std::string(format);
  auto table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, v] : blobs) {
    table.push_back({{"name", name}, {"offset", offset}, {"count", v.size()}});
    offset += v.size();
  }
  header["blobs"] = table;
  const std::string h = header.dump();
  std::string bytes;
  bytes.reserve(kMagic.size() + 8 + h.size() + offset * sizeof(float));
  bytes.append(kMagic);
  const std::uint64_t len = h.size();
  bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
  bytes.append(h);
  for (const auto& [name, v] : blobs) bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  return bytes;
}

void save_container(const std::filesystem::path& path, std::string_view format, nlohmann::json header,
                    const BlobMap& blobs) {
  io::atomic_write(path, serialize_container(format, std::move(header), blobs));
}

Container load_container(const std::filesystem::path& path, std::string_view expected_format) {
  return parse_container(io::read_file(path), expected_format, path.string());
}

Container parse_container(const std::string& bytes, std::string_view expected_format, const std::string& label) {
  if (bytes.size() < kMagic.size() + 8 || std::string_view(bytes).substr(0, kMagic.size()) != kMagic)
    throw IoError("not a checkpoint file: " + label);
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + kMagic.size(), sizeof len);
  const std::size_t data0 = kMagic.size() + 8 + len;
  if (data0 > bytes.size()) throw IoError("truncated checkpoint header: " + label);
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(kMagic.size() + 8, len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  const auto fmt = c.header.value("format", std::string());
  if (fmt != expected_format)
    throw CheckpointMismatch("expected checkpoint format " + std::string(expected_format) + ", found " + fmt);
  for (const auto& b : c.header.at("blobs")) {
    const auto off = b.at("offset").get<std::size_t>(), n = b.at("count").get<std::size_t>();
    if (data0 + (off + n) * sizeof(float) > bytes.size()) throw IoError("truncated checkpoint blob");
    std::vector<float> v(n);
    std::memcpy(v.data(), bytes.data() + data0 + off * sizeof(float), n * sizeof(float));
    c.blobs.emplace(b.at("name").get<std::string>(), std::move(v));
  }
  return c;
}

BlobMap state_dict(Module& m, const std::string& prefix) {
  BlobMap out;
  m.visit(prefix, [&](const std::string& name, Param& p) { out[name] = p.value; });
  return out;
}

void load_state(Module& m, const BlobMap& blobs, const std::string& prefix) {
  m.visit(prefix, [&](const std::string& name, Param& p) {
    const auto it = blobs.find(name);
    if (it == blobs.end()) throw CheckpointMismatch("checkpoint lacks parameter " + name);
    if (it->second.size() != p.value.size()) throw CheckpointMismatch("parameter size mismatch for " + name);
    p.value = it->second;
  });
}

}  // namespace saii::nn
