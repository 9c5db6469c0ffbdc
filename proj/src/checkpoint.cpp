#include "dmmg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dmmg/errors.hpp"
#include "dmmg/sha256.hpp"

namespace dmmg {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& buf, size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const nlohmann::json& config, std::int64_t step,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
  std::string blob;
  nlohmann::json param_list = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    param_list.push_back(entry);
    size_t pos = blob.size();
    blob.resize(pos + static_cast<size_t>(t.numel()) * 4);
    std::memcpy(blob.data() + pos, t.data(), static_cast<size_t>(t.numel()) * 4);
  }
  nlohmann::json manifest;
  manifest["config"] = config;
  manifest["step"] = step;
  manifest["params"] = param_list;
  manifest["blob_sha256"] = sha256_hex(blob.data(), blob.size());
  std::string manifest_str = manifest.dump();

  std::string out;
  out.append("DMCK");
  put_u32(out, 1);
  put_u64(out, manifest_str.size());
  out.append(manifest_str);
  out.append(blob);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write to '" + path + "' failed");
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 16)
    throw FormatError("checkpoint ends at offset " + std::to_string(buf.size()) +
                      ", header needs 16 bytes");
  if (buf.compare(0, 4, "DMCK") != 0) throw FormatError("bad magic at offset 0");
  std::uint32_t version = get_u32(buf, 4);
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version) + " at offset 4");
  std::uint64_t manifest_len = get_u64(buf, 8);
  if (16 + manifest_len > buf.size())
    throw FormatError("manifest of " + std::to_string(manifest_len) +
                      " bytes overruns the file at offset 16");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest parse failure at offset 16: ") + e.what());
  }
  if (!manifest.contains("params") || !manifest["params"].is_array() ||
      !manifest.contains("blob_sha256") || !manifest.contains("step"))
    throw FormatError("manifest lacks params, step, or blob_sha256");

  size_t blob_off = 16 + static_cast<size_t>(manifest_len);
  const char* blob = buf.data() + blob_off;
  size_t blob_len = buf.size() - blob_off;
  std::string expect = manifest["blob_sha256"].get<std::string>();
  std::string actual = sha256_hex(blob, blob_len);
  if (actual != expect)
    throw FormatError("blob hash mismatch: manifest says " + expect + ", file has " + actual);

  CheckpointData ck;
  ck.config = manifest.value("config", nlohmann::json::object());
  ck.step = manifest["step"].get<std::int64_t>();
  size_t off = 0;
  for (const auto& entry : manifest["params"]) {
    if (!entry.contains("name") || !entry.contains("shape"))
      throw FormatError("parameter entry lacks name or shape");
    std::string name = entry["name"].get<std::string>();
    Shape shape = entry["shape"].get<Shape>();
    std::int64_t numel = 1;
    for (int d : shape) {
      if (d < 0) throw FormatError("negative extent in shape of '" + name + "'");
      numel *= d;
    }
    if (off + static_cast<size_t>(numel) * 4 > blob_len)
      throw FormatError("blob ends inside parameter '" + name + "' at offset " +
                        std::to_string(blob_off + off));
    std::vector<float> data(static_cast<size_t>(numel));
    std::memcpy(data.data(), blob + off, static_cast<size_t>(numel) * 4);
    off += static_cast<size_t>(numel) * 4;
    ck.params.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
  }
  if (off != blob_len)
    throw FormatError("trailing blob data at offset " + std::to_string(blob_off + off));
  return ck;
}

}  // namespace dmmg
