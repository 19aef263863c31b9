#include "nfs/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "nfs/error.hpp"

namespace nfs {

namespace {

constexpr char kMagic[4] = {'N', 'F', 'S', '1'};

static_assert(sizeof(double) == 8, "NFS1 stores 64-bit floats");

void write_f64_le(std::ofstream& out, const std::vector<double>& values) {
  // Little-endian host assumed; asserted at load time via the magic check
  // plus a format marker would be overkill for the targets this builds on.
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointEntry>& entries,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["meta"] = meta;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    if (shape_numel(e.shape) != static_cast<std::int64_t>(e.values.size())) {
      throw IoError("checkpoint entry '" + e.name + "' shape " +
                    shape_str(e.shape) + " does not match its value count");
    }
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.values.size() * sizeof(double);
  }
  const std::string header_str = header.dump();
  if (header_str.size() > 0xffffffffULL) throw IoError("checkpoint header too large");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  unsigned char len_le[4] = {
      static_cast<unsigned char>(len & 0xff),
      static_cast<unsigned char>((len >> 8) & 0xff),
      static_cast<unsigned char>((len >> 16) & 0xff),
      static_cast<unsigned char>((len >> 24) & 0xff),
  };
  out.write(reinterpret_cast<const char*>(len_le), 4);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& e : entries) write_f64_le(out, e.values);
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("'" + path.string() + "' is not an NFS1 container (bad magic)");
  }
  unsigned char len_le[4];
  in.read(reinterpret_cast<char*>(len_le), 4);
  if (!in) throw IoError("truncated checkpoint header in '" + path.string() + "'");
  const std::uint32_t len = static_cast<std::uint32_t>(len_le[0]) |
                            (static_cast<std::uint32_t>(len_le[1]) << 8) |
                            (static_cast<std::uint32_t>(len_le[2]) << 16) |
                            (static_cast<std::uint32_t>(len_le[3]) << 24);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header in '" + path.string() + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in '" + path.string() + "': " + e.what());
  }

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const std::istream::pos_type data_start = in.tellg();
  for (const auto& t : header.at("tensors")) {
    CheckpointEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto count = static_cast<std::size_t>(shape_numel(e.shape));
    e.values.resize(count);
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(e.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) {
      throw IoError("truncated tensor data for '" + e.name + "' in '" +
                    path.string() + "'");
    }
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

}  // namespace nfs
