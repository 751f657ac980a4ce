#include "dyvec/blob_io.hpp"

#include "dyvec/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dyvec {
namespace {

constexpr const char* kMagic = "DYVEC";

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

std::string encode_blob_file(const std::string& kind, const std::string& manifest,
                             std::span<const float> blob) {
  require(kind.find_first_of(" \n") == std::string::npos, ErrorCode::kInvalidArgument,
          "blob kind must be a single word");
  std::ostringstream header;
  header << kMagic << ' ' << kind << ' ' << manifest.size() << ' ' << blob.size() << '\n';
  std::string out = header.str();
  out += manifest;
  out += '\n';
  const std::size_t offset = out.size();
  out.resize(offset + blob.size() * sizeof(float));
  for (std::size_t i = 0; i < blob.size(); ++i) {
    const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(blob[i]));
    std::memcpy(out.data() + offset + i * sizeof(float), &bits, sizeof(bits));
  }
  return out;
}

BlobFile decode_blob_file(const std::string& bytes, const std::string& expected_kind) {
  const auto eol = bytes.find('\n');
  require(eol != std::string::npos, ErrorCode::kFormat, "missing container header");
  std::istringstream header(bytes.substr(0, eol));
  std::string magic;
  BlobFile file;
  std::size_t manifest_bytes = 0;
  std::size_t blob_floats = 0;
  header >> magic >> file.kind >> manifest_bytes >> blob_floats;
  require(static_cast<bool>(header) && magic == kMagic, ErrorCode::kFormat,
          "bad container header");
  require(expected_kind.empty() || file.kind == expected_kind, ErrorCode::kFormat,
          "expected a '" + expected_kind + "' file, found '" + file.kind + "'");
  const std::size_t manifest_begin = eol + 1;
  const std::size_t blob_begin = manifest_begin + manifest_bytes + 1;
  require(bytes.size() == blob_begin + blob_floats * sizeof(float), ErrorCode::kFormat,
          "container size does not match header");
  require(bytes[blob_begin - 1] == '\n', ErrorCode::kFormat, "manifest terminator missing");
  file.manifest = bytes.substr(manifest_begin, manifest_bytes);
  file.blob.resize(blob_floats);
  for (std::size_t i = 0; i < blob_floats; ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, bytes.data() + blob_begin + i * sizeof(float), sizeof(bits));
    file.blob[i] = std::bit_cast<float>(to_little_endian(bits));
  }
  return file;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path);
}

void write_blob_file(const std::string& path, const std::string& kind, const std::string& manifest,
                     std::span<const float> blob) {
  write_text_file(path, encode_blob_file(kind, manifest, blob));
}

BlobFile read_blob_file(const std::string& path, const std::string& expected_kind) {
  return decode_blob_file(read_text_file(path), expected_kind);
}

}  // namespace dyvec
