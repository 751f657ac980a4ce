#pragma once

#include <span>
#include <string>
#include <vector>

namespace dyvec {

// On-disk container shared by checkpoints, latent tensors and artifacts:
//
//   DYVEC <kind> <manifest-bytes> <blob-floats>\n
//   <manifest: pretty-printed JSON, exactly manifest-bytes long>\n
//   <blob: little-endian IEEE-754 float32 values>
struct BlobFile {
  std::string kind;
  std::string manifest;
  std::vector<float> blob;
};

std::string encode_blob_file(const std::string& kind, const std::string& manifest,
                             std::span<const float> blob);
BlobFile decode_blob_file(const std::string& bytes, const std::string& expected_kind);

void write_blob_file(const std::string& path, const std::string& kind, const std::string& manifest,
                     std::span<const float> blob);
BlobFile read_blob_file(const std::string& path, const std::string& expected_kind);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dyvec
