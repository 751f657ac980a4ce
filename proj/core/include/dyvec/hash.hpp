#pragma once

#include <span>
#include <string>
#include <string_view>

namespace dyvec {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);

// Incremental hasher for content hashes built from several parts.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const unsigned char> bytes);
  Sha256& update(std::string_view text);
  template <typename T>
  Sha256& update_pod(std::span<const T> values) {
    return update(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes()));
  }
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_file(const std::string& path);

}  // namespace dyvec
