#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "bevrecon/tensor.hpp"

namespace bevrecon {

/// Self-describing little-endian tensor container:
///   8-byte magic | 1-byte dtype | 1-byte rank | rank x 4-byte dims | payload
/// Payload is row-major; fp32 roundtrips bit-exactly, fp16 is stored narrowed.
inline constexpr std::array<char, 8> kTensorMagic = {'B', 'E', 'V', 'T',
                                                     'N', 'S', 'R', '1'};

enum class DType : uint8_t {
  kF32 = 0,
  kF16 = 1,
};

void write_tensor(std::ostream& os, const TensorF& tensor, DType dtype = DType::kF32);
TensorF read_tensor(std::istream& is, DType* stored_dtype = nullptr);

void write_tensor_file(const std::string& path, const TensorF& tensor,
                       DType dtype = DType::kF32);
/// File variant additionally rejects trailing bytes after the payload.
TensorF read_tensor_file(const std::string& path, DType* stored_dtype = nullptr);

/// Size in bytes of the payload section (excludes the header).
int64_t container_payload_bytes(const std::vector<int>& shape, DType dtype);
/// Total container size, header included.
int64_t container_total_bytes(const std::vector<int>& shape, DType dtype);

}  // namespace bevrecon
