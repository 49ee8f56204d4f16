#include "bevrecon/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "bevrecon/errors.hpp"
#include "bevrecon/half.hpp"

namespace bevrecon {

const char* to_string(DecodeErrorKind kind) {
  switch (kind) {
    case DecodeErrorKind::kBadMagic: return "bad magic";
    case DecodeErrorKind::kBadVersion: return "unsupported version";
    case DecodeErrorKind::kUnknownDType: return "unknown dtype";
    case DecodeErrorKind::kBadHeader: return "malformed header";
    case DecodeErrorKind::kTruncated: return "truncated payload";
    case DecodeErrorKind::kTrailingBytes: return "trailing bytes";
    case DecodeErrorKind::kMissingSection: return "missing section";
    case DecodeErrorKind::kNonCanonicalOrder: return "non-canonical index order";
    case DecodeErrorKind::kIndexOutOfRange: return "index out of range";
  }
  return "decode error";
}

namespace {

void put_u32_le(std::ostream& os, uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

uint32_t get_u32_le(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "container header dims");
  return static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
         (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
}

}  // namespace

int64_t container_payload_bytes(const std::vector<int>& shape, DType dtype) {
  const int64_t n = numel_of(shape);
  return n * (dtype == DType::kF32 ? 4 : 2);
}

int64_t container_total_bytes(const std::vector<int>& shape, DType dtype) {
  return 8 + 1 + 1 + 4 * static_cast<int64_t>(shape.size()) +
         container_payload_bytes(shape, dtype);
}

void write_tensor(std::ostream& os, const TensorF& tensor, DType dtype) {
  if (tensor.rank() > 4) throw std::invalid_argument("tensor rank > 4");
  os.write(kTensorMagic.data(), kTensorMagic.size());
  const char dt = static_cast<char>(dtype);
  const char rank = static_cast<char>(tensor.rank());
  os.write(&dt, 1);
  os.write(&rank, 1);
  for (int d : tensor.shape) put_u32_le(os, static_cast<uint32_t>(d));
  if (dtype == DType::kF32) {
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(tensor.data.data()),
               static_cast<std::streamsize>(tensor.data.size() * 4));
    } else {
      for (float f : tensor.data) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32_le(os, bits);
      }
    }
  } else if (dtype == DType::kF16) {
    for (float f : tensor.data) {
      const uint16_t h = float_to_half(f);
      const char bytes[2] = {static_cast<char>(h & 0xff), static_cast<char>(h >> 8)};
      os.write(bytes, 2);
    }
  } else {
    throw std::invalid_argument("unsupported dtype code");
  }
  if (!os) throw std::runtime_error("tensor write failed");
}

TensorF read_tensor(std::istream& is, DType* stored_dtype) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kTensorMagic) {
    throw DecodeError(DecodeErrorKind::kBadMagic, "not a tensor container");
  }
  char dt = 0, rank = 0;
  is.read(&dt, 1);
  is.read(&rank, 1);
  if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "container header");
  if (dt != 0 && dt != 1) {
    throw DecodeError(DecodeErrorKind::kUnknownDType,
                      "dtype code " + std::to_string(static_cast<int>(dt)));
  }
  if (rank < 0 || rank > 4) {
    throw DecodeError(DecodeErrorKind::kBadHeader,
                      "rank " + std::to_string(static_cast<int>(rank)));
  }
  std::vector<int> shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    const uint32_t d = get_u32_le(is);
    if (d > (1u << 30)) throw DecodeError(DecodeErrorKind::kBadHeader, "dimension too large");
    shape[static_cast<size_t>(i)] = static_cast<int>(d);
  }
  TensorF out(shape);
  const DType dtype = static_cast<DType>(dt);
  if (stored_dtype) *stored_dtype = dtype;
  if (dtype == DType::kF32) {
    if constexpr (std::endian::native == std::endian::little) {
      is.read(reinterpret_cast<char*>(out.data.data()),
              static_cast<std::streamsize>(out.data.size() * 4));
      if (is.gcount() != static_cast<std::streamsize>(out.data.size() * 4)) {
        throw DecodeError(DecodeErrorKind::kTruncated, "fp32 payload");
      }
    } else {
      for (float& f : out.data) {
        const uint32_t bits = get_u32_le(is);
        std::memcpy(&f, &bits, 4);
      }
    }
  } else {
    for (float& f : out.data) {
      unsigned char bytes[2];
      is.read(reinterpret_cast<char*>(bytes), 2);
      if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "fp16 payload");
      f = half_to_float(static_cast<uint16_t>(bytes[0] | (bytes[1] << 8)));
    }
  }
  return out;
}

void write_tensor_file(const std::string& path, const TensorF& tensor, DType dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_tensor(os, tensor, dtype);
}

TensorF read_tensor_file(const std::string& path, DType* stored_dtype) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  TensorF t = read_tensor(is, stored_dtype);
  is.peek();
  if (!is.eof()) {
    throw DecodeError(DecodeErrorKind::kTrailingBytes, "data after tensor payload in " + path);
  }
  return t;
}

}  // namespace bevrecon
