#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "bevrecon/tensor.hpp"

namespace bevrecon {

/// One quantized sparse element: an 18-bit linear index over the H*W*C
/// row-major grid and a 14-bit signed fixed-point value in units of
/// scale / 8192.
struct TopKEntry {
  uint32_t index = 0;  // < 2^18
  int16_t q = 0;       // in [-8192, 8191]
};

struct TopKSet {
  uint16_t scale_bits = 0;  // half-precision scale, bit-exact on the wire
  std::vector<TopKEntry> entries;  // strictly increasing index order

  float scale() const;
  int k() const { return static_cast<int>(entries.size()); }
  float dequantize(int i) const;  // entries[i].q * scale / 8192
};

/// The bit-exact collaboration message. Layout:
///   4-byte magic "BVCP" | 1-byte version | 1-byte flags | 2-byte L (LE)
///   | 12-byte delta (3 x fp32 LE) | 2L-byte semantic (fp16 LE)
///   | optional top-K section: 2-byte k | 2-byte scale (fp16)
///     | k x 4-byte packed entries (index << 14 | q & 0x3fff), LE
struct CollabPayload {
  uint8_t version = 1;
  std::array<float, 3> delta{};
  std::vector<uint16_t> semantic;  // half-precision bits, length L
  std::optional<TopKSet> topk;

  int semantic_len() const { return static_cast<int>(semantic.size()); }
  /// Semantic values widened to float.
  std::vector<float> semantic_values() const;
};

inline constexpr std::array<char, 4> kPayloadMagic = {'B', 'V', 'C', 'P'};
inline constexpr uint8_t kPayloadVersion = 1;
inline constexpr uint8_t kFlagTopK = 0x01;
inline constexpr int kTopKMax = 1024;
inline constexpr int kTopKIndexBits = 18;
inline constexpr int kTopKValueBits = 14;
inline constexpr int kTopKQuantDenom = 8192;  // 2^13

std::vector<uint8_t> encode_payload(const CollabPayload& payload);
CollabPayload decode_payload(const std::vector<uint8_t>& bytes);

/// Byte-size accounting for the format above.
int64_t payload_header_bytes();                 // 8
int64_t payload_semantic_bytes(int semantic_len);  // 2 * L
int64_t topk_section_bytes(int k);              // 2 + 2 + 4 * k
int64_t topk_entries_bytes(int k);              // 4 * k
int64_t payload_total_bytes(int semantic_len, int k /*0 = no section*/);

/// The k elements of largest |value|, ties broken toward the lowest linear
/// index; quantized against a shared half-precision scale.
TopKSet select_topk(const TensorF& tensor, int k);

/// Overwrites the listed positions of f_hat with the dequantized values.
TensorF apply_topk(TensorF f_hat, const TopKSet& set);

/// Rate in units of 1024 bits per second for a payload of the given size at
/// the given frame frequency.
double compute_rate(int64_t payload_bytes_per_frame, double freq_hz);

/// Annotated hex dump of an encoded payload, one section per heading.
void hex_dump_payload(const std::vector<uint8_t>& bytes, std::ostream& os);

}  // namespace bevrecon
