#pragma once

#include <cstdint>
#include <cstring>

namespace bevrecon {

/// IEEE 754 binary16 conversions. Round-to-nearest-even on the narrowing
/// path; exact on the widening path.
inline uint16_t float_to_half(float value) {
  uint32_t x;
  std::memcpy(&x, &value, sizeof(x));
  const uint32_t sign = (x >> 16) & 0x8000u;
  const uint32_t em = x & 0x7fffffffu;

  if (em >= 0x47800000u) {  // overflow, inf, nan
    if (em > 0x7f800000u) return static_cast<uint16_t>(sign | 0x7e00u);
    return static_cast<uint16_t>(sign | 0x7c00u);
  }
  if (em < 0x38800000u) {  // subnormal half or zero
    if (em < 0x33000000u) return static_cast<uint16_t>(sign);  // rounds to 0
    const uint32_t mant = (em & 0x7fffffu) | 0x800000u;
    const int shift = 126 - static_cast<int>(em >> 23);
    uint32_t sub = mant >> shift;
    const uint32_t rem = mant & ((1u << shift) - 1);
    const uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (sub & 1))) ++sub;
    return static_cast<uint16_t>(sign | sub);
  }
  const uint32_t e = em - 0x38000000u;
  uint32_t h = e >> 13;
  const uint32_t rem = e & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1))) ++h;
  return static_cast<uint16_t>(sign | h);
}

inline float half_to_float(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  uint32_t exp = (h >> 10) & 0x1fu;
  uint32_t mant = h & 0x3ffu;
  uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 113;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 112) << 23) | (mant << 13);
  }
  float out;
  std::memcpy(&out, &bits, sizeof(out));
  return out;
}

/// Smallest representable half >= value. Requires finite value in the normal
/// half range; used for quantizer scales, which must never round below the
/// true maximum.
inline uint16_t float_to_half_round_up(float value) {
  uint16_t h = float_to_half(value);
  if (half_to_float(h) < value) ++h;
  return h;
}

}  // namespace bevrecon
