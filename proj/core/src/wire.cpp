#include "bevrecon/wire.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "bevrecon/errors.hpp"
#include "bevrecon/half.hpp"

namespace bevrecon {

float TopKSet::scale() const { return half_to_float(scale_bits); }

float TopKSet::dequantize(int i) const {
  return static_cast<float>(entries[static_cast<size_t>(i)].q) * scale() /
         static_cast<float>(kTopKQuantDenom);
}

std::vector<float> CollabPayload::semantic_values() const {
  std::vector<float> out(semantic.size());
  for (size_t i = 0; i < semantic.size(); ++i) out[i] = half_to_float(semantic[i]);
  return out;
}

int64_t payload_header_bytes() { return 8; }
int64_t payload_semantic_bytes(int semantic_len) { return 2 * static_cast<int64_t>(semantic_len); }
int64_t topk_entries_bytes(int k) { return 4 * static_cast<int64_t>(k); }
int64_t topk_section_bytes(int k) { return 2 + 2 + topk_entries_bytes(k); }

int64_t payload_total_bytes(int semantic_len, int k) {
  int64_t n = payload_header_bytes() + 12 + payload_semantic_bytes(semantic_len);
  if (k > 0) n += topk_section_bytes(k);
  return n;
}

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    const uint16_t v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) throw DecodeError(DecodeErrorKind::kTruncated, what);
  }
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> encode_payload(const CollabPayload& payload) {
  if (payload.semantic.size() > 0xffff) {
    throw std::invalid_argument("semantic length exceeds 65535");
  }
  if (payload.topk) {
    const TopKSet& s = *payload.topk;
    if (s.k() > kTopKMax) throw std::invalid_argument("top-K set exceeds 1024 entries");
    uint32_t prev = 0;
    bool first = true;
    for (const TopKEntry& e : s.entries) {
      if (e.index >= (1u << kTopKIndexBits)) {
        throw std::invalid_argument("top-K index exceeds 18 bits");
      }
      if (!first && e.index <= prev) {
        throw std::invalid_argument("top-K indices must be strictly increasing");
      }
      if (e.q < -8192 || e.q > 8191) throw std::invalid_argument("top-K value exceeds 14 bits");
      prev = e.index;
      first = false;
    }
  }

  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(payload_total_bytes(
      payload.semantic_len(), payload.topk ? payload.topk->k() : 0)));
  out.insert(out.end(), kPayloadMagic.begin(), kPayloadMagic.end());
  out.push_back(payload.version);
  out.push_back(payload.topk ? kFlagTopK : 0);
  put_u16(out, static_cast<uint16_t>(payload.semantic.size()));
  for (float d : payload.delta) put_f32(out, d);
  for (uint16_t h : payload.semantic) put_u16(out, h);
  if (payload.topk) {
    const TopKSet& s = *payload.topk;
    put_u16(out, static_cast<uint16_t>(s.k()));
    put_u16(out, s.scale_bits);
    for (const TopKEntry& e : s.entries) {
      const uint32_t word =
          (e.index << kTopKValueBits) | (static_cast<uint32_t>(e.q) & 0x3fffu);
      put_u32(out, word);
    }
  }
  return out;
}

CollabPayload decode_payload(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  std::array<char, 4> magic{};
  for (char& c : magic) c = static_cast<char>(r.u8("payload magic"));
  if (magic != kPayloadMagic) {
    throw DecodeError(DecodeErrorKind::kBadMagic, "not a collaboration payload");
  }
  CollabPayload p;
  p.version = r.u8("payload version");
  if (p.version != kPayloadVersion) {
    throw DecodeError(DecodeErrorKind::kBadVersion,
                      "payload version " + std::to_string(p.version));
  }
  const uint8_t flags = r.u8("payload flags");
  if (flags & ~kFlagTopK) {
    throw DecodeError(DecodeErrorKind::kBadHeader,
                      "unknown flag bits " + std::to_string(flags));
  }
  const uint16_t semantic_len = r.u16("payload semantic length");
  for (float& d : p.delta) d = r.f32("payload delta");
  p.semantic.resize(semantic_len);
  for (uint16_t& h : p.semantic) h = r.u16("payload semantic");

  if (flags & kFlagTopK) {
    if (r.remaining() == 0) {
      throw DecodeError(DecodeErrorKind::kMissingSection,
                        "top-K flag set but section absent");
    }
    TopKSet s;
    const uint16_t k = r.u16("topk count");
    if (k > kTopKMax) {
      throw DecodeError(DecodeErrorKind::kBadHeader, "top-K count exceeds 1024");
    }
    s.scale_bits = r.u16("topk scale");
    s.entries.resize(k);
    uint32_t prev = 0;
    for (int i = 0; i < k; ++i) {
      const uint32_t word = r.u32("topk entry");
      TopKEntry e;
      e.index = word >> kTopKValueBits;
      uint32_t q = word & 0x3fffu;
      if (q & 0x2000u) q |= 0xffffc000u;  // sign-extend 14 bits
      e.q = static_cast<int16_t>(static_cast<int32_t>(q));
      if (i > 0 && e.index <= prev) {
        throw DecodeError(DecodeErrorKind::kNonCanonicalOrder,
                          "top-K indices must be strictly increasing");
      }
      prev = e.index;
      s.entries[static_cast<size_t>(i)] = e;
    }
    p.topk = std::move(s);
  }
  if (r.remaining() != 0) {
    throw DecodeError(DecodeErrorKind::kTrailingBytes,
                      std::to_string(r.remaining()) + " bytes after payload");
  }
  return p;
}

TopKSet select_topk(const TensorF& tensor, int k) {
  const int64_t n = tensor.numel();
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (k > n) throw std::invalid_argument("k exceeds the element count");
  if (k > kTopKMax) throw std::invalid_argument("k exceeds the 1024-entry wire limit");
  if (n > (int64_t(1) << kTopKIndexBits)) {
    throw std::invalid_argument("tensor too large for 18-bit indices");
  }
  if (!tensor.all_finite()) throw std::invalid_argument("non-finite tensor");

  std::vector<uint32_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0u);
  auto better = [&](uint32_t a, uint32_t b) {
    const float fa = std::fabs(tensor[a]), fb = std::fabs(tensor[b]);
    if (fa != fb) return fa > fb;
    return a < b;  // tie: lowest linear index wins
  };
  std::nth_element(order.begin(), order.begin() + k, order.end(), better);
  order.resize(static_cast<size_t>(k));
  std::sort(order.begin(), order.end());  // canonical index order

  TopKSet set;
  float max_abs = 0.f;
  for (uint32_t idx : order) max_abs = std::max(max_abs, std::fabs(tensor[idx]));
  // Scale rounds up to the next representable half so |value|/scale <= 1.
  set.scale_bits = max_abs > 0.f ? float_to_half_round_up(max_abs) : 0;
  const float scale = set.scale();
  set.entries.reserve(static_cast<size_t>(k));
  for (uint32_t idx : order) {
    TopKEntry e;
    e.index = idx;
    if (scale > 0.f) {
      const long q = std::lround(static_cast<double>(tensor[idx]) / scale * kTopKQuantDenom);
      e.q = static_cast<int16_t>(std::clamp<long>(q, -8192, 8191));
    }
    set.entries.push_back(e);
  }
  return set;
}

TensorF apply_topk(TensorF f_hat, const TopKSet& set) {
  const int64_t n = f_hat.numel();
  for (int i = 0; i < set.k(); ++i) {
    const TopKEntry& e = set.entries[static_cast<size_t>(i)];
    if (static_cast<int64_t>(e.index) >= n) {
      throw std::invalid_argument("top-K index out of range for this tensor");
    }
    f_hat[e.index] = set.dequantize(i);
  }
  return f_hat;
}

double compute_rate(int64_t payload_bytes_per_frame, double freq_hz) {
  if (payload_bytes_per_frame <= 0 || freq_hz <= 0) {
    throw std::invalid_argument("rate inputs must be positive");
  }
  return static_cast<double>(payload_bytes_per_frame) * 8.0 * freq_hz / 1024.0;
}

namespace {

void dump_rows(std::ostream& os, const std::vector<uint8_t>& bytes, size_t begin, size_t end,
               const std::string& label) {
  os << "-- " << label << " (" << (end - begin) << " B)\n";
  for (size_t off = begin; off < end; off += 16) {
    os << std::setw(6) << std::setfill('0') << std::hex << off << "  ";
    for (size_t i = off; i < std::min(off + 16, end); ++i) {
      os << std::setw(2) << static_cast<int>(bytes[i]) << ' ';
    }
    os << std::dec << std::setfill(' ') << '\n';
  }
}

}  // namespace

void hex_dump_payload(const std::vector<uint8_t>& bytes, std::ostream& os) {
  // Validate first so the dump always describes a well-formed payload.
  const CollabPayload p = decode_payload(bytes);
  size_t off = 0;
  dump_rows(os, bytes, off, off + 8, "header: magic BVCP, version, flags, L=" +
                                          std::to_string(p.semantic_len()));
  off += 8;
  dump_rows(os, bytes, off, off + 12, "delta (3 x fp32)");
  off += 12;
  const size_t sem = static_cast<size_t>(payload_semantic_bytes(p.semantic_len()));
  dump_rows(os, bytes, off, off + sem, "semantic vector (fp16)");
  off += sem;
  if (p.topk) {
    dump_rows(os, bytes, off, bytes.size(),
              "top-K section: k=" + std::to_string(p.topk->k()) + ", scale, packed entries");
  }
  os << "total " << bytes.size() << " B\n";
}

}  // namespace bevrecon
