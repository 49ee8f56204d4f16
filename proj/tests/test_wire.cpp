#include "bevrecon/wire.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bevrecon/errors.hpp"
#include "bevrecon/half.hpp"
#include "bevrecon/rng.hpp"

namespace bevrecon {
namespace {

CollabPayload random_payload(Rng& rng, bool with_topk) {
  CollabPayload p;
  const int l = rng.uniform_int(1, 600);
  p.semantic.resize(static_cast<size_t>(l));
  for (auto& h : p.semantic) h = float_to_half(static_cast<float>(rng.normal()));
  p.delta = {static_cast<float>(rng.normal() * 10), static_cast<float>(rng.normal() * 10),
             static_cast<float>(rng.normal())};
  if (with_topk) {
    TopKSet s;
    s.scale_bits = float_to_half(static_cast<float>(std::fabs(rng.normal()) + 0.1));
    const int k = rng.uniform_int(1, 40);
    uint32_t index = 0;
    for (int i = 0; i < k; ++i) {
      index += static_cast<uint32_t>(rng.uniform_int(1, 500));
      TopKEntry e;
      e.index = index;
      e.q = static_cast<int16_t>(rng.uniform_int(-8192, 8191));
      s.entries.push_back(e);
    }
    p.topk = std::move(s);
  }
  return p;
}

TEST(PayloadCodec, EncodedLengthIsExact) {
  CollabPayload p;
  p.semantic.assign(512, float_to_half(0.25f));
  p.delta = {1.f, 2.f, 0.f};
  const auto bytes = encode_payload(p);
  EXPECT_EQ(bytes.size(), 1044u);  // 8 header + 12 delta + 1024 semantic
  EXPECT_EQ(static_cast<int64_t>(bytes.size()), payload_total_bytes(512, 0));

  TensorF t({4, 4, 2});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(i) - 7.5f;
  p.topk = select_topk(t, 25);
  const auto with_topk = encode_payload(p);
  EXPECT_EQ(static_cast<int64_t>(with_topk.size()), payload_total_bytes(512, 25));
  EXPECT_EQ(topk_section_bytes(25), 2 + 2 + 25 * 4);
}

TEST(PayloadCodec, RoundtripIsExactOverRandomPayloads) {
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const CollabPayload p = random_payload(rng, trial % 2 == 0);
    const CollabPayload q = decode_payload(encode_payload(p));
    EXPECT_EQ(q.version, p.version);
    EXPECT_EQ(q.semantic, p.semantic);  // half bits compare bit-equal
    for (int i = 0; i < 3; ++i) EXPECT_EQ(q.delta[static_cast<size_t>(i)], p.delta[static_cast<size_t>(i)]);
    ASSERT_EQ(q.topk.has_value(), p.topk.has_value());
    if (p.topk) {
      EXPECT_EQ(q.topk->scale_bits, p.topk->scale_bits);
      ASSERT_EQ(q.topk->entries.size(), p.topk->entries.size());
      for (size_t i = 0; i < p.topk->entries.size(); ++i) {
        EXPECT_EQ(q.topk->entries[i].index, p.topk->entries[i].index);
        EXPECT_EQ(q.topk->entries[i].q, p.topk->entries[i].q);
      }
    }
  }
}

TEST(PayloadCodec, DecodeErrorTaxonomy) {
  Rng rng(7);
  const CollabPayload p = random_payload(rng, true);
  const auto bytes = encode_payload(p);

  {
    auto bad = bytes;
    bad[0] = 'X';
    try {
      decode_payload(bad);
      FAIL();
    } catch (const DecodeError& e) {
      EXPECT_EQ(e.kind(), DecodeErrorKind::kBadMagic);
    }
  }
  {
    auto bad = bytes;
    bad[4] = 99;  // version
    try {
      decode_payload(bad);
      FAIL();
    } catch (const DecodeError& e) {
      EXPECT_EQ(e.kind(), DecodeErrorKind::kBadVersion);
    }
  }
  {
    auto bad = bytes;
    bad.resize(bytes.size() - 2);  // truncate inside the top-K section
    try {
      decode_payload(bad);
      FAIL();
    } catch (const DecodeError& e) {
      EXPECT_EQ(e.kind(), DecodeErrorKind::kTruncated);
    }
  }
  {
    auto bad = bytes;
    bad.push_back(0);
    try {
      decode_payload(bad);
      FAIL();
    } catch (const DecodeError& e) {
      EXPECT_EQ(e.kind(), DecodeErrorKind::kTrailingBytes);
    }
  }
  {
    // Flag set but the section missing entirely.
    CollabPayload no_topk = p;
    no_topk.topk.reset();
    auto bad = encode_payload(no_topk);
    bad[5] |= kFlagTopK;
    try {
      decode_payload(bad);
      FAIL();
    } catch (const DecodeError& e) {
      EXPECT_EQ(e.kind(), DecodeErrorKind::kMissingSection);
    }
  }
  {
    // Swap two entries to break canonical index order.
    CollabPayload swapped = p;
    ASSERT_GE(swapped.topk->entries.size(), 2u);
    auto enc = encode_payload(swapped);
    const size_t entries_off = enc.size() - 4u * swapped.topk->entries.size();
    for (int i = 0; i < 4; ++i) std::swap(enc[entries_off + i], enc[entries_off + 4 + i]);
    try {
      decode_payload(enc);
      FAIL();
    } catch (const DecodeError& e) {
      EXPECT_EQ(e.kind(), DecodeErrorKind::kNonCanonicalOrder);
    }
  }
}

TEST(SelectTopK, SingleNonzeroElement) {
  TensorF t({4, 4, 2});
  t[13] = -3.25f;
  const TopKSet s = select_topk(t, 1);
  ASSERT_EQ(s.k(), 1);
  EXPECT_EQ(s.entries[0].index, 13u);
  const float step = s.scale() / 8192.f;
  EXPECT_NEAR(s.dequantize(0), -3.25f, step);
}

TEST(SelectTopK, TiesBreakTowardLowestIndex) {
  TensorF t({2, 2, 2});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (i % 2 == 0) ? 1.f : -1.f;
  const TopKSet s = select_topk(t, 3);
  ASSERT_EQ(s.k(), 3);
  EXPECT_EQ(s.entries[0].index, 0u);
  EXPECT_EQ(s.entries[1].index, 1u);
  EXPECT_EQ(s.entries[2].index, 2u);
}

TEST(SelectTopK, MatchesBruteForceOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    TensorF t({44, 24, 4});
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    const int k = 25;
    const TopKSet s = select_topk(t, k);

    // Exhaustive oracle: stable sort by (|value| desc, index asc).
    std::vector<uint32_t> order(static_cast<size_t>(t.numel()));
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
      const float fa = std::fabs(t[a]), fb = std::fabs(t[b]);
      if (fa != fb) return fa > fb;
      return a < b;
    });
    std::vector<uint32_t> expected(order.begin(), order.begin() + k);
    std::sort(expected.begin(), expected.end());

    ASSERT_EQ(s.k(), k);
    const float step = s.scale() / 8192.f;
    for (int i = 0; i < k; ++i) {
      EXPECT_EQ(s.entries[static_cast<size_t>(i)].index, expected[static_cast<size_t>(i)]);
      EXPECT_LE(std::fabs(s.dequantize(i) - t[expected[static_cast<size_t>(i)]]), step * 1.0001f);
    }
  }
}

TEST(SelectTopK, Preconditions) {
  TensorF t({4, 4, 2});
  EXPECT_THROW(select_topk(t, 0), std::invalid_argument);
  EXPECT_THROW(select_topk(t, 33), std::invalid_argument);  // k > element count
  TensorF big({1024, 1024, 1});                             // > 2^18 elements
  EXPECT_THROW(select_topk(big, 1), std::invalid_argument);
}

TEST(ApplyTopK, EmptySetIsIdentity) {
  TensorF f({4, 4, 1});
  Rng rng(5);
  for (auto& v : f.data) v = static_cast<float>(rng.normal());
  TopKSet empty;
  const TensorF out = apply_topk(f, empty);
  EXPECT_EQ(out.data, f.data);
}

TEST(ApplyTopK, OverwriteSemantics) {
  Rng rng(6);
  TensorF truth({8, 8, 2});
  for (auto& v : truth.data) v = static_cast<float>(rng.normal());
  const int k = 10;
  const TopKSet s = select_topk(truth, k);

  TensorF f_hat({8, 8, 2});
  for (auto& v : f_hat.data) v = static_cast<float>(rng.normal() * 0.01);
  const TensorF before = f_hat;
  const TensorF out = apply_topk(f_hat, s);

  const float step = s.scale() / 8192.f;
  int changed = 0;
  std::vector<bool> listed(static_cast<size_t>(truth.numel()), false);
  for (const auto& e : s.entries) listed[e.index] = true;
  for (int64_t i = 0; i < out.numel(); ++i) {
    if (listed[static_cast<size_t>(i)]) {
      EXPECT_LE(std::fabs(out[i] - truth[i]), step * 1.0001f);
      if (out[i] != before[i]) ++changed;
    } else {
      EXPECT_EQ(out[i], before[i]);
    }
  }
  EXPECT_EQ(changed, k);

  TopKSet bad = s;
  bad.entries[0].index = 1 << 17;
  EXPECT_THROW(apply_topk(before, bad), std::invalid_argument);
}

TEST(Rates, ReproduceTheRateColumnExactly) {
  const std::vector<int> l_values{512, 256, 128, 64, 32, 16};
  const std::vector<double> want{80, 40, 20, 10, 5, 2.5};
  for (size_t i = 0; i < l_values.size(); ++i) {
    EXPECT_DOUBLE_EQ(compute_rate(payload_semantic_bytes(l_values[i]), 10.0), want[i]);
  }
  // 25 packed entries of 32 bits at 10 Hz.
  EXPECT_DOUBLE_EQ(compute_rate(topk_entries_bytes(25), 10.0), 7.8125);
  // A full compressed fp32 frame: 42,240 Kib/s = 41.25 Mib/s, i.e. the
  // "about 40 Mb/s" full-frame figure.
  const double full = compute_rate(static_cast<int64_t>(352) * 96 * 4 * 4, 10.0);
  EXPECT_DOUBLE_EQ(full, 42240.0);
  EXPECT_NEAR(full / 1024.0, 41.25, 1e-12);
  EXPECT_LT(std::fabs(full / 1024.0 - 40.0) / 40.0, 0.05);
}

TEST(Rates, RejectsNonPositiveInputs) {
  EXPECT_THROW(compute_rate(0, 10.0), std::invalid_argument);
  EXPECT_THROW(compute_rate(100, 0.0), std::invalid_argument);
}

TEST(HexDump, AnnotatesSections) {
  Rng rng(8);
  const CollabPayload p = random_payload(rng, true);
  std::ostringstream os;
  hex_dump_payload(encode_payload(p), os);
  const std::string dump = os.str();
  EXPECT_NE(dump.find("header"), std::string::npos);
  EXPECT_NE(dump.find("delta"), std::string::npos);
  EXPECT_NE(dump.find("semantic"), std::string::npos);
  EXPECT_NE(dump.find("top-K"), std::string::npos);
  EXPECT_NE(dump.find("total"), std::string::npos);
}

}  // namespace
}  // namespace bevrecon
