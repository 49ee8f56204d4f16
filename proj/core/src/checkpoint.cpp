#include "bevrecon/checkpoint.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "bevrecon/errors.hpp"
#include "bevrecon/tensor_io.hpp"

namespace bevrecon {

namespace {

constexpr std::array<char, 8> kCkptMagic = {'B', 'E', 'V', 'R', 'C', 'K', 'P', '1'};

void put_u16(std::ostream& os, uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    const char b = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(&b, 1);
  }
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "checkpoint");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "checkpoint");
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const RunConfig& config, int64_t step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kCkptMagic.data(), kCkptMagic.size());
  put_u32(os, static_cast<uint32_t>(model.params.size()));
  for (const auto& e : model.params.entries()) {
    put_u16(os, static_cast<uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    TensorF t(e.dims);
    if (t.numel() != e.value.size()) {
      throw std::runtime_error("parameter dims inconsistent for " + e.name);
    }
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = e.value.data()[i];
    std::ostringstream blob(std::ios::binary);
    write_tensor(blob, t, DType::kF32);
    const std::string bytes = blob.str();
    put_u64(os, bytes.size());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::string meta = config.to_text();
  meta += "ckpt.step=" + std::to_string(step) + "\n";
  put_u32(os, static_cast<uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCkptMagic) {
    throw DecodeError(DecodeErrorKind::kBadMagic, "not a checkpoint: " + path);
  }
  const uint32_t count = get_u32(is);
  std::vector<std::pair<std::string, TensorF>> blobs;
  blobs.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint64_t blob_len = get_u64(is);
    std::string bytes(blob_len, '\0');
    is.read(bytes.data(), static_cast<std::streamsize>(blob_len));
    if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "checkpoint blob " + name);
    std::istringstream blob(bytes, std::ios::binary);
    blobs.emplace_back(std::move(name), read_tensor(blob));
  }
  const uint32_t meta_len = get_u32(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), meta_len);
  if (!is) throw DecodeError(DecodeErrorKind::kTruncated, "checkpoint metadata");

  // Split the metadata into run-config lines and checkpoint-local lines.
  std::string cfg_text;
  int64_t step = 0;
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.rfind("ckpt.step=", 0) == 0) {
      step = std::stoll(line.substr(10));
    } else {
      cfg_text += line;
      cfg_text += '\n';
    }
  }

  LoadedCheckpoint out;
  out.config = RunConfig::from_text(cfg_text);
  out.config.validate();
  out.step = step;
  const GridShape grid{out.config.gen.h, out.config.gen.w, out.config.gen.c};
  out.model = std::make_unique<Model<float>>(out.config.model, grid, out.config.seed_init());

  size_t filled = 0;
  for (auto& [name, tensor] : blobs) {
    const int h = out.model->params.find(name);
    if (h < 0) {
      throw ConfigError("checkpoint/config mismatch: unexpected parameter " + name);
    }
    auto& entry = out.model->params.at(h);
    if (tensor.numel() != entry.value.size()) {
      throw ConfigError("checkpoint/config mismatch: size of " + name);
    }
    for (int64_t i = 0; i < tensor.numel(); ++i) entry.value.data()[i] = tensor[i];
    ++filled;
  }
  if (filled != out.model->params.size()) {
    throw ConfigError("checkpoint/config mismatch: missing parameters");
  }
  return out;
}

}  // namespace bevrecon
