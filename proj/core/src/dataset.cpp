#include "bevrecon/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bevrecon/errors.hpp"
#include "bevrecon/rng.hpp"
#include "bevrecon/tensor_io.hpp"

namespace bevrecon {

namespace {

std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));  // exact fp32 roundtrip
  return buf;
}

std::string fmt_floats(const float* v, size_t n) {
  std::string out;
  for (size_t i = 0; i < n; ++i) {
    if (i) out += ",";
    out += fmt_float(v[i]);
  }
  return out;
}

std::vector<float> parse_floats(const std::string& key, const std::string& s, size_t expect) {
  std::vector<float> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stof(item));
  if (expect != 0 && out.size() != expect) {
    throw ConfigError("bad float list for " + key + " in pair meta");
  }
  return out;
}

std::vector<uint8_t> parse_bits(const std::string& key, const std::string& s, size_t expect) {
  std::vector<uint8_t> out;
  for (char c : s) {
    if (c == ',') continue;
    if (c != '0' && c != '1') throw ConfigError("bad flag list for " + key);
    out.push_back(c == '1' ? 1 : 0);
  }
  if (out.size() != expect) throw ConfigError("bad flag count for " + key);
  return out;
}

std::string fmt_bits(const std::vector<uint8_t>& bits) {
  std::string out;
  for (size_t i = 0; i < bits.size(); ++i) {
    if (i) out += ",";
    out += bits[i] ? "1" : "0";
  }
  return out;
}

}  // namespace

std::string pair_basename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%06d", index);
  return buf;
}

void write_pair(const std::string& dir, int index, const ScenePair& pair) {
  const std::string base = dir + "/" + pair_basename(index);
  write_tensor_file(base + ".ego", pair.ego.data);
  write_tensor_file(base + ".co", pair.co.data);

  KvPairs kv;
  kv.emplace_back("roi_origin", fmt_floats(pair.ego.roi_origin.data(), 2));
  kv.emplace_back("cell_size", fmt_float(pair.ego.cell_size));
  kv.emplace_back("ego_pose", fmt_floats(pair.ego.agent_pose.data(), 3));
  kv.emplace_back("co_pose", fmt_floats(pair.co.agent_pose.data(), 3));
  kv.emplace_back("delta", fmt_floats(pair.delta.data(), 3));
  kv.emplace_back("objects", std::to_string(pair.objects.size()));
  for (size_t i = 0; i < pair.objects.size(); ++i) {
    const SceneObject& o = pair.objects[i];
    const std::string p = "obj" + std::to_string(i);
    kv.emplace_back(p + ".center", fmt_floats(o.center.data(), 2));
    kv.emplace_back(p + ".amplitude", fmt_float(o.amplitude));
    kv.emplace_back(p + ".radius", fmt_float(o.radius));
    kv.emplace_back(p + ".signature", fmt_floats(o.channel_signature.data(),
                                                 o.channel_signature.size()));
  }
  kv.emplace_back("vis_ego", fmt_bits(pair.vis_ego));
  kv.emplace_back("vis_co", fmt_bits(pair.vis_co));

  std::ofstream os(base + ".meta", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + base + ".meta");
  os << serialize_kv(kv);
}

ScenePair read_pair(const std::string& dir, int index) {
  const std::string base = dir + "/" + pair_basename(index);
  ScenePair pair;
  pair.ego.data = read_tensor_file(base + ".ego");
  pair.co.data = read_tensor_file(base + ".co");

  std::ifstream is(base + ".meta");
  if (!is) throw std::runtime_error("cannot read " + base + ".meta");
  std::stringstream ss;
  ss << is.rdbuf();

  size_t n_obj = 0;
  std::vector<std::pair<std::string, std::string>> kv = parse_kv_text(ss.str());
  auto get = [&kv](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : kv) {
      if (k == key) return v;
    }
    throw ConfigError("missing key in pair meta: " + key);
  };

  const auto roi = parse_floats("roi_origin", get("roi_origin"), 2);
  pair.ego.roi_origin = {roi[0], roi[1]};
  pair.ego.cell_size = std::stof(get("cell_size"));
  const auto ep = parse_floats("ego_pose", get("ego_pose"), 3);
  pair.ego.agent_pose = {ep[0], ep[1], ep[2]};
  pair.co.roi_origin = pair.ego.roi_origin;
  pair.co.cell_size = pair.ego.cell_size;
  const auto cp = parse_floats("co_pose", get("co_pose"), 3);
  pair.co.agent_pose = {cp[0], cp[1], cp[2]};
  const auto d = parse_floats("delta", get("delta"), 3);
  pair.delta = {d[0], d[1], d[2]};
  n_obj = static_cast<size_t>(std::stoi(get("objects")));
  pair.objects.resize(n_obj);
  for (size_t i = 0; i < n_obj; ++i) {
    const std::string p = "obj" + std::to_string(i);
    SceneObject& o = pair.objects[i];
    const auto center = parse_floats(p, get(p + ".center"), 2);
    o.center = {center[0], center[1]};
    o.amplitude = std::stof(get(p + ".amplitude"));
    o.radius = std::stof(get(p + ".radius"));
    o.channel_signature = parse_floats(p, get(p + ".signature"), 0);
  }
  pair.vis_ego = parse_bits("vis_ego", get("vis_ego"), n_obj);
  pair.vis_co = parse_bits("vis_co", get("vis_co"), n_obj);
  return pair;
}

void write_dataset(const std::string& dir, const GeneratorConfig& config, uint64_t seed,
                   int count) {
  config.validate();
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    const ScenePair pair = generate_scene_pair(config, mix_seed(seed, static_cast<uint64_t>(i)));
    write_pair(dir, i, pair);
  }
  KvPairs kv;
  kv.emplace_back("count", std::to_string(count));
  kv.emplace_back("shape", std::to_string(config.h) + "," + std::to_string(config.w) + "," +
                               std::to_string(config.c));
  kv.emplace_back("config_hash", generator_config_hash(config));
  std::ofstream os(dir + "/manifest.txt", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir);
  os << serialize_kv(kv);
}

DatasetInfo read_manifest(const std::string& dir) {
  std::ifstream is(dir + "/manifest.txt");
  if (!is) throw std::runtime_error("no manifest.txt in " + dir);
  std::stringstream ss;
  ss << is.rdbuf();
  DatasetInfo info;
  for (const auto& [k, v] : parse_kv_text(ss.str())) {
    if (k == "count") {
      info.count = std::stoi(v);
    } else if (k == "shape") {
      std::istringstream vs(v);
      std::string item;
      int dims[3] = {0, 0, 0};
      for (int& dim : dims) {
        if (!std::getline(vs, item, ',')) throw ConfigError("bad shape in manifest");
        dim = std::stoi(item);
      }
      info.h = dims[0];
      info.w = dims[1];
      info.c = dims[2];
    } else if (k == "config_hash") {
      info.config_hash = v;
    } else {
      throw ConfigError("unknown manifest key: " + k);
    }
  }
  return info;
}

}  // namespace bevrecon
