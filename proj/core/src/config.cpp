#include "bevrecon/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bevrecon/errors.hpp"
#include "bevrecon/rng.hpp"

namespace bevrecon {

KvPairs parse_kv_text(const std::string& text) {
  KvPairs out;
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') continue;
    size_t eq = line.find('=', first);
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    std::string key = line.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string value = line.substr(eq + 1);
    size_t vstart = value.find_first_not_of(" \t");
    value = (vstart == std::string::npos) ? "" : value.substr(vstart);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t')) value.pop_back();
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::string serialize_kv(const KvPairs& pairs) {
  std::string out;
  for (const auto& [k, v] : pairs) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("bad unsigned integer for " + key + ": '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad real value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string cur;
  std::istringstream ss(v);
  while (std::getline(ss, cur, ',')) out.push_back(parse_int(key, cur));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

// Field table shared by the parser and the serializer so the two cannot
// drift apart.
struct FieldTable {
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  using Getter = std::function<std::string(const RunConfig&)>;
  struct Field {
    std::string key;
    Setter set;
    Getter get;
  };
  std::vector<Field> fields;
  std::map<std::string, size_t> by_key;

  void add(std::string key, Setter set, Getter get) {
    by_key[key] = fields.size();
    fields.push_back({std::move(key), std::move(set), std::move(get)});
  }
};

const FieldTable& field_table() {
  static const FieldTable table = [] {
    FieldTable t;
#define BEVRECON_FIELD_INT(key, expr)                                           \
  t.add(key,                                                                      \
        [](RunConfig& c, const std::string& k, const std::string& v) {            \
          c.expr = parse_int(k, v);                                               \
        },                                                                        \
        [](const RunConfig& c) { return std::to_string(c.expr); })
#define BEVRECON_FIELD_DOUBLE(key, expr)                                          \
  t.add(key,                                                                      \
        [](RunConfig& c, const std::string& k, const std::string& v) {            \
          c.expr = parse_double(k, v);                                            \
        },                                                                        \
        [](const RunConfig& c) { return fmt_double(c.expr); })
#define BEVRECON_FIELD_BOOL(key, expr)                                            \
  t.add(key,                                                                      \
        [](RunConfig& c, const std::string& k, const std::string& v) {            \
          c.expr = parse_bool(k, v);                                              \
        },                                                                        \
        [](const RunConfig& c) { return c.expr ? "1" : "0"; })
#define BEVRECON_FIELD_INT_LIST(key, expr)                                        \
  t.add(key,                                                                      \
        [](RunConfig& c, const std::string& k, const std::string& v) {            \
          c.expr = parse_int_list(k, v);                                          \
        },                                                                        \
        [](const RunConfig& c) { return fmt_int_list(c.expr); })

    BEVRECON_FIELD_INT("gen.h", gen.h);
    BEVRECON_FIELD_INT("gen.w", gen.w);
    BEVRECON_FIELD_INT("gen.c", gen.c);
    BEVRECON_FIELD_INT("gen.patch_h", gen.patch_h);
    BEVRECON_FIELD_INT("gen.patch_w", gen.patch_w);
    BEVRECON_FIELD_INT("gen.objects_min", gen.objects_min);
    BEVRECON_FIELD_INT("gen.objects_max", gen.objects_max);
    BEVRECON_FIELD_DOUBLE("gen.range_limit", gen.range_limit);
    BEVRECON_FIELD_BOOL("gen.occlusion", gen.occlusion);
    BEVRECON_FIELD_INT("gen.occlusion_sectors", gen.occlusion_sectors);
    BEVRECON_FIELD_DOUBLE("gen.noise_std", gen.noise_std);
    BEVRECON_FIELD_DOUBLE("gen.amp_min", gen.amp_min);
    BEVRECON_FIELD_DOUBLE("gen.amp_max", gen.amp_max);
    BEVRECON_FIELD_DOUBLE("gen.radius_min", gen.radius_min);
    BEVRECON_FIELD_DOUBLE("gen.radius_max", gen.radius_max);
    BEVRECON_FIELD_DOUBLE("gen.cell_size", gen.cell_size);
    BEVRECON_FIELD_DOUBLE("gen.delta_radius", gen.delta_radius);

    BEVRECON_FIELD_INT("model.patch_h", model.patch_h);
    BEVRECON_FIELD_INT("model.patch_w", model.patch_w);
    BEVRECON_FIELD_INT("model.hidden_dim", model.hidden_dim);
    BEVRECON_FIELD_INT("model.depth", model.depth);
    BEVRECON_FIELD_INT("model.heads", model.heads);
    BEVRECON_FIELD_INT("model.semantic_len", model.semantic_len);
    BEVRECON_FIELD_INT("model.code_width", model.code_width);
    BEVRECON_FIELD_DOUBLE("model.mlp_ratio", model.mlp_ratio);
    BEVRECON_FIELD_INT("model.se_c1", model.se_c1);
    BEVRECON_FIELD_INT("model.se_c2", model.se_c2);
    BEVRECON_FIELD_INT("model.se_c3", model.se_c3);
    BEVRECON_FIELD_BOOL("model.use_ego_semantic", model.use_ego_semantic);
    BEVRECON_FIELD_DOUBLE("model.data_scale", model.data_scale);

    BEVRECON_FIELD_INT("sched.t_diff", sched.t_diff);
    BEVRECON_FIELD_DOUBLE("sched.beta_start", sched.beta_start);
    BEVRECON_FIELD_DOUBLE("sched.beta_end", sched.beta_end);

    t.add("opt.algorithm",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v != "adamw" && v != "sgd") throw ConfigError("unknown optimizer for " + k + ": " + v);
            c.opt.algorithm = v;
          },
          [](const RunConfig& c) { return c.opt.algorithm; });
    BEVRECON_FIELD_DOUBLE("opt.lr", opt.lr);
    BEVRECON_FIELD_DOUBLE("opt.weight_decay", opt.weight_decay);
    BEVRECON_FIELD_INT("opt.batch_size", opt.batch_size);
    BEVRECON_FIELD_INT("opt.steps", opt.steps);
    BEVRECON_FIELD_DOUBLE("opt.lambda_vlb", opt.lambda_vlb);
    BEVRECON_FIELD_INT("opt.val_interval", opt.val_interval);
    BEVRECON_FIELD_INT("opt.val_pairs", opt.val_pairs);

    BEVRECON_FIELD_INT_LIST("eval.steps_list", eval.steps_list);
    BEVRECON_FIELD_INT_LIST("eval.l_list", eval.l_list);
    BEVRECON_FIELD_INT("eval.set_size", eval.set_size);
    BEVRECON_FIELD_INT("eval.downstream_scenes", eval.downstream_scenes);
    BEVRECON_FIELD_DOUBLE("eval.eta", eval.eta);
    BEVRECON_FIELD_INT("eval.topk", eval.topk);
    BEVRECON_FIELD_DOUBLE("eval.freq_hz", eval.freq_hz);
    BEVRECON_FIELD_DOUBLE("eval.det_threshold", eval.det_threshold);
    BEVRECON_FIELD_INT("eval.det_nms_radius", eval.det_nms_radius);
    BEVRECON_FIELD_DOUBLE("eval.det_match_radius", eval.det_match_radius);

    t.add("seed",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.seed = parse_u64(k, v);
          },
          [](const RunConfig& c) { return std::to_string(c.seed); });

#undef BEVRECON_FIELD_INT
#undef BEVRECON_FIELD_DOUBLE
#undef BEVRECON_FIELD_BOOL
#undef BEVRECON_FIELD_INT_LIST
    return t;
  }();
  return table;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (h <= 0 || w <= 0 || c <= 0) throw std::invalid_argument("grid dimensions must be positive");
  if (patch_h <= 0 || patch_w <= 0) throw std::invalid_argument("patch dimensions must be positive");
  if (h % patch_h != 0 || w % patch_w != 0) {
    throw std::invalid_argument("H and W must be divisible by the patch dimensions");
  }
  if (objects_min < 0 || objects_max < objects_min) {
    throw std::invalid_argument("bad object count range");
  }
  if (range_limit <= 0) throw std::invalid_argument("range_limit must be positive");
  if (occlusion_sectors <= 0) throw std::invalid_argument("occlusion_sectors must be positive");
  if (noise_std < 0) throw std::invalid_argument("noise_std must be non-negative");
  if (amp_min <= 0 || amp_max < amp_min) throw std::invalid_argument("bad amplitude range");
  if (cell_size <= 0) throw std::invalid_argument("cell_size must be positive");
  if (radius_min < cell_size || radius_max < radius_min) {
    throw std::invalid_argument("object radius must be at least one cell_size");
  }
  if (delta_radius < 0) throw std::invalid_argument("delta_radius must be non-negative");
}

void DenoiserConfig::validate() const {
  if (patch_h <= 0 || patch_w <= 0) throw std::invalid_argument("patch dimensions must be positive");
  if (hidden_dim <= 0 || depth <= 0 || heads <= 0) {
    throw std::invalid_argument("hidden_dim, depth, heads must be positive");
  }
  if (hidden_dim % heads != 0) throw std::invalid_argument("hidden_dim must be divisible by heads");
  if (hidden_dim % 2 != 0) throw std::invalid_argument("hidden_dim must be even");
  if (hidden_dim % 4 != 0) {
    throw std::invalid_argument("hidden_dim must be divisible by 4 for 2-D positional embeddings");
  }
  if (semantic_len <= 0) throw std::invalid_argument("semantic_len must be positive");
  if (code_width <= 0) throw std::invalid_argument("code_width must be positive");
  if (mlp_ratio <= 0) throw std::invalid_argument("mlp_ratio must be positive");
  if (se_c1 <= 0 || se_c2 <= 0 || se_c3 <= 0) throw std::invalid_argument("SE channels must be positive");
  if (data_scale <= 0) throw std::invalid_argument("data_scale must be positive");
}

void RunConfig::validate() const {
  gen.validate();
  model.validate();
  if (gen.patch_h != model.patch_h || gen.patch_w != model.patch_w) {
    throw std::invalid_argument("gen.patch_* and model.patch_* must agree");
  }
  if (gen.h % model.patch_h != 0 || gen.w % model.patch_w != 0) {
    throw std::invalid_argument("grid not divisible by model patch size");
  }
  if (sched.t_diff < 2) throw std::invalid_argument("t_diff must be >= 2");
  if (!(sched.beta_start > 0 && sched.beta_start < sched.beta_end && sched.beta_end < 1)) {
    throw std::invalid_argument("require 0 < beta_start < beta_end < 1");
  }
  if (opt.lr <= 0 || opt.batch_size <= 0 || opt.steps < 0) {
    throw std::invalid_argument("bad optimizer settings");
  }
  if (eval.set_size <= 0 || eval.downstream_scenes <= 0) {
    throw std::invalid_argument("bad eval settings");
  }
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  const FieldTable& table = field_table();
  for (const auto& [key, value] : parse_kv_text(text)) {
    auto it = table.by_key.find(key);
    if (it == table.by_key.end()) throw ConfigError("unknown key: " + key);
    table.fields[it->second].set(cfg, key, value);
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

std::string RunConfig::to_text() const {
  KvPairs pairs;
  for (const auto& f : field_table().fields) pairs.emplace_back(f.key, f.get(*this));
  return serialize_kv(pairs);
}

std::string RunConfig::hash() const { return to_hex(fnv1a64(to_text())); }

uint64_t RunConfig::seed_init() const { return mix_seed(seed, 1); }
uint64_t RunConfig::seed_train_data() const { return mix_seed(seed, 2); }
uint64_t RunConfig::seed_val_data() const { return mix_seed(seed, 3); }
uint64_t RunConfig::seed_eval_data() const { return mix_seed(seed, 4); }
uint64_t RunConfig::seed_downstream() const { return mix_seed(seed, 5); }
uint64_t RunConfig::seed_sampler() const { return mix_seed(seed, 6); }

GeneratorConfig generator_config_from_file(const std::string& path) {
  RunConfig cfg = RunConfig::from_file(path);
  return cfg.gen;
}

std::string generator_config_text(const GeneratorConfig& gen) {
  RunConfig probe;
  probe.gen = gen;
  // Extract only the gen.* lines from the canonical serialization.
  std::istringstream ss(probe.to_text());
  std::string line, out;
  while (std::getline(ss, line)) {
    if (line.rfind("gen.", 0) == 0) {
      out += line;
      out += '\n';
    }
  }
  return out;
}

std::string generator_config_hash(const GeneratorConfig& gen) {
  return to_hex(fnv1a64(generator_config_text(gen)));
}

}  // namespace bevrecon
