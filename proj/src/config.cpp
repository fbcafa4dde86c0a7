#include "segan/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

namespace segan {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string fmt_float(float v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::vector<float> parse_list(const std::string& key, const std::string& text, char sep) {
  std::vector<float> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(parse_number<float>(key, trim(item)));
  return out;
}

std::string fmt_list(const std::vector<float>& values, char sep) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += sep;
    out += fmt_float(values[i]);
  }
  return out;
}

struct Entry {
  ConfigKey doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename N, typename Field>
Entry number(std::string key, std::string full_scale, std::string doc, Field field) {
  Entry e{{key, std::move(full_scale), std::move(doc)}, nullptr, nullptr};
  e.get = [field](const RunConfig& c) {
    if constexpr (std::is_floating_point_v<N>) {
      return fmt_float(field(const_cast<RunConfig&>(c)));
    } else {
      return std::to_string(field(const_cast<RunConfig&>(c)));
    }
  };
  e.set = [field, key](RunConfig& c, const std::string& v) { field(c) = parse_number<N>(key, v); };
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back({{"variant", "S3_3C",
                  "S1_1C | S3_1C | S3_3C | S3_3C_s0 | S3_3C_s3 | UNET_BASELINE"},
                 [](const RunConfig& c) { return to_string(c.train.variant); },
                 [](RunConfig& c, const std::string& v) { c.train.variant = parse_variant(v); }});
    t.push_back(number<int>("classes", "3", "nested label classes (whole, core, enhanced)",
                            [](RunConfig& c) -> int& { return c.train.classes; }));
    t.push_back(number<int>("image_channels", "3", "input modalities per slice",
                            [](RunConfig& c) -> int& { return c.train.image_channels; }));
    t.push_back(number<std::size_t>("batch_size", "64", "slices per mini-batch",
                                    [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    t.push_back(number<float>("lr", "2e-05", "RMSProp learning rate",
                              [](RunConfig& c) -> float& { return c.train.lr; }));
    t.push_back(number<float>("rmsprop_decay", "-", "RMSProp squared-gradient decay",
                              [](RunConfig& c) -> float& { return c.train.rmsprop_decay; }));
    t.push_back(number<float>("rmsprop_eps", "-", "RMSProp denominator epsilon",
                              [](RunConfig& c) -> float& { return c.train.rmsprop_eps; }));
    t.push_back(number<std::size_t>("max_iters", "-", "training iterations (critic step + segmentor step)",
                                    [](RunConfig& c) -> std::size_t& { return c.train.max_iters; }));
    t.push_back({{"clip_c", "0.01", "critic weight clip bound, or off"},
                 [](const RunConfig& c) {
                   return c.train.clip_c ? fmt_float(*c.train.clip_c) : std::string("off");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "off") {
                     c.train.clip_c.reset();
                   } else {
                     c.train.clip_c = parse_number<float>("clip_c", v);
                   }
                 }});
    t.push_back(number<std::uint64_t>("seed", "-", "seed for initialization and batch order",
                                      [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    t.push_back(number<int>("base_feature_maps", "64", "feature maps of the first block; doubles per block",
                            [](RunConfig& c) -> int& { return c.train.base_feature_maps; }));
    t.push_back(number<int>("segmentor_blocks", "4", "segmentor down (= up) blocks",
                            [](RunConfig& c) -> int& { return c.train.segmentor_blocks; }));
    t.push_back(number<int>("critic_blocks", "3", "critic down blocks",
                            [](RunConfig& c) -> int& { return c.train.critic_blocks; }));
    t.push_back(number<std::size_t>("eval_every", "-", "validation interval in iterations; 0 disables",
                                    [](RunConfig& c) -> std::size_t& { return c.train.eval_every; }));
    t.push_back(number<std::size_t>("crop", "160", "training random crop / validation centre crop",
                                    [](RunConfig& c) -> std::size_t& { return c.train.crop; }));
    t.push_back({{"volume_crop", "180x180x128", "centred volume crop HxWxD before slicing, or none"},
                 [](const RunConfig& c) {
                   if (!c.train.volume_crop) return std::string("none");
                   const auto& v = *c.train.volume_crop;
                   return std::to_string(v[0]) + "x" + std::to_string(v[1]) + "x" + std::to_string(v[2]);
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "none") {
                     c.train.volume_crop.reset();
                     return;
                   }
                   std::array<std::size_t, 3> dims{};
                   std::istringstream in(v);
                   std::string part;
                   std::size_t n = 0;
                   while (std::getline(in, part, 'x')) {
                     if (n == 3) throw ConfigError("config key 'volume_crop': expected HxWxD");
                     dims[n++] = parse_number<std::size_t>("volume_crop", part);
                   }
                   if (n != 3) throw ConfigError("config key 'volume_crop': expected HxWxD");
                   c.train.volume_crop = dims;
                 }});
    t.push_back({{"include_input_scale", "-", "multi-scale set includes layer 0 (the masked input)"},
                 [](const RunConfig& c) { return std::string(c.train.include_input_scale ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.include_input_scale = parse_bool("include_input_scale", v);
                 }});
    t.push_back(number<float>("threshold", "-", "probability threshold for Dice",
                              [](RunConfig& c) -> float& { return c.train.threshold; }));
    t.push_back({{"record_wall_time", "-", "write ms_elapsed into the history (breaks bitwise reproducibility)"},
                 [](const RunConfig& c) { return std::string(c.train.record_wall_time ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) {
                   c.train.record_wall_time = parse_bool("record_wall_time", v);
                 }});

    t.push_back(number<std::size_t>("synth.size", "-", "synthetic slice height = width",
                                    [](RunConfig& c) -> std::size_t& { return c.synth.size; }));
    t.push_back(number<std::size_t>("synth.depth", "-", "synthetic slices per volume",
                                    [](RunConfig& c) -> std::size_t& { return c.synth.depth; }));
    t.push_back(number<int>("synth.classes", "-", "nested regions",
                            [](RunConfig& c) -> int& { return c.synth.classes; }));
    t.push_back(number<int>("synth.channels", "-", "modality channels",
                            [](RunConfig& c) -> int& { return c.synth.channels; }));
    t.push_back({{"synth.offsets", "-", "per-region channel offsets, regions ';'-separated, channels ','"},
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t k = 0; k < c.synth.offsets.size(); ++k) {
                     if (k) out += ';';
                     out += fmt_list(c.synth.offsets[k], ',');
                   }
                   return out;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::vector<float>> rows;
                   std::istringstream in(v);
                   std::string row;
                   while (std::getline(in, row, ';')) rows.push_back(parse_list("synth.offsets", row, ','));
                   c.synth.offsets = rows;
                 }});
    t.push_back({{"synth.background", "-", "background intensity per channel, ','-separated"},
                 [](const RunConfig& c) { return fmt_list(c.synth.background, ','); },
                 [](RunConfig& c, const std::string& v) {
                   c.synth.background = parse_list("synth.background", v, ',');
                 }});
    t.push_back(number<float>("synth.noise_sigma", "-", "Gaussian noise standard deviation",
                              [](RunConfig& c) -> float& { return c.synth.noise_sigma; }));
    t.push_back(number<float>("synth.min_radius", "-", "outer region radius lower bound (pixels)",
                              [](RunConfig& c) -> float& { return c.synth.min_radius; }));
    t.push_back(number<float>("synth.max_radius", "-", "outer region radius upper bound (pixels)",
                              [](RunConfig& c) -> float& { return c.synth.max_radius; }));
    t.push_back(number<float>("synth.min_ratio", "-", "inner/outer radius ratio lower bound",
                              [](RunConfig& c) -> float& { return c.synth.min_ratio; }));
    t.push_back(number<float>("synth.max_ratio", "-", "inner/outer radius ratio upper bound",
                              [](RunConfig& c) -> float& { return c.synth.max_ratio; }));
    t.push_back(number<float>("synth.center_jitter", "-", "region centre displacement bound (pixels)",
                              [](RunConfig& c) -> float& { return c.synth.center_jitter; }));
    t.push_back(number<std::size_t>("synth.train_volumes", "-", "training volumes",
                                    [](RunConfig& c) -> std::size_t& { return c.synth.train_volumes; }));
    t.push_back(number<std::size_t>("synth.val_volumes", "-", "validation volumes",
                                    [](RunConfig& c) -> std::size_t& { return c.synth.val_volumes; }));
    t.push_back(number<std::size_t>("synth.test_volumes", "-", "test volumes",
                                    [](RunConfig& c) -> std::size_t& { return c.synth.test_volumes; }));
    t.push_back(number<std::uint64_t>("synth.seed", "-", "generator seed",
                                      [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; }));
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const Entry& e : entries()) out.push_back(e.doc);
    return out;
  }();
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Entry& e : entries()) {
    if (e.doc.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> to_settings(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const Entry& e : entries()) out[e.doc.key] = e.get(cfg);
  return out;
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(cfg, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    } catch (const Error& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.train.validate();
  cfg.synth.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  for (const Entry& e : entries()) out << e.doc.key << " = " << e.get(cfg) << '\n';
}

void print_defaults(std::ostream& out) {
  const RunConfig defaults;
  out << "# Desk-scale defaults; full-scale values noted where known.\n";
  for (const Entry& e : entries()) {
    out << "\n# " << e.doc.doc;
    if (e.doc.full_scale != "-") out << " (full scale: " << e.doc.full_scale << ")";
    out << '\n' << e.doc.key << " = " << e.get(defaults) << '\n';
  }
}

}  // namespace segan
