#include "stargnn/config.hpp"

#include <fstream>
#include <set>

#include "stargnn/binary_io.hpp"
#include "stargnn/error.hpp"

namespace stargnn {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), ErrorKind::config, where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(known.count(key) != 0, ErrorKind::config, "unknown config key '" + where + key + "'");
}

template <typename T>
void read_into(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, "config key '" + where + key + "' has the wrong type");
  }
}

template <typename Parse>
auto read_enum(const json& j, const char* key, Parse parse, decltype(parse(std::string{})) fallback) {
  if (!j.contains(key)) return fallback;
  require(j.at(key).is_string(), ErrorKind::config, std::string("config key '") + key + "' must be a string");
  try {
    return parse(j.at(key).get<std::string>());
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
}

void validate(const PipelineConfig& c) {
  require(c.rate_hz > 0, ErrorKind::config, "rate_hz must be positive");
  require(c.max_frames >= 1, ErrorKind::config, "max_frames must be >= 1");
  require(!c.scales.empty(), ErrorKind::config, "scales must not be empty");
  for (const auto& s : c.scales)
    require(s.window >= 1 && s.stride >= 1, ErrorKind::config, "scale window and stride must be >= 1");
  require(c.num_layers >= 1, ErrorKind::config, "num_layers must be >= 1");
  require(c.sgcn_power >= 1, ErrorKind::config, "sgcn_power must be >= 1");
  require(c.embed_dim >= 2, ErrorKind::config, "embed_dim must be >= 2");
  require(c.margin >= 0, ErrorKind::config, "margin must be >= 0");
  require(c.batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
  require(c.lr > 0, ErrorKind::config, "lr must be positive");
  require(c.max_epochs >= 1, ErrorKind::config, "max_epochs must be >= 1");
  require(c.patience >= 1, ErrorKind::config, "patience must be >= 1");
  require(c.val_fraction >= 0 && c.val_fraction < 1, ErrorKind::config, "val_fraction must be in [0, 1)");
  require(c.train_ratio > 0 && c.train_ratio <= 1, ErrorKind::config, "train_ratio must be in (0, 1]");
  require(c.render.alpha >= 0 && c.render.alpha <= 1, ErrorKind::config, "render.alpha must be in [0, 1]");
  require(c.backbone.channels >= 1, ErrorKind::config, "backbone.channels must be >= 1");
}

}  // namespace

std::vector<int> PipelineConfig::layer_dims(int input_dim) const {
  std::vector<int> dims{input_dim};
  for (int l = 0; l < num_layers; ++l) dims.push_back(embed_dim);
  return dims;
}

json PipelineConfig::to_json() const {
  json scales_j = json::array();
  for (const auto& s : scales) scales_j.push_back({s.window, s.stride});
  return {
      {"backbone", {{"name", backbone.name}, {"channels", backbone.channels}, {"seed", backbone.seed}}},
      {"preprocessing",
       {{"resize_short_edge", preprocessing.resize_short_edge},
        {"crop", preprocessing.crop},
        {"mean", preprocessing.mean},
        {"stddev", preprocessing.stddev}}},
      {"scales", scales_j},
      {"rate_hz", rate_hz},
      {"max_frames", max_frames},
      {"weighted", weighted},
      {"dense_threshold", dense_threshold},
      {"operator_kind", to_string(operator_kind)},
      {"num_layers", num_layers},
      {"sgcn_power", sgcn_power},
      {"aggregator", to_string(aggregator)},
      {"embed_dim", embed_dim},
      {"loss_kind", to_string(loss_kind)},
      {"margin", margin},
      {"batch_size", batch_size},
      {"lr", lr},
      {"seed", seed},
      {"max_epochs", max_epochs},
      {"patience", patience},
      {"val_fraction", val_fraction},
      {"train_ratio", train_ratio},
      {"distractor_count", distractor_count},
      {"render", {{"alpha", render.alpha}, {"colormap", render.colormap}}},
      {"cache_dir", cache_dir},
  };
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  reject_unknown(j,
                 {"backbone", "preprocessing", "scales", "rate_hz", "max_frames", "weighted",
                  "dense_threshold", "operator_kind", "num_layers", "sgcn_power", "aggregator",
                  "embed_dim", "loss_kind", "margin", "batch_size", "lr", "seed", "max_epochs",
                  "patience", "val_fraction", "train_ratio", "distractor_count", "render", "cache_dir"},
                 "");
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    reject_unknown(b, {"name", "channels", "seed"}, "backbone.");
    read_into(b, "name", c.backbone.name, "backbone.");
    read_into(b, "channels", c.backbone.channels, "backbone.");
    read_into(b, "seed", c.backbone.seed, "backbone.");
  }
  if (j.contains("preprocessing")) {
    const auto& p = j.at("preprocessing");
    reject_unknown(p, {"resize_short_edge", "crop", "mean", "stddev"}, "preprocessing.");
    read_into(p, "resize_short_edge", c.preprocessing.resize_short_edge, "preprocessing.");
    read_into(p, "crop", c.preprocessing.crop, "preprocessing.");
    read_into(p, "mean", c.preprocessing.mean, "preprocessing.");
    read_into(p, "stddev", c.preprocessing.stddev, "preprocessing.");
  }
  if (j.contains("scales")) {
    const auto& s = j.at("scales");
    require(s.is_array(), ErrorKind::config, "scales must be a list of [window, stride] pairs");
    c.scales.clear();
    for (const auto& e : s) {
      require(e.is_array() && e.size() == 2 && e[0].is_number_integer() && e[1].is_number_integer(),
              ErrorKind::config, "each scale must be [window, stride]");
      c.scales.push_back({e[0].get<int>(), e[1].get<int>()});
    }
  }
  read_into(j, "rate_hz", c.rate_hz, "");
  read_into(j, "max_frames", c.max_frames, "");
  read_into(j, "weighted", c.weighted, "");
  read_into(j, "dense_threshold", c.dense_threshold, "");
  c.operator_kind = read_enum(j, "operator_kind", parse_operator_kind, c.operator_kind);
  read_into(j, "num_layers", c.num_layers, "");
  read_into(j, "sgcn_power", c.sgcn_power, "");
  c.aggregator = read_enum(j, "aggregator", parse_aggregator, c.aggregator);
  read_into(j, "embed_dim", c.embed_dim, "");
  c.loss_kind = read_enum(j, "loss_kind", parse_loss_kind, c.loss_kind);
  read_into(j, "margin", c.margin, "");
  read_into(j, "batch_size", c.batch_size, "");
  read_into(j, "lr", c.lr, "");
  read_into(j, "seed", c.seed, "");
  read_into(j, "max_epochs", c.max_epochs, "");
  read_into(j, "patience", c.patience, "");
  read_into(j, "val_fraction", c.val_fraction, "");
  read_into(j, "train_ratio", c.train_ratio, "");
  read_into(j, "distractor_count", c.distractor_count, "");
  if (j.contains("render")) {
    const auto& r = j.at("render");
    reject_unknown(r, {"alpha", "colormap"}, "render.");
    read_into(r, "alpha", c.render.alpha, "render.");
    read_into(r, "colormap", c.render.colormap, "render.");
  }
  read_into(j, "cache_dir", c.cache_dir, "");
  validate(c);
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::usage, "cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  require(!key.empty(), ErrorKind::usage, "empty config key");
  json j = to_json();
  std::string pointer;
  for (char ch : key) pointer += ch == '.' ? '/' : ch;
  const json::json_pointer ptr("/" + pointer);
  require(j.contains(ptr), ErrorKind::config, "unknown config key '" + key + "'");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;
  }
  j[ptr] = v;
  *this = from_json(j);
}

std::uint64_t config_hash(const PipelineConfig& cfg, Stage stage) {
  const json full = cfg.to_json();
  json subset;
  subset["stage_chain"] = "features";
  for (const char* k : {"backbone", "preprocessing", "rate_hz", "max_frames"}) subset[k] = full[k];
  if (stage != Stage::features) {
    subset["stage_chain"] = "graphs";
    for (const char* k : {"scales", "weighted"}) subset[k] = full[k];
  }
  if (stage == Stage::model || stage == Stage::embeddings) {
    subset["stage_chain"] = stage == Stage::model ? "model" : "embeddings";
    for (const char* k : {"operator_kind", "num_layers", "sgcn_power", "aggregator", "embed_dim"})
      subset[k] = full[k];
  }
  return io::fnv1a(subset.dump());
}

}  // namespace stargnn
