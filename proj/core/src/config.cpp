#include "ensemblenet/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ensemblenet/error.hpp"

namespace enet {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      field = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

json model_json(const ModelConfig& m) {
  return {{"num_branches", m.num_branches},
          {"reduce_dim", m.reduce_dim},
          {"last_stride", m.last_stride},
          {"pooling", to_string(m.pooling)},
          {"num_classes", m.num_classes},
          {"backbone", to_string(m.backbone)},
          {"pretrained", m.pretrained},
          {"leaky_slope", m.leaky_slope},
          {"descriptor_tap", to_string(m.descriptor_tap)},
          {"input_height", m.input_height},
          {"input_width", m.input_width},
          {"pixel_mean", m.pixel_mean},
          {"pixel_std", m.pixel_std}};
}

ModelConfig model_from(const json& j, ModelConfig m) {
  read(j, "num_branches", m.num_branches);
  read(j, "reduce_dim", m.reduce_dim);
  read(j, "last_stride", m.last_stride);
  std::string s;
  if (j.contains("pooling")) {
    read(j, "pooling", s);
    m.pooling = pooling_from_string(s);
  }
  read(j, "num_classes", m.num_classes);
  if (j.contains("backbone")) {
    read(j, "backbone", s);
    m.backbone = backbone_from_string(s);
  }
  read(j, "pretrained", m.pretrained);
  read(j, "leaky_slope", m.leaky_slope);
  if (j.contains("descriptor_tap")) {
    read(j, "descriptor_tap", s);
    m.descriptor_tap = descriptor_tap_from_string(s);
  }
  read(j, "input_height", m.input_height);
  read(j, "input_width", m.input_width);
  read(j, "pixel_mean", m.pixel_mean);
  read(j, "pixel_std", m.pixel_std);
  return m;
}

std::string_view reduction_name(LossReduction r) { return r == LossReduction::kMean ? "mean" : "sum"; }

LossReduction reduction_from(std::string_view s) {
  if (s == "mean") return LossReduction::kMean;
  if (s == "sum") return LossReduction::kSum;
  throw ConfigError("unknown loss reduction '" + std::string(s) + "'");
}

json to_json_value(const RunConfig& c) {
  json j;
  j["model"] = model_json(c.model);
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"base_lr", c.train.base_lr},
                {"decay_epochs", c.train.decay_epochs},
                {"decay_factor", c.train.decay_factor},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"new_param_lr_multiplier", c.train.new_param_lr_multiplier},
                {"loss_reduction", reduction_name(c.train.loss_reduction)},
                {"seed", c.train.seed}};
  const AugmentConfig& a = c.augment;
  j["augment"] = {{"target_height", a.target_height},
                  {"target_width", a.target_width},
                  {"crop_enabled", a.crop_enabled},
                  {"flip_enabled", a.flip_enabled},
                  {"erase_enabled", a.erase_enabled},
                  {"flip_probability", a.flip_probability},
                  {"erase_probability", a.erase_probability},
                  {"erase_area_range", {a.erase_area_range.first, a.erase_area_range.second}},
                  {"erase_aspect_range", {a.erase_aspect_range.first, a.erase_aspect_range.second}},
                  {"erase_fill", a.erase_fill},
                  {"erase_fill_from_data", a.erase_fill_from_data},
                  {"pad_pixels", a.pad_pixels}};
  j["rerank"] = {{"k1", c.rerank.k1}, {"k2", c.rerank.k2}, {"lambda", c.rerank.lambda}};
  const SyntheticSpec& s = c.data.synthetic;
  j["data"] = {{"layout", to_string(c.data.layout)},
               {"root", c.data.root},
               {"synthetic",
                {{"num_ids", s.num_ids},
                 {"images_per_id", s.images_per_id},
                 {"num_cams", s.num_cams},
                 {"height", s.height},
                 {"width", s.width},
                 {"seed", s.seed}}}};
  const LandscapeConfig& l = c.landscape;
  j["landscape"] = {{"grid", l.grid},
                    {"radius", l.radius},
                    {"seed_delta", l.seed_delta},
                    {"seed_eta", l.seed_eta},
                    {"max_query", l.max_query},
                    {"max_gallery", l.max_gallery}};
  j["ranks"] = c.ranks;
  j["extract_batch"] = c.extract_batch;
  j["out"] = c.out;
  j["seed"] = c.seed;
  return j;
}

RunConfig from_json_value(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = RunConfig::desk();
  if (auto it = j.find("model"); it != j.end()) c.model = model_from(*it, c.model);
  if (auto it = j.find("train"); it != j.end()) {
    const json& t = *it;
    read(t, "epochs", c.train.epochs);
    read(t, "batch_size", c.train.batch_size);
    read(t, "base_lr", c.train.base_lr);
    read(t, "decay_epochs", c.train.decay_epochs);
    read(t, "decay_factor", c.train.decay_factor);
    read(t, "momentum", c.train.momentum);
    read(t, "weight_decay", c.train.weight_decay);
    read(t, "new_param_lr_multiplier", c.train.new_param_lr_multiplier);
    if (t.contains("loss_reduction")) {
      std::string r;
      read(t, "loss_reduction", r);
      c.train.loss_reduction = reduction_from(r);
    }
    read(t, "seed", c.train.seed);
  }
  if (auto it = j.find("augment"); it != j.end()) {
    const json& a = *it;
    read(a, "target_height", c.augment.target_height);
    read(a, "target_width", c.augment.target_width);
    read(a, "crop_enabled", c.augment.crop_enabled);
    read(a, "flip_enabled", c.augment.flip_enabled);
    read(a, "erase_enabled", c.augment.erase_enabled);
    read(a, "flip_probability", c.augment.flip_probability);
    read(a, "erase_probability", c.augment.erase_probability);
    read(a, "erase_area_range", c.augment.erase_area_range);
    read(a, "erase_aspect_range", c.augment.erase_aspect_range);
    read(a, "erase_fill", c.augment.erase_fill);
    read(a, "erase_fill_from_data", c.augment.erase_fill_from_data);
    read(a, "pad_pixels", c.augment.pad_pixels);
  }
  if (auto it = j.find("rerank"); it != j.end()) {
    read(*it, "k1", c.rerank.k1);
    read(*it, "k2", c.rerank.k2);
    read(*it, "lambda", c.rerank.lambda);
  }
  if (auto it = j.find("data"); it != j.end()) {
    const json& d = *it;
    if (d.contains("layout")) {
      std::string l;
      read(d, "layout", l);
      c.data.layout = layout_from_string(l);
    }
    read(d, "root", c.data.root);
    if (auto st = d.find("synthetic"); st != d.end()) {
      read(*st, "num_ids", c.data.synthetic.num_ids);
      read(*st, "images_per_id", c.data.synthetic.images_per_id);
      read(*st, "num_cams", c.data.synthetic.num_cams);
      read(*st, "height", c.data.synthetic.height);
      read(*st, "width", c.data.synthetic.width);
      read(*st, "seed", c.data.synthetic.seed);
    }
  }
  if (auto it = j.find("landscape"); it != j.end()) {
    read(*it, "grid", c.landscape.grid);
    read(*it, "radius", c.landscape.radius);
    read(*it, "seed_delta", c.landscape.seed_delta);
    read(*it, "seed_eta", c.landscape.seed_eta);
    read(*it, "max_query", c.landscape.max_query);
    read(*it, "max_gallery", c.landscape.max_gallery);
  }
  read(j, "ranks", c.ranks);
  read(j, "extract_batch", c.extract_batch);
  read(j, "out", c.out);
  read(j, "seed", c.seed);
  return c;
}

json parse(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_json(cfg).dump(); }

ModelConfig model_config_from_json(std::string_view text) {
  return model_from(parse(text, "model config"), ModelConfig{});
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.data.layout = Layout::kSynthetic;
  c.model = ModelConfig::desk(c.data.synthetic.num_ids);
  c.train = TrainConfig::desk();
  c.augment.target_height = c.model.input_height;
  c.augment.target_width = c.model.input_width;
  c.augment.pad_pixels = 4;
  c.landscape.grid = 5;
  c.out = "runs/desk";
  return c;
}

std::string RunConfig::to_json() const { return to_json_value(*this).dump(2) + "\n"; }

RunConfig RunConfig::from_json(std::string_view text) { return from_json_value(parse(text, "run config")); }

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_json();
}

void RunConfig::apply_overrides(const std::vector<std::string>& overrides) {
  json j = to_json_value(*this);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + o + "' is not of the form key=value");
    }
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    if (node->is_string() && !value.is_string()) value = raw;
    *node = std::move(value);
  }
  *this = from_json_value(j);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  augment.validate();
  rerank.validate();
  if (augment.target_height != model.input_height || augment.target_width != model.input_width) {
    throw ConfigError("augment target size must equal the model input size");
  }
  if (ranks.empty()) throw ConfigError("ranks must not be empty");
  for (int r : ranks) {
    if (r < 1) throw ConfigError("ranks must be positive");
  }
  if (extract_batch < 1) throw ConfigError("extract_batch must be positive");
  if (landscape.grid < 1) throw ConfigError("landscape.grid must be positive");
  if (!(landscape.radius > 0.0)) throw ConfigError("landscape.radius must be positive");
  if (landscape.max_query < 1 || landscape.max_gallery < 1) {
    throw ConfigError("landscape caps must be positive");
  }
}

}  // namespace enet
