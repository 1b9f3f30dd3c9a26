#include "maf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace maf {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& path, const std::set<std::string>& known) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(path + "." + it.key() + ": unknown key");
  }
}

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

template <std::size_t N>
void read_array(const json& obj, const std::string& path, const char* key, std::array<Index, N>& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  std::vector<Index> v;
  read(obj, path, key, v);
  if (v.size() != N) {
    throw ConfigError(path + "." + key + ": expected " + std::to_string(N) + " entries, got " +
                      std::to_string(v.size()));
  }
  for (std::size_t i = 0; i < N; ++i) out[i] = v[i];
}

}  // namespace

ModelConfig parse_model_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ModelConfig cfg;
  reject_unknown(doc, "$", {"in_channels", "stem_width", "backbone", "blocks", "neck", "head", "seed"});
  read(doc, "$", "in_channels", cfg.in_channels);
  read(doc, "$", "stem_width", cfg.stem_width);
  read(doc, "$", "seed", cfg.seed);
  if (auto it = doc.find("backbone"); it != doc.end()) {
    reject_unknown(*it, "$.backbone", {"widths", "depths", "kernels"});
    read_array(*it, "$.backbone", "widths", cfg.widths);
    read_array(*it, "$.backbone", "depths", cfg.depths);
    read(*it, "$.backbone", "kernels", cfg.backbone_kernels);
  }
  if (auto it = doc.find("blocks"); it != doc.end()) {
    reject_unknown(*it, "$.blocks", {"expansion", "use_elan", "use_rep", "use_large"});
    read(*it, "$.blocks", "expansion", cfg.expansion);
    read(*it, "$.blocks", "use_elan", cfg.use_elan);
    read(*it, "$.blocks", "use_rep", cfg.use_rep);
    read(*it, "$.blocks", "use_large", cfg.use_large);
  }
  if (auto it = doc.find("neck"); it != doc.end()) {
    reject_unknown(*it, "$.neck", {"widths", "kernels", "assist_ratio", "depth", "enable_saf", "enable_aaf"});
    read_array(*it, "$.neck", "widths", cfg.neck.widths);
    read_array(*it, "$.neck", "kernels", cfg.neck.kernels);
    read(*it, "$.neck", "assist_ratio", cfg.neck.assist_ratio);
    read(*it, "$.neck", "depth", cfg.neck.n_bottlenecks);
    read(*it, "$.neck", "enable_saf", cfg.neck.enable_saf);
    read(*it, "$.neck", "enable_aaf", cfg.neck.enable_aaf);
  }
  if (auto it = doc.find("head"); it != doc.end()) {
    reject_unknown(*it, "$.head", {"width", "kernel", "outputs"});
    read(*it, "$.head", "width", cfg.head_width);
    read(*it, "$.head", "kernel", cfg.head_kernel);
    read(*it, "$.head", "outputs", cfg.head_outputs);
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

std::string model_config_to_json(const ModelConfig& cfg, int indent) {
  json doc = json::object();
  doc["in_channels"] = cfg.in_channels;
  doc["stem_width"] = cfg.stem_width;
  doc["backbone"] = {{"widths", cfg.widths}, {"depths", cfg.depths}, {"kernels", cfg.backbone_kernels}};
  doc["blocks"] = {{"expansion", cfg.expansion},
                   {"use_elan", cfg.use_elan},
                   {"use_rep", cfg.use_rep},
                   {"use_large", cfg.use_large}};
  doc["neck"] = {{"widths", cfg.neck.widths},
                 {"kernels", cfg.neck.kernels},
                 {"assist_ratio", cfg.neck.assist_ratio},
                 {"depth", cfg.neck.n_bottlenecks},
                 {"enable_saf", cfg.neck.enable_saf},
                 {"enable_aaf", cfg.neck.enable_aaf}};
  doc["head"] = {{"width", cfg.head_width}, {"kernel", cfg.head_kernel}, {"outputs", cfg.head_outputs}};
  doc["seed"] = cfg.seed;
  return doc.dump(indent);
}

}  // namespace maf
