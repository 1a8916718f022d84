#include "hgd/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace hgd {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename V>
void read(const json& obj, const char* key, const std::string& where, V& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string path = where.empty() ? key : where + "." + key;
  try {
    if constexpr (std::is_same_v<V, std::size_t> || std::is_same_v<V, std::uint64_t>) {
      if (!it->is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, double>) {
      if (!it->is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!it->is_string()) throw ConfigError("");
    }
    out = it->template get<V>();
  } catch (const std::exception&) {
    throw ConfigError("key '" + path + "' has the wrong type: " + it->dump());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (task != "seg" && task != "fpn") throw ConfigError("task must be \"seg\" or \"fpn\", got \"" + task + "\"");
  if (precision != "f32" && precision != "f64") {
    throw ConfigError("precision must be \"f32\" or \"f64\", got \"" + precision + "\"");
  }
  if (input_size == 0 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
  if (samples == 0) throw ConfigError("samples must be >= 1");
  seg_model().validate();
  fpn.validate();
  train.validate();
}

RunConfig parse_run_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  RunConfig c;
  check_keys(doc, "", {"task", "seed", "input_size", "num_classes", "samples", "backbone", "hgd",
                       "fpn", "train", "precision"});
  read(doc, "task", "", c.task);
  read(doc, "seed", "", c.seed);
  read(doc, "input_size", "", c.input_size);
  read(doc, "num_classes", "", c.num_classes);
  read(doc, "samples", "", c.samples);
  read(doc, "precision", "", c.precision);
  if (doc.contains("backbone")) {
    const json& b = doc["backbone"];
    check_keys(b, "backbone", {"channels", "blocks"});
    if (b.contains("channels")) {
      const json& ch = b["channels"];
      if (!ch.is_array() || ch.size() != 4) throw ConfigError("backbone.channels must be an array of 4 counts");
      for (std::size_t i = 0; i < 4; ++i) {
        if (!ch[i].is_number_unsigned()) throw ConfigError("backbone.channels must hold non-negative integers");
        c.backbone.channels[i] = ch[i].get<std::size_t>();
      }
    }
    read(b, "blocks", "backbone", c.backbone.blocks);
  }
  if (doc.contains("hgd")) {
    const json& h = doc["hgd"];
    check_keys(h, "hgd", {"n", "codeword_dim", "compressed", "guidance", "transfer", "codeword_scales",
                          "assembly_scales"});
    read(h, "n", "hgd", c.hgd.n_codewords);
    read(h, "codeword_dim", "hgd", c.hgd.codeword_dim);
    read(h, "compressed", "hgd", c.hgd.compressed_channels);
    read(h, "guidance", "hgd", c.hgd.guidance_channels);
    read(h, "transfer", "hgd", c.hgd.transfer_enabled);
    for (const char* key : {"codeword_scales", "assembly_scales"}) {
      if (!h.contains(key)) continue;
      auto& dst = std::string(key) == "codeword_scales" ? c.hgd.codeword_scales : c.hgd.assembly_scales;
      try {
        dst = h[key].get<std::vector<int>>();
      } catch (const std::exception&) {
        throw ConfigError(std::string("hgd.") + key + " must be an array of strides");
      }
    }
  }
  if (doc.contains("fpn")) {
    const json& f = doc["fpn"];
    check_keys(f, "fpn", {"n", "c", "k", "share_params", "channels", "normalize_fusion"});
    read(f, "n", "fpn", c.fpn.n_codewords);
    read(f, "c", "fpn", c.fpn.codeword_dim);
    read(f, "k", "fpn", c.fpn.k_recurrence);
    read(f, "share_params", "fpn", c.fpn.share_params);
    read(f, "channels", "fpn", c.fpn.channels);
    read(f, "normalize_fusion", "fpn", c.fpn.normalize_fusion);
  }
  if (doc.contains("train")) {
    const json& t = doc["train"];
    check_keys(t, "train", {"base_lr", "power", "momentum", "weight_decay", "max_iter", "batch"});
    read(t, "base_lr", "train", c.train.base_lr);
    read(t, "power", "train", c.train.power);
    read(t, "momentum", "train", c.train.momentum);
    read(t, "weight_decay", "train", c.train.weight_decay);
    read(t, "max_iter", "train", c.train.max_iter);
    read(t, "batch", "train", c.train.batch);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_run_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& c) {
  json doc = {
      {"task", c.task},
      {"seed", c.seed},
      {"input_size", c.input_size},
      {"num_classes", c.num_classes},
      {"samples", c.samples},
      {"backbone", {{"channels", c.backbone.channels}, {"blocks", c.backbone.blocks}}},
      {"hgd",
       {{"n", c.hgd.n_codewords},
        {"codeword_dim", c.hgd.codeword_dim},
        {"compressed", c.hgd.compressed_channels},
        {"guidance", c.hgd.guidance_channels},
        {"transfer", c.hgd.transfer_enabled},
        {"codeword_scales", c.hgd.codeword_scales},
        {"assembly_scales", c.hgd.assembly_scales}}},
      {"fpn",
       {{"n", c.fpn.n_codewords},
        {"c", c.fpn.codeword_dim},
        {"k", c.fpn.k_recurrence},
        {"share_params", c.fpn.share_params},
        {"channels", c.fpn.channels},
        {"normalize_fusion", c.fpn.normalize_fusion}}},
      {"train",
       {{"base_lr", c.train.base_lr},
        {"power", c.train.power},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"max_iter", c.train.max_iter},
        {"batch", c.train.batch}}},
      {"precision", c.precision}};
  return doc.dump(2);
}

}  // namespace hgd
