#include "spectralseg/checkpoint.hpp"

#include <cstring>
#include <map>
#include <fstream>
#include <stdexcept>

namespace spectralseg {

namespace {
constexpr char kMagic[] = "SSEGCKPT1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;
}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"variant", to_string(cfg.variant)},
                        {"num_classes", cfg.num_classes},
                        {"depth", cfg.depth},
                        {"base_width", cfg.base_width},
                        {"alpha", cfg.alpha},
                        {"filter_mode", to_string(cfg.filter.mode)},
                        {"filter_bound", cfg.filter.bound},
                        {"input_h", cfg.input_h},
                        {"input_w", cfg.input_w}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.depth = j.value("depth", 4);
  cfg.base_width = j.at("base_width").get<int>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.filter.mode = filter_mode_from_string(j.at("filter_mode").get<std::string>());
  cfg.filter.bound = j.at("filter_bound").get<double>();
  cfg.input_h = j.value("input_h", 224);
  cfg.input_w = j.value("input_w", 224);
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& path, SegmentationModel& model) {
  auto params = model.parameters();
  auto bufs = model.buffers();

  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const Tensor& t) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
  };
  for (const auto& p : params) add_entry(p.name, *p.value);
  for (const auto& b : bufs) add_entry(b.name, *b.value);

  nlohmann::json header{{"format", "spectralseg-checkpoint"},
                        {"version", 1},
                        {"config", model_config_to_json(model.config())},
                        {"tensors", dir}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
  out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.value->data()),
              static_cast<std::streamsize>(p.value->numel() * sizeof(double)));
  }
  for (const auto& b : bufs) {
    out.write(reinterpret_cast<const char*>(b.value->data()),
              static_cast<std::streamsize>(b.value->numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

SegmentationModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[kMagicLen];
  in.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw std::runtime_error("not a spectralseg checkpoint: " + path);
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);

  SegmentationModel model(model_config_from_json(header.at("config")));
  auto params = model.parameters();
  auto bufs = model.buffers();
  std::map<std::string, Tensor*> by_name;
  for (auto& p : params) by_name[p.name] = p.value;
  for (auto& b : bufs) by_name[b.name] = b.value;

  const std::streampos payload_start = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint tensor '" + name + "' has no slot in the model");
    Tensor* t = it->second;
    const auto count = entry.at("count").get<std::int64_t>();
    if (count != t->numel()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' size mismatch (" + std::to_string(count) + " vs " +
                               std::to_string(t->numel()) + ")");
    }
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint payload at tensor '" + name + "'");
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw std::runtime_error("checkpoint missing tensor '" + by_name.begin()->first + "'");
  }
  return model;
}

}  // namespace spectralseg
