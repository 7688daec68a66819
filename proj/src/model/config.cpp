// SPDX-License-Identifier: Apache-2.0

#include "mpsl/model/config.hpp"

#include <algorithm>
#include <set>

#include "mpsl/errors.hpp"

namespace mpsl::model {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<const char*, E> (&table)[N], const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) options += std::string(options.empty() ? "" : ", ") + name;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "' (expected one of: " + options + ")");
}

constexpr std::pair<const char*, Modality> kModalities[] = {
    {"vision", Modality::kVision}, {"audio", Modality::kAudio}, {"text", Modality::kText}};
constexpr std::pair<const char*, Fusion> kFusions[] = {{"early", Fusion::kEarly}, {"late", Fusion::kLate}};
constexpr std::pair<const char*, Task> kTasks[] = {{"classification", Task::kClassification},
                                                   {"retrieval", Task::kRetrieval}};
constexpr std::pair<const char*, LateSummary> kSummaries[] = {{"tokens", LateSummary::kTokens},
                                                              {"cls", LateSummary::kCls}};
constexpr std::pair<const char*, Preset> kPresets[] = {
    {"Ti", Preset::kTi}, {"S", Preset::kS}, {"B", Preset::kB}, {"L", Preset::kL}, {"H", Preset::kH}};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("model config: " + msg);
}

}  // namespace

const char* to_string(Modality m) {
  switch (m) {
    case Modality::kVision: return "vision";
    case Modality::kAudio: return "audio";
    case Modality::kText: return "text";
  }
  return "?";
}
const char* to_string(Fusion f) { return f == Fusion::kEarly ? "early" : "late"; }
const char* to_string(Task t) { return t == Task::kClassification ? "classification" : "retrieval"; }
const char* to_string(LateSummary s) { return s == LateSummary::kTokens ? "tokens" : "cls"; }
const char* to_string(Preset p) {
  for (const auto& [name, value] : kPresets) {
    if (value == p) return name;
  }
  return "?";
}

Modality parse_modality(const std::string& s) { return parse_enum(s, kModalities, "modality"); }
Fusion parse_fusion(const std::string& s) { return parse_enum(s, kFusions, "fusion"); }
Task parse_task(const std::string& s) { return parse_enum(s, kTasks, "task"); }
LateSummary parse_late_summary(const std::string& s) { return parse_enum(s, kSummaries, "late_summary"); }
Preset parse_preset(const std::string& s) { return parse_enum(s, kPresets, "preset"); }

std::vector<Preset> all_presets() { return {Preset::kTi, Preset::kS, Preset::kB, Preset::kL, Preset::kH}; }

bool ModelConfig::has(Modality m) const {
  return std::find(modalities.begin(), modalities.end(), m) != modalities.end();
}

std::size_t ModelConfig::spectrogram_frames() const {
  if (audio_samples < dft_size) return 0;
  return 1 + (audio_samples - dft_size) / hop;
}

std::size_t ModelConfig::spectrogram_padded_frames() const {
  const std::size_t f = spectrogram_frames();
  return (f + patch_size - 1) / patch_size * patch_size;
}

std::size_t ModelConfig::num_patches(Modality m) const {
  switch (m) {
    case Modality::kVision: return (image_size / patch_size) * (image_size / patch_size);
    case Modality::kAudio: return (spectrogram_bins() / patch_size) * (spectrogram_padded_frames() / patch_size);
    case Modality::kText: return max_text_len;
  }
  return 0;
}

std::size_t ModelConfig::patch_dim(Modality m) const {
  switch (m) {
    case Modality::kVision: return patch_size * patch_size * image_channels;
    case Modality::kAudio: return patch_size * patch_size;
    case Modality::kText: return 0;
  }
  return 0;
}

std::size_t ModelConfig::seq_len(Modality m) const { return num_patches(m) + 1; }

std::size_t ModelConfig::seq_total() const {
  std::size_t s = 0;
  for (Modality m : modalities) s += seq_len(m);
  return s;
}

void ModelConfig::validate() const {
  require(embed_dim > 0, "embed_dim must be positive");
  require(depth > 0, "depth must be positive");
  require(heads > 0 && embed_dim % heads == 0, "heads must divide embed_dim");
  require(mlp_ratio > 0, "mlp_ratio must be positive");
  require(patch_size > 0, "patch_size must be positive");
  require(freeze_first_k <= depth, "freeze_first_k must be in [0, depth]");
  require(!modalities.empty() && modalities.size() <= 3, "between one and three modalities are supported");
  require(std::set<Modality>(modalities.begin(), modalities.end()).size() == modalities.size(),
          "modalities must be distinct");
  require(init_temperature > 0.0, "init_temperature must be positive");
  if (has(Modality::kVision)) {
    require(image_size > 0 && image_channels > 0, "image dims must be positive");
    require(image_size % patch_size == 0, "image_size must be divisible by patch_size");
  }
  if (has(Modality::kAudio)) {
    require(dft_size >= 2 && hop > 0, "dft_size >= 2 and hop > 0 required");
    require(spectrogram_bins() % patch_size == 0, "dft_size/2 must be divisible by patch_size");
    require(audio_samples >= dft_size, "audio_samples must cover one dft frame");
  }
  if (has(Modality::kText)) require(vocab_size > 0, "vocab_size must be positive");
  if (task == Task::kClassification) {
    require(num_classes >= 2, "classification needs num_classes >= 2");
  } else {
    require(modalities.size() == 2, "retrieval needs exactly two modalities");
    require(proj_dim > 0, "proj_dim must be positive");
  }
}

ModelConfig preset_config(Preset p) {
  ModelConfig c;
  switch (p) {
    case Preset::kTi: c.embed_dim = 192, c.depth = 12, c.heads = 3; break;
    case Preset::kS: c.embed_dim = 384, c.depth = 12, c.heads = 6; break;
    case Preset::kB: c.embed_dim = 768, c.depth = 12, c.heads = 12; break;
    case Preset::kL: c.embed_dim = 1024, c.depth = 24, c.heads = 16; break;
    case Preset::kH: c.embed_dim = 1280, c.depth = 32, c.heads = 16; break;
  }
  c.preset = p;
  c.patch_size = 16;
  c.image_size = 224;
  c.image_channels = 3;
  c.vocab_size = 49408;
  c.max_text_len = 77;
  c.freeze_text_table = true;
  c.audio_samples = 160000;
  c.dft_size = 512;
  c.hop = 160;
  c.num_classes = 10;
  c.proj_dim = 512;
  c.freeze_first_k = c.depth / 2;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json mods = nlohmann::json::array();
  for (Modality m : c.modalities) mods.push_back(to_string(m));
  return {
      {"embed_dim", c.embed_dim},
      {"depth", c.depth},
      {"heads", c.heads},
      {"mlp_ratio", c.mlp_ratio},
      {"patch_size", c.patch_size},
      {"vocab_size", c.vocab_size},
      {"max_text_len", c.max_text_len},
      {"image_size", c.image_size},
      {"image_channels", c.image_channels},
      {"audio_samples", c.audio_samples},
      {"dft_size", c.dft_size},
      {"hop", c.hop},
      {"modalities", mods},
      {"task", to_string(c.task)},
      {"num_classes", c.num_classes},
      {"proj_dim", c.proj_dim},
      {"freeze_first_k", c.freeze_first_k},
      {"fusion", to_string(c.fusion)},
      {"late_summary", to_string(c.late_summary)},
      {"freeze_text_table", c.freeze_text_table},
      {"init_temperature", c.init_temperature},
      {"preset", c.preset ? nlohmann::json(to_string(*c.preset)) : nlohmann::json(nullptr)},
      {"dtype", to_string(c.dtype)},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  ModelConfig c;
  if (j.contains("preset") && !j["preset"].is_null()) c = preset_config(parse_preset(j["preset"].get<std::string>()));

  auto size_field = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    const auto& v = j[key];
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(path + "." + key + ": expected a non-negative integer");
    }
    dst = v.get<std::size_t>();
  };
  auto string_field = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key)) return std::nullopt;
    if (!j[key].is_string()) throw ConfigError(path + "." + key + ": expected a string");
    return j[key].get<std::string>();
  };

  static const std::set<std::string> known = {
      "embed_dim", "depth", "heads", "mlp_ratio", "patch_size", "vocab_size", "max_text_len",
      "image_size", "image_channels", "audio_samples", "dft_size", "hop", "modalities", "task",
      "num_classes", "proj_dim", "freeze_first_k", "fusion", "late_summary", "freeze_text_table",
      "init_temperature", "preset", "dtype"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(path + "." + key + ": unknown key");
  }

  size_field("embed_dim", c.embed_dim);
  size_field("depth", c.depth);
  size_field("heads", c.heads);
  size_field("mlp_ratio", c.mlp_ratio);
  size_field("patch_size", c.patch_size);
  size_field("vocab_size", c.vocab_size);
  size_field("max_text_len", c.max_text_len);
  size_field("image_size", c.image_size);
  size_field("image_channels", c.image_channels);
  size_field("audio_samples", c.audio_samples);
  size_field("dft_size", c.dft_size);
  size_field("hop", c.hop);
  size_field("num_classes", c.num_classes);
  size_field("proj_dim", c.proj_dim);
  size_field("freeze_first_k", c.freeze_first_k);
  try {
    if (j.contains("modalities")) {
      if (!j["modalities"].is_array()) throw ConfigError(path + ".modalities: expected an array");
      c.modalities.clear();
      for (const auto& m : j["modalities"]) c.modalities.push_back(parse_modality(m.get<std::string>()));
    }
    if (auto s = string_field("task")) c.task = parse_task(*s);
    if (auto s = string_field("fusion")) c.fusion = parse_fusion(*s);
    if (auto s = string_field("late_summary")) c.late_summary = parse_late_summary(*s);
    if (auto s = string_field("dtype")) {
      if (*s == "float32") c.dtype = DType::kFloat32;
      else if (*s == "float64") c.dtype = DType::kFloat64;
      else throw ConfigError("unknown dtype '" + *s + "'");
    }
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    throw ConfigError(what.rfind(path, 0) == 0 ? what : path + ": " + what);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (j.contains("freeze_text_table")) {
    if (!j["freeze_text_table"].is_boolean()) throw ConfigError(path + ".freeze_text_table: expected a boolean");
    c.freeze_text_table = j["freeze_text_table"].get<bool>();
  }
  if (j.contains("init_temperature")) {
    if (!j["init_temperature"].is_number()) throw ConfigError(path + ".init_temperature: expected a number");
    c.init_temperature = j["init_temperature"].get<double>();
  }
  c.validate();
  return c;
}

std::uint64_t config_digest(const ModelConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mpsl::model
