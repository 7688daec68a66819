// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsl/tensor.hpp"

namespace mpsl::model {

using mpsl::to_string;

enum class Modality : std::uint8_t { kVision = 0, kAudio = 1, kText = 2 };
enum class Fusion : std::uint8_t { kEarly, kLate };
enum class Task : std::uint8_t { kClassification, kRetrieval };
// What each modality contributes to the joint vector under late fusion:
// its whole encoded sequence, or only its cls token.
enum class LateSummary : std::uint8_t { kTokens, kCls };
enum class Preset : std::uint8_t { kTi, kS, kB, kL, kH };

const char* to_string(Modality m);
const char* to_string(Fusion f);
const char* to_string(Task t);
const char* to_string(LateSummary s);
const char* to_string(Preset p);
Modality parse_modality(const std::string& s);
Fusion parse_fusion(const std::string& s);
Task parse_task(const std::string& s);
LateSummary parse_late_summary(const std::string& s);
Preset parse_preset(const std::string& s);
std::vector<Preset> all_presets();

/// Architecture of the split multimodal transformer.
struct ModelConfig {
  std::size_t embed_dim = 16;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t patch_size = 4;
  std::size_t vocab_size = 64;
  std::size_t max_text_len = 16;
  std::size_t image_size = 16;
  std::size_t image_channels = 1;
  std::size_t audio_samples = 512;
  std::size_t dft_size = 64;
  std::size_t hop = 32;
  std::vector<Modality> modalities{Modality::kVision, Modality::kText};
  Task task = Task::kClassification;
  std::size_t num_classes = 4;
  std::size_t proj_dim = 16;
  std::size_t freeze_first_k = 0;
  Fusion fusion = Fusion::kEarly;
  LateSummary late_summary = LateSummary::kTokens;
  // Token table treated as a pretrained, frozen lookup; only cls and
  // position embeddings of the text tokenizer train.
  bool freeze_text_table = false;
  double init_temperature = 0.07;
  std::optional<Preset> preset;
  DType dtype = DType::kFloat32;

  void validate() const;

  std::size_t head_dim() const { return embed_dim / heads; }
  bool has(Modality m) const;
  // Token count (including cls) a modality contributes to the sequence.
  std::size_t seq_len(Modality m) const;
  std::size_t seq_total() const;
  std::size_t patch_dim(Modality m) const;
  std::size_t num_patches(Modality m) const;
  // Spectrogram geometry: rows are frequency bins, columns time frames
  // (zero-padded up to a multiple of the patch size).
  std::size_t spectrogram_bins() const { return dft_size / 2; }
  std::size_t spectrogram_frames() const;
  std::size_t spectrogram_padded_frames() const;
  std::size_t output_dim() const { return task == Task::kClassification ? num_classes : proj_dim; }
};

// Shape of the standard ViT encoders (patch 16, 224x224 RGB image,
// 77-token text with a frozen 49408-entry lookup), fine-tuning the last
// half of the blocks.
ModelConfig preset_config(Preset p);

nlohmann::json to_json(const ModelConfig& c);
// Unknown keys are rejected; missing keys keep defaults.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");
std::uint64_t config_digest(const ModelConfig& c);

}  // namespace mpsl::model
