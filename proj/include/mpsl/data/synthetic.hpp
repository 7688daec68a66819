// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "mpsl/model/config.hpp"
#include "mpsl/model/inputs.hpp"

namespace mpsl::data {

using model::Modality;
using model::Sample;
using model::Task;

struct SyntheticSpec {
  Task task = Task::kClassification;
  std::vector<Modality> modalities{Modality::kVision, Modality::kText};
  std::size_t num_classes = 4;        // classification
  std::size_t num_pairs = 400;        // retrieval
  std::size_t samples_per_class = 100;
  double signal = 1.0;
  double noise = 0.5;
  std::uint64_t seed = 0;
  // Raw input geometry; must agree with the model config.
  std::size_t image_size = 16;
  std::size_t image_channels = 1;
  std::size_t audio_samples = 512;
  std::size_t text_len = 16;
  std::size_t vocab_size = 64;

  void validate() const;
  // Copies geometry from a model config.
  void match(const model::ModelConfig& c);
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, const std::string& path = "data");

struct Dataset {
  SyntheticSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::size_t num_labels = 0;  // classes, or pairs for retrieval
};

// Classification: every class has a per-modality prototype (vision: a
// spatial pattern, audio: a mix of three tones, text: a token sequence drawn
// from a class-specific slice of the vocabulary); samples add Gaussian noise
// (vision, audio) or replace tokens with probability `noise` (text).
// Retrieval: each pair has a discrete latent code shared by a vision pattern
// (a signed mix of fixed basis images) and a text sequence (one quantized
// code entry per position); label = pair id.
// Split 80/20 per class (per pair set for retrieval).
Dataset generate(const SyntheticSpec& spec);

std::vector<std::size_t> labels(const std::vector<Sample>& samples);

// Directory layout: manifest.json plus <split>_<modality>.tensor and
// <split>_labels.tensor in the tensor serialization format.
void export_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace mpsl::data
