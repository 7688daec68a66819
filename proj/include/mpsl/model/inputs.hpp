// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mpsl/model/config.hpp"
#include "mpsl/tensor.hpp"

namespace mpsl::model {

// One raw multimodal sample z = ({x_m}, y). The label never leaves the
// client; for retrieval it identifies the pair.
struct Sample {
  std::optional<std::vector<double>> image;  // H*W*C, row-major HWC
  std::optional<std::vector<double>> audio;
  std::optional<std::vector<std::size_t>> text;
  std::size_t label = 0;

  bool has(Modality m) const;
};

// Non-overlapping p x p patches of an HWC image, row-major over the patch
// grid, each flattened as (row, col, channel) -> [P, p*p*C].
Tensor patchify_image(std::span<const double> image, std::size_t height, std::size_t width, std::size_t channels,
                      std::size_t patch, DType dtype = DType::kFloat64);

// Magnitude spectrogram [bins, frames]: rectangular frames of dft_size
// samples every hop samples, |DFT| for bins 0 .. dft_size/2 - 1.
Tensor spectrogram(std::span<const double> signal, std::size_t dft_size, std::size_t hop,
                   DType dtype = DType::kFloat64);

// Raw model inputs for a batch, already patchified (this step has no
// parameters and is done once on the client).
struct InputBatch {
  std::size_t size = 0;
  std::map<Modality, Tensor> patches;  // vision/audio: [B, P, patch_dim]
  std::vector<std::size_t> text_ids;   // [B * text_len]
  std::size_t text_len = 0;
  bool has_text = false;

  bool has(Modality m) const;
};

// Patch rows for one sample and modality: [P, patch_dim].
Tensor sample_patches(const ModelConfig& c, const Sample& s, Modality m);

// Preprocesses the configured modalities of `samples`. Modalities missing
// from every sample are left out (client_forward rejects them); a modality
// present in only some samples is a data error.
InputBatch make_batch(const ModelConfig& c, std::span<const Sample* const> samples);
InputBatch make_batch(const ModelConfig& c, std::span<const Sample> samples);

std::vector<std::size_t> labels_of(std::span<const Sample* const> samples);

}  // namespace mpsl::model
