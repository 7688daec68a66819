// SPDX-License-Identifier: Apache-2.0

#include "mpsl/model/inputs.hpp"

#include <cmath>
#include <numbers>

#include "mpsl/errors.hpp"

namespace mpsl::model {

bool Sample::has(Modality m) const {
  switch (m) {
    case Modality::kVision: return image.has_value();
    case Modality::kAudio: return audio.has_value();
    case Modality::kText: return text.has_value();
  }
  return false;
}

bool InputBatch::has(Modality m) const {
  if (m == Modality::kText) return has_text;
  return patches.count(m) != 0;
}

Tensor patchify_image(std::span<const double> image, std::size_t height, std::size_t width, std::size_t channels,
                      std::size_t patch, DType dtype) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  if (image.size() != height * width * channels) {
    throw ShapeError("image has " + std::to_string(image.size()) + " values, expected " +
                     std::to_string(height * width * channels));
  }
  const std::size_t gh = height / patch, gw = width / patch;
  const std::size_t pd = patch * patch * channels;
  std::vector<double> out(gh * gw * pd);
  std::size_t o = 0;
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      for (std::size_t r = 0; r < patch; ++r) {
        for (std::size_t col = 0; col < patch; ++col) {
          const std::size_t y = py * patch + r, x = px * patch + col;
          for (std::size_t ch = 0; ch < channels; ++ch) out[o++] = image[(y * width + x) * channels + ch];
        }
      }
    }
  }
  return Tensor::from_data({gh * gw, pd}, std::move(out), dtype);
}

Tensor spectrogram(std::span<const double> signal, std::size_t dft_size, std::size_t hop, DType dtype) {
  if (dft_size == 0 || hop == 0) throw ConfigError("spectrogram: dft_size and hop must be positive");
  if (signal.size() < dft_size) {
    throw DataError("audio signal of " + std::to_string(signal.size()) + " samples is shorter than one frame (" +
                    std::to_string(dft_size) + ")");
  }
  const std::size_t frames = 1 + (signal.size() - dft_size) / hop;
  const std::size_t bins = dft_size / 2;
  std::vector<double> cosv(dft_size), sinv(dft_size);
  for (std::size_t i = 0; i < dft_size; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(dft_size);
    cosv[i] = std::cos(a);
    sinv[i] = std::sin(a);
  }
  std::vector<double> out(bins * frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* x = signal.data() + f * hop;
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t n = 0; n < dft_size; ++n) {
        const std::size_t idx = (k * n) % dft_size;
        re += x[n] * cosv[idx];
        im -= x[n] * sinv[idx];
      }
      out[k * frames + f] = std::hypot(re, im);
    }
  }
  return Tensor::from_data({bins, frames}, std::move(out), dtype);
}

Tensor sample_patches(const ModelConfig& c, const Sample& s, Modality m) {
  switch (m) {
    case Modality::kVision:
      if (!s.image) throw ProtocolError("sample has no vision input");
      return patchify_image(*s.image, c.image_size, c.image_size, c.image_channels, c.patch_size, c.dtype);
    case Modality::kAudio: {
      if (!s.audio) throw ProtocolError("sample has no audio input");
      const Tensor spec = spectrogram(*s.audio, c.dft_size, c.hop, DType::kFloat64);
      const std::size_t bins = spec.dim(0), frames = spec.dim(1);
      const std::size_t padded = (frames + c.patch_size - 1) / c.patch_size * c.patch_size;
      std::vector<double> img(bins * padded, 0.0);
      for (std::size_t b = 0; b < bins; ++b) {
        for (std::size_t f = 0; f < frames; ++f) img[b * padded + f] = spec.data()[b * frames + f];
      }
      return patchify_image(img, bins, padded, 1, c.patch_size, c.dtype);
    }
    case Modality::kText:
      throw ContractError("text has no patch representation");
  }
  return {};
}

InputBatch make_batch(const ModelConfig& c, std::span<const Sample* const> samples) {
  InputBatch batch;
  batch.size = samples.size();
  if (samples.empty()) return batch;
  for (Modality m : c.modalities) {
    std::size_t present = 0;
    for (const Sample* s : samples) present += s->has(m) ? 1 : 0;
    if (present == 0) continue;
    if (present != samples.size()) {
      throw DataError(std::string("modality ") + to_string(m) + " present in only " + std::to_string(present) +
                      " of " + std::to_string(samples.size()) + " samples");
    }
    if (m == Modality::kText) {
      batch.has_text = true;
      batch.text_len = samples.front()->text->size();
      if (batch.text_len > c.max_text_len) {
        throw DataError("text length " + std::to_string(batch.text_len) + " exceeds max_text_len " +
                        std::to_string(c.max_text_len));
      }
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& t = *samples[i]->text;
        if (t.size() != batch.text_len) {
          throw DataError("text lengths differ within batch (sample " + std::to_string(i) + ")");
        }
        batch.text_ids.insert(batch.text_ids.end(), t.begin(), t.end());
      }
      continue;
    }
    std::vector<double> all;
    Shape shape;
    for (const Sample* s : samples) {
      const Tensor p = sample_patches(c, *s, m);
      shape = p.shape();
      all.insert(all.end(), p.data().begin(), p.data().end());
    }
    batch.patches.emplace(m, Tensor::from_data({samples.size(), shape[0], shape[1]}, std::move(all), c.dtype));
  }
  return batch;
}

InputBatch make_batch(const ModelConfig& c, std::span<const Sample> samples) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(c, ptrs);
}

std::vector<std::size_t> labels_of(std::span<const Sample* const> samples) {
  std::vector<std::size_t> out;
  for (const Sample* s : samples) out.push_back(s->label);
  return out;
}

}  // namespace mpsl::model
