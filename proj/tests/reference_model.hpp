// SPDX-License-Identifier: Apache-2.0
//
// Straight-loop reference forward for one sample, written against raw
// parameter values only. Used as an oracle for the graph-based model.

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "mpsl/model/inputs.hpp"
#include "mpsl/model/model.hpp"

namespace mpsl::testing {

using Mat = std::vector<std::vector<double>>;  // rows x cols

inline double at(const Tensor& t, std::size_t i, std::size_t j) { return t.data()[i * t.dim(1) + j]; }

inline std::vector<double> ref_layer_norm(const std::vector<double>& x, const Tensor& g, const Tensor& b) {
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g.data()[i] + b.data()[i];
  return out;
}

inline std::vector<double> ref_affine(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  std::vector<double> out(w.dim(1), 0.0);
  for (std::size_t j = 0; j < w.dim(1); ++j) {
    double s = b.data()[j];
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * at(w, k, j);
    out[j] = s;
  }
  return out;
}

inline double ref_gelu(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Mat ref_block(const Mat& x, const model::EncoderBlock& blk, std::size_t heads) {
  const std::size_t s = x.size(), d = x[0].size(), hd = d / heads;
  Mat qkv(s);
  for (std::size_t i = 0; i < s; ++i) qkv[i] = ref_affine(ref_layer_norm(x[i], blk.ln1_g, blk.ln1_b), blk.qkv_w, blk.qkv_b);
  Mat merged(s, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> score(s);
      double mx = -1e300;
      for (std::size_t j = 0; j < s; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < hd; ++k) dot += qkv[i][h * hd + k] * qkv[j][d + h * hd + k];
        score[j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, score[j]);
      }
      double z = 0.0;
      for (auto& v : score) z += (v = std::exp(v - mx));
      for (std::size_t j = 0; j < s; ++j) {
        for (std::size_t k = 0; k < hd; ++k) merged[i][h * hd + k] += score[j] / z * qkv[j][2 * d + h * hd + k];
      }
    }
  }
  Mat out(s);
  for (std::size_t i = 0; i < s; ++i) {
    const auto att = ref_affine(merged[i], blk.out_w, blk.out_b);
    std::vector<double> h1(d);
    for (std::size_t k = 0; k < d; ++k) h1[k] = x[i][k] + att[k];
    auto hidden = ref_affine(ref_layer_norm(h1, blk.ln2_g, blk.ln2_b), blk.fc1_w, blk.fc1_b);
    for (auto& v : hidden) v = ref_gelu(v);
    const auto mlp = ref_affine(hidden, blk.fc2_w, blk.fc2_b);
    out[i].resize(d);
    for (std::size_t k = 0; k < d; ++k) out[i][k] = h1[k] + mlp[k];
  }
  return out;
}

inline Mat ref_encoder(Mat x, const std::vector<model::EncoderBlock>& blocks, std::size_t heads) {
  for (const auto& b : blocks) x = ref_block(x, b, heads);
  return x;
}

// Tokens [cls; rows] + pos, from a [P, d] body.
inline Mat ref_finish(const model::Tokenizer& t, const Mat& body) {
  const std::size_t d = t.cls.numel();
  Mat out;
  out.push_back(std::vector<double>(t.cls.data().begin(), t.cls.data().end()));
  for (const auto& r : body) out.push_back(r);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) out[i][k] += at(t.pos, i, k);
  }
  return out;
}

inline Mat ref_tokenize_image(const model::ModelConfig& c, const model::Tokenizer& t, const std::vector<double>& img) {
  const std::size_t p = c.patch_size, n = c.image_size, ch = c.image_channels, g = n / p;
  Mat body;
  for (std::size_t py = 0; py < g; ++py) {
    for (std::size_t px = 0; px < g; ++px) {
      std::vector<double> flat;
      for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t col = 0; col < p; ++col) {
          for (std::size_t k = 0; k < ch; ++k) flat.push_back(img[((py * p + r) * n + px * p + col) * ch + k]);
        }
      }
      body.push_back(ref_affine(flat, t.proj_w, t.proj_b));
    }
  }
  return ref_finish(t, body);
}

inline Mat ref_tokenize_text(const model::Tokenizer& t, const std::vector<std::size_t>& ids) {
  Mat body;
  for (std::size_t id : ids) {
    std::vector<double> row(t.table.dim(1));
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = at(t.table, id, k);
    body.push_back(row);
  }
  return ref_finish(t, body);
}

// Early-fusion classification logits for a vision/text sample.
inline std::vector<double> ref_logits(const model::SplitModel& m, const model::Sample& s) {
  const auto& c = m.config;
  Mat tokens;
  for (auto mod : c.modalities) {
    Mat part = mod == model::Modality::kText ? ref_tokenize_text(m.head.tokenizer(mod), *s.text)
                                             : ref_tokenize_image(c, m.head.tokenizer(mod), *s.image);
    tokens.insert(tokens.end(), part.begin(), part.end());
  }
  const Mat enc = ref_encoder(tokens, m.server.blocks, c.heads);
  std::vector<double> pooled(c.embed_dim, 0.0);
  for (const auto& r : enc) {
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += r[k] / static_cast<double>(enc.size());
  }
  return ref_affine(ref_layer_norm(pooled, m.server.tail.ln_g, m.server.tail.ln_b), m.server.tail.w, m.server.tail.b);
}

}  // namespace mpsl::testing
