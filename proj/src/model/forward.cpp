// SPDX-License-Identifier: Apache-2.0

#include "mpsl/model/forward.hpp"

#include <cmath>

#include "mpsl/errors.hpp"
#include "mpsl/ops.hpp"

namespace mpsl::model {

namespace {

// [B, S, d] with the cls token prepended and position embeddings added.
Tensor finish_tokens(const Tokenizer& t, const Tensor& body) {
  const std::size_t b = body.dim(0), s = body.dim(1), d = body.dim(2);
  if (s + 1 > t.pos.dim(0)) {
    throw ShapeError("sequence of " + std::to_string(s + 1) + " tokens exceeds " + std::to_string(t.pos.dim(0)) +
                     " position embeddings");
  }
  const Tensor cls = ops::add_broadcast(Tensor::zeros({b, 1, d}, body.dtype()), ops::reshape(t.cls, {1, d}));
  const Tensor tokens = ops::concat({cls, body}, 1);
  const Tensor pos = s + 1 == t.pos.dim(0) ? t.pos : ops::slice(t.pos, 0, 0, s + 1);
  return ops::add_broadcast(tokens, pos);
}

Tensor attention(const Tensor& x, const EncoderBlock& blk, std::size_t heads) {
  const std::size_t d = x.dim(2);
  const std::size_t hd = d / heads;
  const Tensor qkv = ops::linear(x, blk.qkv_w, blk.qkv_b);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor q = ops::slice(qkv, 2, h * hd, hd);
    const Tensor k = ops::slice(qkv, 2, d + h * hd, hd);
    const Tensor v = ops::slice(qkv, 2, 2 * d + h * hd, hd);
    const Tensor att = ops::softmax(ops::scale(ops::bmm(q, ops::transpose(k)), scale), -1);
    outs.push_back(ops::bmm(att, v));
  }
  const Tensor merged = heads == 1 ? outs.front() : ops::concat(outs, 2);
  return ops::linear(merged, blk.out_w, blk.out_b);
}

Tensor summarize(const ModelConfig& c, const Tensor& encoded) {
  if (c.late_summary == LateSummary::kCls) return ops::slice(encoded, 1, 0, 1);
  return encoded;
}

Tensor tail_project(const Tail& tail, const Tensor& pooled) {
  return ops::linear(ops::layer_norm(pooled, tail.ln_g, tail.ln_b), tail.w, tail.b);
}

}  // namespace

Tensor tokenize_patches(const Tokenizer& t, const Tensor& patches) {
  if (!t.proj_w.defined()) throw ContractError(std::string(to_string(t.modality)) + " tokenizer has no projection");
  if (patches.rank() != 3 || patches.dim(2) != t.proj_w.dim(0)) {
    throw ShapeError("patches " + to_string(patches.shape()) + " do not match projection " +
                     to_string(t.proj_w.shape()));
  }
  return finish_tokens(t, ops::linear(patches, t.proj_w, t.proj_b));
}

Tensor tokenize_ids(const Tokenizer& t, std::span<const std::size_t> ids, std::size_t batch, std::size_t len) {
  if (!t.table.defined()) throw ContractError(std::string(to_string(t.modality)) + " tokenizer has no token table");
  if (ids.size() != batch * len) throw ShapeError("token id count does not match batch x length");
  const std::size_t d = t.table.dim(1);
  const Tensor rows = ops::embedding(t.table, ids);
  return finish_tokens(t, ops::reshape(rows, {batch, len, d}));
}

Tensor tokenize_vision(const ModelConfig& c, const Tokenizer& t, std::span<const double> image) {
  const Tensor p = patchify_image(image, c.image_size, c.image_size, c.image_channels, c.patch_size, c.dtype);
  const Tensor out = tokenize_patches(t, ops::reshape(p, {1, p.dim(0), p.dim(1)}));
  return ops::reshape(out, {out.dim(1), out.dim(2)});
}

Tensor tokenize_audio(const ModelConfig& c, const Tokenizer& t, std::span<const double> signal) {
  Sample s;
  s.audio = std::vector<double>(signal.begin(), signal.end());
  const Tensor p = sample_patches(c, s, Modality::kAudio);
  const Tensor out = tokenize_patches(t, ops::reshape(p, {1, p.dim(0), p.dim(1)}));
  return ops::reshape(out, {out.dim(1), out.dim(2)});
}

Tensor tokenize_text(const Tokenizer& t, std::span<const std::size_t> ids) {
  const Tensor out = tokenize_ids(t, ids, 1, ids.size());
  return ops::reshape(out, {out.dim(1), out.dim(2)});
}

std::size_t Activations::batch() const { return tensors.empty() ? 0 : tensors.front().dim(0); }

Activations client_forward(const ModelConfig& c, const ClientHead& head, const InputBatch& batch) {
  Activations a;
  a.fusion = c.fusion;
  a.modalities = c.modalities;
  std::vector<Tensor> per;
  for (Modality m : c.modalities) {
    if (!batch.has(m)) throw ProtocolError(std::string("input batch is missing modality ") + to_string(m));
    const Tokenizer& t = head.tokenizer(m);
    if (m == Modality::kText) {
      per.push_back(tokenize_ids(t, batch.text_ids, batch.size, batch.text_len));
    } else {
      per.push_back(tokenize_patches(t, batch.patches.at(m)));
    }
    a.segments.push_back(per.back().dim(1));
  }
  if (c.fusion == Fusion::kEarly && per.size() > 1) {
    a.tensors.push_back(ops::concat(per, 1));
  } else {
    a.tensors = std::move(per);
  }
  return a;
}

Tensor encoder_forward(const Tensor& x, const std::vector<EncoderBlock>& blocks, std::size_t heads) {
  if (blocks.empty()) return x;
  const std::size_t d = blocks.front().ln1_g.dim(0);
  if (x.rank() != 3 || x.dim(2) != d) {
    throw ShapeError("encoder input " + to_string(x.shape()) + " does not end in embed dim " + std::to_string(d));
  }
  Tensor h = x;
  for (const auto& blk : blocks) {
    h = ops::add(h, attention(ops::layer_norm(h, blk.ln1_g, blk.ln1_b), blk, heads));
    const Tensor mlp =
        ops::linear(ops::gelu(ops::linear(ops::layer_norm(h, blk.ln2_g, blk.ln2_b), blk.fc1_w, blk.fc1_b)),
                    blk.fc2_w, blk.fc2_b);
    h = ops::add(h, mlp);
  }
  return h;
}

Prediction server_predict(const ModelConfig& c, const ServerModel& server, const Activations& a) {
  if (a.fusion != c.fusion) {
    throw ProtocolError(std::string("activations use ") + to_string(a.fusion) + " fusion, server expects " +
                        to_string(c.fusion));
  }
  const std::size_t expected = c.fusion == Fusion::kEarly && c.modalities.size() > 1 ? 1 : c.modalities.size();
  if (a.tensors.size() != expected) {
    throw ProtocolError("expected " + std::to_string(expected) + " activation tensors, got " +
                        std::to_string(a.tensors.size()));
  }
  if (a.segments.size() != c.modalities.size()) {
    throw ProtocolError("activations describe " + std::to_string(a.segments.size()) + " modality segments, expected " +
                        std::to_string(c.modalities.size()));
  }
  const std::size_t bsz = a.batch();
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const Tensor& t = a.tensors[i];
    std::size_t seq = 0;
    if (expected == 1) {
      for (std::size_t n : a.segments) seq += n;
    } else {
      seq = a.segments[i];
    }
    if (t.rank() != 3 || t.dim(0) != bsz || t.dim(1) != seq || t.dim(2) != c.embed_dim) {
      throw ProtocolError("activation tensor " + std::to_string(i) + " has shape " + to_string(t.shape()) +
                          ", expected [" + std::to_string(bsz) + ", " + std::to_string(seq) + ", " +
                          std::to_string(c.embed_dim) + "]");
    }
  }

  Prediction p;
  if (c.task == Task::kClassification) {
    Tensor pooled;
    if (c.fusion == Fusion::kEarly) {
      pooled = ops::global_average_pool(encoder_forward(a.tensors.front(), server.blocks, c.heads));
    } else {
      std::vector<Tensor> summaries;
      for (const auto& t : a.tensors) summaries.push_back(summarize(c, encoder_forward(t, server.blocks, c.heads)));
      pooled = ops::global_average_pool(summaries.size() == 1 ? summaries.front() : ops::concat(summaries, 1));
    }
    p.logits = tail_project(server.tail, pooled);
    return p;
  }

  // Retrieval encodes each modality on its own; early-fused sequences are
  // split back at the modality boundaries.
  std::vector<Tensor> streams;
  if (a.tensors.size() == 1 && c.modalities.size() > 1) {
    std::size_t start = 0;
    const Tensor& all = a.tensors.front();
    for (std::size_t i = 0; i < c.modalities.size(); ++i) {
      const std::size_t len = a.segments[i];
      streams.push_back(ops::slice(all, 1, start, len));
      start += len;
    }
  } else {
    streams = a.tensors;
  }
  for (const auto& s : streams) {
    const Tensor pooled = ops::global_average_pool(summarize(c, encoder_forward(s, server.blocks, c.heads)));
    p.embeddings.push_back(ops::l2_normalize(tail_project(server.tail, pooled)));
  }
  if (p.embeddings.size() < 2) throw ContractError("retrieval needs at least two modalities");
  const Tensor sim = ops::matmul(p.embeddings[0], ops::transpose(p.embeddings[1]));
  p.logits = ops::scale_by(sim, ops::exp(server.tail.logit_scale));
  return p;
}

Prediction predict(const SplitModel& m, const InputBatch& batch) {
  return server_predict(m.config, m.server, client_forward(m.config, m.head, batch));
}

}  // namespace mpsl::model
