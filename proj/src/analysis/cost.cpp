// SPDX-License-Identifier: Apache-2.0

#include "mpsl/analysis/cost.hpp"

#include <cstdio>

#include "mpsl/errors.hpp"
#include "mpsl/model/model.hpp"
#include "mpsl/serialize.hpp"
#include "mpsl/transport/frame.hpp"

namespace mpsl::analysis {

using model::Modality;

const char* to_string(CostMethod m) {
  switch (m) {
    case CostMethod::kMpsl: return "mpsl";
    case CostMethod::kFedAvg: return "fedavg";
    case CostMethod::kFedClip: return "fedclip";
    case CostMethod::kCentralized: return "centralized";
  }
  return "?";
}

CostMethod parse_cost_method(const std::string& s) {
  for (auto m : {CostMethod::kMpsl, CostMethod::kFedAvg, CostMethod::kFedClip, CostMethod::kCentralized}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected mpsl, fedavg, fedclip or centralized)");
}

double tokenizer_flops(const model::ModelConfig& c) {
  double f = 0.0;
  for (Modality m : c.modalities) {
    // Text is a table lookup.
    f += 2.0 * static_cast<double>(c.num_patches(m) * c.patch_dim(m) * c.embed_dim);
  }
  return f;
}

double block_flops(const model::ModelConfig& c, std::size_t seq) {
  const double s = static_cast<double>(seq);
  const double d = static_cast<double>(c.embed_dim);
  const double attention = 8.0 * s * d * d + 4.0 * s * s * d;
  const double mlp = 4.0 * static_cast<double>(c.mlp_ratio) * s * d * d;
  return attention + mlp;
}

namespace {

// Sequences the encoder sees per input.
std::vector<std::size_t> encoder_sequences(const model::ModelConfig& c) {
  if (c.fusion == model::Fusion::kEarly && c.task == model::Task::kClassification) return {c.seq_total()};
  std::vector<std::size_t> out;
  for (Modality m : c.modalities) out.push_back(c.seq_len(m));
  return out;
}

double one_block(const model::ModelConfig& c) {
  double f = 0.0;
  for (auto s : encoder_sequences(c)) f += block_flops(c, s);
  return f;
}

double adapter_flops(const model::ModelConfig& c) {
  const double p = static_cast<double>(c.proj_dim);
  return 2.0 * 2.0 * p * p;
}

}  // namespace

double encoder_flops(const model::ModelConfig& c) { return static_cast<double>(c.depth) * one_block(c); }

double tail_flops(const model::ModelConfig& c) {
  const double d = static_cast<double>(c.embed_dim);
  if (c.task == model::Task::kRetrieval) {
    return 2.0 * static_cast<double>(c.modalities.size()) * d * static_cast<double>(c.proj_dim);
  }
  // Late fusion with token summaries still pools to one d-vector per input.
  return 2.0 * d * static_cast<double>(c.num_classes);
}

double flops_model(const model::ModelConfig& c, CostRole role, CostMethod method, bool freeze_tokenizers) {
  c.validate();
  const double tok = tokenizer_flops(c);
  const double block = one_block(c);
  const double tail = tail_flops(c);
  const std::size_t frozen = std::min(c.freeze_first_k, c.depth);

  // Backward over the gradient path: everything after the first trainable
  // segment. The tail always trains.
  auto backward_server_part = [&](bool head_trains) {
    const std::size_t from = head_trains ? 0 : frozen;
    return 2.0 * (static_cast<double>(c.depth - from) * block + tail);
  };
  const bool head_trains = !freeze_tokenizers;
  const double forward_server = static_cast<double>(c.depth) * block + tail;

  switch (method) {
    case CostMethod::kMpsl:
      if (role == CostRole::kClient) return tok + (head_trains ? 2.0 * tok : 0.0);
      return forward_server + backward_server_part(head_trains);
    case CostMethod::kFedAvg:
    case CostMethod::kCentralized:
      if (role == CostRole::kServer) return 0.0;
      return tok + forward_server + (head_trains ? 2.0 * tok : 0.0) + backward_server_part(head_trains);
    case CostMethod::kFedClip:
      if (role == CostRole::kServer) return 0.0;
      return tok + forward_server + 3.0 * adapter_flops(c);
  }
  return 0.0;
}

std::size_t adapter_params(const model::ModelConfig& c) { return 2 * (c.proj_dim * c.proj_dim + c.proj_dim); }

std::size_t client_params(const model::ModelConfig& c, CostMethod method) {
  switch (method) {
    case CostMethod::kMpsl: return model::count_params(c, model::Role::kHead, true);
    case CostMethod::kFedAvg:
    case CostMethod::kCentralized: return model::count_params(c, std::nullopt, true);
    case CostMethod::kFedClip: return adapter_params(c);
  }
  return 0;
}

RoundBytes round_bytes(const model::ModelConfig& c, CostMethod method, std::size_t b) {
  using transport::kHeaderSize;
  const DType wire = c.dtype;
  RoundBytes r;
  if (method == CostMethod::kMpsl) {
    if (b == 0) throw ConfigError("batch per client must be positive");
    std::uint64_t acts = 0;
    if (c.fusion == model::Fusion::kEarly && c.modalities.size() > 1) {
      acts = serialized_size({b, c.seq_total(), c.embed_dim}, wire);
    } else {
      for (Modality m : c.modalities) acts += serialized_size({b, c.seq_len(m), c.embed_dim}, wire);
    }
    const std::size_t cols = c.task == model::Task::kRetrieval ? b : c.num_classes;
    const std::uint64_t pred = serialized_size({b, cols}, wire);
    r.up = (kHeaderSize + acts) + (kHeaderSize + 4 + 4 + pred);
    r.down = (kHeaderSize + pred) + (kHeaderSize + acts);
    return r;
  }
  std::uint64_t params = 0;
  if (method == CostMethod::kFedClip) {
    const std::size_t p = c.proj_dim;
    params = 2 * (serialized_size({p, p}, wire) + serialized_size({p}, wire));
  } else if (method == CostMethod::kFedAvg) {
    for (const auto& s : model::parameter_specs(c)) {
      if (s.trainable) params += serialized_size(s.shape, wire);
    }
  } else {
    return r;  // centralized training moves nothing
  }
  r.down = kHeaderSize + params;
  r.up = kHeaderSize + 4 + params;
  return r;
}

double rounds_per_epoch(CostMethod method, const CommSetting& s) {
  if (method == CostMethod::kMpsl) {
    if (s.batch_per_client == 0) throw ConfigError("batch per client must be positive");
    return static_cast<double>(s.samples_per_client / s.batch_per_client);
  }
  if (s.local_epochs == 0) throw ConfigError("local_epochs must be >= 1");
  return 1.0 / static_cast<double>(s.local_epochs);
}

CommCost comm_model(const model::ModelConfig& c, CostMethod method, const CommSetting& s) {
  c.validate();
  CommCost out;
  out.per_round = round_bytes(c, method, s.batch_per_client);
  const double rpe = rounds_per_epoch(method, s);
  out.up_mb_per_epoch = static_cast<double>(out.per_round.up) * rpe / 1e6;
  out.down_mb_per_epoch = static_cast<double>(out.per_round.down) * rpe / 1e6;
  return out;
}

CostReport cost_report(const model::ModelConfig& c, const std::string& preset, CostMethod method,
                       const CommSetting& s) {
  CostReport r;
  r.method = method;
  r.preset = preset;
  r.client_params = client_params(c, method);
  r.client_gflops = flops_model(c, CostRole::kClient, method) / 1e9;
  r.server_gflops = flops_model(c, CostRole::kServer, method) / 1e9;
  const CommCost comm = comm_model(c, method, s);
  r.up_mb_per_epoch = comm.up_mb_per_epoch;
  r.down_mb_per_epoch = comm.down_mb_per_epoch;
  return r;
}

std::string cost_csv(const std::vector<CostReport>& rows) {
  std::string out = "method,preset,client_params,client_gflops,server_gflops,up_mb_per_epoch,down_mb_per_epoch\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.9g,%.9g,%.9g,%.9g\n", to_string(r.method), r.preset.c_str(),
                  r.client_params, r.client_gflops, r.server_gflops, r.up_mb_per_epoch, r.down_mb_per_epoch);
    out += buf;
  }
  return out;
}

void write_cost_csv(const std::vector<CostReport>& rows, const std::filesystem::path& path) {
  const std::string s = cost_csv(rows);
  write_file(path, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

CostReport average(const std::vector<CostReport>& rows) {
  if (rows.empty()) throw MetricError("cannot average zero cost rows");
  CostReport out = rows.front();
  out.preset = "avg";
  double params = 0.0;
  out.client_gflops = out.server_gflops = out.up_mb_per_epoch = out.down_mb_per_epoch = 0.0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    params += static_cast<double>(r.client_params) / n;
    out.client_gflops += r.client_gflops / n;
    out.server_gflops += r.server_gflops / n;
    out.up_mb_per_epoch += r.up_mb_per_epoch / n;
    out.down_mb_per_epoch += r.down_mb_per_epoch / n;
  }
  out.client_params = static_cast<std::size_t>(params + 0.5);
  return out;
}

}  // namespace mpsl::analysis
