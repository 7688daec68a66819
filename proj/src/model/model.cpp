// SPDX-License-Identifier: Apache-2.0

#include "mpsl/model/model.hpp"

#include <cmath>
#include <random>

#include "mpsl/errors.hpp"

namespace mpsl::model {

namespace {

std::string head_prefix(Modality m) { return std::string("head.") + to_string(m) + "."; }
std::string block_prefix(std::size_t i) { return "body." + std::to_string(i) + "."; }

// Visits every parameter slot of a model in canonical (spec) order.
template <typename Head, typename Server, typename Fn>
void visit(Head& head, Server& server, Fn&& fn) {
  for (auto& t : head.tokenizers) {
    const std::string p = head_prefix(t.modality);
    if (t.modality == Modality::kText) {
      fn(p + "table", t.table);
    } else {
      fn(p + "proj_w", t.proj_w);
      fn(p + "proj_b", t.proj_b);
    }
    fn(p + "cls", t.cls);
    fn(p + "pos", t.pos);
  }
  for (std::size_t i = 0; i < server.blocks.size(); ++i) {
    auto& b = server.blocks[i];
    const std::string p = block_prefix(i);
    fn(p + "ln1_g", b.ln1_g);
    fn(p + "ln1_b", b.ln1_b);
    fn(p + "qkv_w", b.qkv_w);
    fn(p + "qkv_b", b.qkv_b);
    fn(p + "out_w", b.out_w);
    fn(p + "out_b", b.out_b);
    fn(p + "ln2_g", b.ln2_g);
    fn(p + "ln2_b", b.ln2_b);
    fn(p + "fc1_w", b.fc1_w);
    fn(p + "fc1_b", b.fc1_b);
    fn(p + "fc2_w", b.fc2_w);
    fn(p + "fc2_b", b.fc2_b);
  }
  fn(std::string("tail.ln_g"), server.tail.ln_g);
  fn(std::string("tail.ln_b"), server.tail.ln_b);
  fn(std::string("tail.w"), server.tail.w);
  fn(std::string("tail.b"), server.tail.b);
  if (server.tail.logit_scale.defined()) fn(std::string("tail.logit_scale"), server.tail.logit_scale);
}

struct NoServer {
  std::vector<EncoderBlock> blocks;
  Tail tail;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

const char* to_string(Role r) {
  switch (r) {
    case Role::kHead: return "head";
    case Role::kBody: return "body";
    case Role::kTail: return "tail";
  }
  return "?";
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim;
  std::vector<ParamSpec> specs;
  for (Modality m : c.modalities) {
    const std::string p = head_prefix(m);
    if (m == Modality::kText) {
      specs.push_back({p + "table", {c.vocab_size, d}, Role::kHead, !c.freeze_text_table});
    } else {
      specs.push_back({p + "proj_w", {c.patch_dim(m), d}, Role::kHead, true});
      specs.push_back({p + "proj_b", {d}, Role::kHead, true});
    }
    specs.push_back({p + "cls", {d}, Role::kHead, true});
    specs.push_back({p + "pos", {c.seq_len(m), d}, Role::kHead, true});
  }
  const std::size_t hidden = c.mlp_ratio * d;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const std::string p = block_prefix(i);
    const bool tr = i >= c.freeze_first_k;
    specs.push_back({p + "ln1_g", {d}, Role::kBody, tr});
    specs.push_back({p + "ln1_b", {d}, Role::kBody, tr});
    specs.push_back({p + "qkv_w", {d, 3 * d}, Role::kBody, tr});
    specs.push_back({p + "qkv_b", {3 * d}, Role::kBody, tr});
    specs.push_back({p + "out_w", {d, d}, Role::kBody, tr});
    specs.push_back({p + "out_b", {d}, Role::kBody, tr});
    specs.push_back({p + "ln2_g", {d}, Role::kBody, tr});
    specs.push_back({p + "ln2_b", {d}, Role::kBody, tr});
    specs.push_back({p + "fc1_w", {d, hidden}, Role::kBody, tr});
    specs.push_back({p + "fc1_b", {hidden}, Role::kBody, tr});
    specs.push_back({p + "fc2_w", {hidden, d}, Role::kBody, tr});
    specs.push_back({p + "fc2_b", {d}, Role::kBody, tr});
  }
  specs.push_back({"tail.ln_g", {d}, Role::kTail, true});
  specs.push_back({"tail.ln_b", {d}, Role::kTail, true});
  specs.push_back({"tail.w", {d, c.output_dim()}, Role::kTail, true});
  specs.push_back({"tail.b", {c.output_dim()}, Role::kTail, true});
  if (c.task == Task::kRetrieval) specs.push_back({"tail.logit_scale", {}, Role::kTail, true});
  return specs;
}

std::size_t count_params(const ModelConfig& c, std::optional<Role> role, bool trainable_only) {
  std::size_t n = 0;
  for (const auto& s : parameter_specs(c)) {
    if (role && s.role != *role) continue;
    if (trainable_only && !s.trainable) continue;
    n += numel(s.shape);
  }
  return n;
}

const Tokenizer& ClientHead::tokenizer(Modality m) const {
  for (const auto& t : tokenizers) {
    if (t.modality == m) return t;
  }
  throw ContractError(std::string("head has no tokenizer for modality ") + to_string(m));
}

std::vector<NamedTensor> ClientHead::named() const {
  std::vector<NamedTensor> out;
  NoServer none;
  visit(*this, none, [&](const std::string& n, const Tensor& t) {
    if (n.rfind("head.", 0) == 0) out.emplace_back(n, t);
  });
  return out;
}

ClientHead ClientHead::clone() const {
  ClientHead h = *this;
  NoServer none;
  visit(h, none, [](const std::string& n, Tensor& t) {
    if (n.rfind("head.", 0) == 0) t = t.clone();
  });
  return h;
}

std::vector<NamedTensor> ServerModel::named() const {
  std::vector<NamedTensor> out;
  const ClientHead empty;
  visit(empty, *this, [&](const std::string& n, const Tensor& t) { out.emplace_back(n, t); });
  return out;
}

ServerModel ServerModel::clone() const {
  ServerModel s = *this;
  ClientHead empty;
  visit(empty, s, [](const std::string&, Tensor& t) { t = t.clone(); });
  return s;
}

std::vector<NamedTensor> SplitModel::named() const {
  std::vector<NamedTensor> out;
  visit(head, server, [&](const std::string& n, const Tensor& t) { out.emplace_back(n, t); });
  return out;
}

SplitModel SplitModel::clone() const { return {config, head.clone(), server.clone()}; }

SplitModel assemble(const ModelConfig& c, const std::map<std::string, Tensor>& params) {
  SplitModel m;
  m.config = c;
  for (Modality mod : c.modalities) m.head.tokenizers.push_back(Tokenizer{mod, {}, {}, {}, {}, {}});
  m.server.blocks.resize(c.depth);
  if (c.task == Task::kRetrieval) m.server.tail.logit_scale = Tensor::scalar(0.0, c.dtype);
  std::map<std::string, const ParamSpec*> by_name;
  const auto specs = parameter_specs(c);
  for (const auto& s : specs) by_name[s.name] = &s;
  visit(m.head, m.server, [&](const std::string& n, Tensor& slot) {
    auto it = params.find(n);
    if (it == params.end()) throw ContractError("missing parameter '" + n + "'");
    const ParamSpec& spec = *by_name.at(n);
    if (it->second.shape() != spec.shape) {
      throw ContractError("parameter '" + n + "' has shape " + to_string(it->second.shape()) + ", expected " +
                          to_string(spec.shape));
    }
    slot = it->second;
    slot.set_requires_grad(spec.trainable);
  });
  return m;
}

SplitModel init_model(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  std::map<std::string, Tensor> params;
  for (const auto& s : parameter_specs(c)) {
    std::vector<double> v(numel(s.shape), 0.0);
    if (ends_with(s.name, "_g")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (s.name == "tail.logit_scale") {
      v[0] = std::log(1.0 / c.init_temperature);
    } else if (!ends_with(s.name, "_b")) {
      for (auto& x : v) {
        do {
          x = normal(rng);
        } while (std::abs(x) > 0.04);
      }
    }
    params.emplace(s.name, Tensor::from_data(s.shape, std::move(v), c.dtype));
  }
  return assemble(c, params);
}

std::vector<NamedTensor> trainable(const std::vector<NamedTensor>& params) {
  std::vector<NamedTensor> out;
  for (const auto& p : params) {
    if (p.second.requires_grad()) out.push_back(p);
  }
  return out;
}

void copy_values(const std::vector<NamedTensor>& src, const std::vector<NamedTensor>& dst) {
  if (src.size() != dst.size()) throw ContractError("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape()) {
      throw ContractError("copy_values: structural mismatch at '" + src[i].first + "'");
    }
    Tensor d = dst[i].second;
    auto out = d.data_mut();
    auto in = src[i].second.data();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

std::vector<Tensor> weighted_average(const std::vector<std::vector<NamedTensor>>& sets,
                                     const std::vector<double>& weights) {
  if (sets.empty() || sets.size() != weights.size()) {
    throw ContractError("weighted_average: need one weight per parameter set");
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("weighted_average: weights must sum to 1");
  const auto& ref = sets.front();
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (sets[s].size() != ref.size()) throw ContractError("weighted_average: structural mismatch (parameter count)");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (sets[s][i].first != ref[i].first || sets[s][i].second.shape() != ref[i].second.shape()) {
        throw ContractError("weighted_average: structural mismatch at '" + sets[s][i].first + "'");
      }
    }
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    // Accumulated as offsets from the first set, so identical sets average
    // to themselves exactly.
    const auto base = ref[i].second.data();
    std::vector<double> acc(base.begin(), base.end());
    for (std::size_t s = 1; s < sets.size(); ++s) {
      const auto v = sets[s][i].second.data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += weights[s] * (v[j] - base[j]);
    }
    Tensor t = Tensor::from_data(ref[i].second.shape(), std::move(acc), ref[i].second.dtype());
    t.set_requires_grad(ref[i].second.requires_grad());
    out.push_back(t);
  }
  return out;
}

SplitModel reassemble(const ModelConfig& c, ReassemblyMode mode, const std::vector<WeightedHead>& heads,
                      const ServerModel& server, std::size_t client) {
  if (heads.empty()) throw ContractError("reassemble: no client heads");
  SplitModel out;
  out.config = c;
  out.server = server.clone();
  if (mode == ReassemblyMode::kPerClient) {
    if (client >= heads.size()) throw ContractError("reassemble: client index out of range");
    out.head = heads[client].head->clone();
    return out;
  }
  std::vector<std::vector<NamedTensor>> sets;
  std::size_t total = 0;
  for (const auto& h : heads) {
    sets.push_back(h.head->named());
    total += h.samples;
  }
  if (total == 0) throw ContractError("reassemble: total sample count is zero");
  std::vector<double> weights;
  for (const auto& h : heads) weights.push_back(static_cast<double>(h.samples) / static_cast<double>(total));
  auto averaged = weighted_average(sets, weights);
  out.head = heads.front().head->clone();
  copy_values([&] {
    std::vector<NamedTensor> named;
    for (std::size_t i = 0; i < averaged.size(); ++i) named.emplace_back(sets.front()[i].first, averaged[i]);
    return named;
  }(), out.head.named());
  return out;
}

}  // namespace mpsl::model
