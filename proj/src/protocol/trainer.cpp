// SPDX-License-Identifier: Apache-2.0

#include "mpsl/protocol/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include "mpsl/errors.hpp"
#include "mpsl/protocol/evaluate.hpp"

namespace mpsl::protocol {

using transport::Direction;
using transport::Frame;
using transport::MsgType;

Shards shards_of(const data::Partition& p) {
  Shards s;
  for (std::uint32_t n = 0; n < p.num_clients; ++n) s.push_back(p.indices(n));
  return s;
}

std::vector<std::size_t> partition_labels(const data::Dataset& d) {
  if (d.spec.task == model::Task::kRetrieval) return std::vector<std::size_t>(d.train.size(), 0);
  return data::labels(d.train);
}

bool eval_due(const TrainingConfig& t, std::uint32_t round) {
  if (t.eval_every == 0) return false;
  return round % t.eval_every == 0 || round == t.rounds;
}

void fill_metric(analysis::MetricRecord& r, const model::SplitModel& m, const data::Dataset& d,
                 const TrainingConfig& t) {
  const Evaluation e = evaluate(m, d.test, t.eval_batch, t.recall_k);
  r.metric_name = e.metric;
  r.metric_value = e.value;
}

std::uint64_t round_bytes(const transport::ByteLedger& ledger, Direction dir, std::uint32_t round) {
  std::uint64_t total = 0;
  for (auto c : ledger.clients()) total += ledger.round_bytes(c, dir, round);
  return total;
}

std::vector<MpslClient> make_clients(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                                     const Shards& shards, const model::SplitModel& init) {
  if (shards.size() != t.num_clients) {
    throw ConfigError("partition has " + std::to_string(shards.size()) + " clients, training expects " +
                      std::to_string(t.num_clients));
  }
  const auto alloc = data::allocate_batch(t.global_batch, t.num_clients);
  std::vector<MpslClient> clients;
  clients.reserve(shards.size());
  for (std::uint32_t n = 0; n < shards.size(); ++n) {
    clients.emplace_back(n, c, init.head.clone(), d.train, shards[n], alloc[n], batch_seed(t.seed, n), t.lr_head,
                         t.momentum, c.dtype);
    clients.back().set_max_grad_norm(t.max_grad_norm);
  }
  return clients;
}

namespace {

std::vector<std::uint32_t> client_ids(std::size_t n) {
  std::vector<std::uint32_t> ids(n);
  for (std::uint32_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

model::SplitModel reassembled(const model::ModelConfig& c, const TrainingConfig& t,
                              const std::vector<model::ClientHead>& heads, const std::vector<std::size_t>& sizes,
                              const model::ServerModel& server) {
  std::vector<model::WeightedHead> w;
  for (std::size_t i = 0; i < heads.size(); ++i) w.push_back({&heads[i], sizes[i]});
  return model::reassemble(c, t.eval_reassembly, w, server, 0);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

TrainResult run_mpsl_sequential(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                                const Shards& shards, const std::vector<Link>& links,
                                const transport::ByteLedger& ledger, const RunHooks& hooks) {
  t.validate();
  model::SplitModel init = model::init_model(c, t.seed);
  auto clients = make_clients(c, t, d, shards, init);
  if (links.size() != clients.size()) throw ConfigError("one link per client is required");
  MpslServer server(c, init.server.clone(), client_ids(clients.size()), t.lr_server, t.momentum, c.dtype);
  server.set_max_grad_norm(t.max_grad_norm);
  std::vector<std::size_t> sizes;
  for (const auto& cl : clients) sizes.push_back(cl.num_samples());

  for (std::size_t n = 0; n < clients.size(); ++n) {
    links[n].client->send(clients[n].register_frame());
    const Frame reg = links[n].server->expect(MsgType::kRegister);
    if (reg.client_id != n) throw ProtocolError("link " + std::to_string(n) + " registered as client " +
                                                std::to_string(reg.client_id));
  }

  TrainResult res;
  for (std::uint32_t r = 1; r <= t.rounds; ++r) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t attempt = 0;; ++attempt) {
      server.begin_round(r);
      for (std::size_t n = 0; n < clients.size(); ++n) links[n].client->send(clients[n].upload_activations(r));
      for (std::size_t n = 0; n < clients.size(); ++n) {
        links[n].server->send(server.on_activations(links[n].server->expect(MsgType::kActivations)));
      }
      std::vector<bool> sent(clients.size(), false);
      for (std::size_t n = 0; n < clients.size(); ++n) {
        const Frame loss = clients[n].on_prediction(links[n].client->expect(MsgType::kPrediction));
        if (hooks.drop_loss && hooks.drop_loss(r, static_cast<std::uint32_t>(n), attempt)) continue;
        links[n].client->send(loss);
        sent[n] = true;
      }
      for (std::size_t n = 0; n < clients.size(); ++n) {
        if (sent[n]) server.on_loss(links[n].server->expect(MsgType::kLoss));
      }
      std::vector<Frame> grads;
      try {
        grads = server.backward_round();
      } catch (const BarrierError& e) {
        res.aborts.push_back({r, attempt, e.absentees()});
        server.abort_round();
        for (std::size_t n = 0; n < clients.size(); ++n) {
          links[n].server->send(transport::abort_frame(r, static_cast<std::uint32_t>(n), e.what()));
          const Frame f = links[n].client->recv();
          if (f.type != MsgType::kAbort) throw ProtocolError("expected Abort after a failed barrier");
          clients[n].on_abort();
        }
        if (attempt >= t.max_round_retries) throw;
        continue;
      }
      for (std::size_t n = 0; n < clients.size(); ++n) {
        links[n].server->send(grads[n]);
        clients[n].on_cut_grad(links[n].client->expect(MsgType::kCutGrad));
      }
      break;
    }

    analysis::MetricRecord rec;
    rec.round = r;
    rec.method = to_string(Method::kMpsl);
    rec.loss = server.last_loss();
    if (eval_due(t, r)) {
      std::vector<model::ClientHead> heads;
      for (const auto& cl : clients) heads.push_back(cl.head().clone());
      fill_metric(rec, reassembled(c, t, heads, sizes, server.model()), d, t);
    }
    rec.up_bytes = round_bytes(ledger, Direction::kUplink, r);
    rec.down_bytes = round_bytes(ledger, Direction::kDownlink, r);
    if (t.record_wall_time) rec.wall_ms = elapsed_ms(start);
    if (hooks.on_round) hooks.on_round(rec);
    res.log.append(std::move(rec));
  }

  for (const auto& cl : clients) res.heads.push_back(cl.head().clone());
  res.model = reassembled(c, t, res.heads, sizes, server.model());
  res.server_backwards = server.backward_count();
  return res;
}

void client_loop(MpslClient& client, transport::Endpoint& ep, std::size_t rounds) {
  ep.send(client.register_frame());
  for (std::uint32_t r = 1; r <= rounds; ++r) {
    for (;;) {
      ep.send(client.upload_activations(r));
      Frame f = ep.recv();
      if (f.type == MsgType::kAbort) {
        client.on_abort();
        continue;
      }
      if (f.type != MsgType::kPrediction) throw ProtocolError("client expected a Prediction frame");
      ep.send(client.on_prediction(f));
      f = ep.recv();
      if (f.type == MsgType::kAbort) {
        client.on_abort();
        continue;
      }
      if (f.type != MsgType::kCutGrad) throw ProtocolError("client expected a CutGrad frame");
      client.on_cut_grad(f);
      break;
    }
  }
  transport::ModelPushPayload push;
  push.samples = static_cast<std::uint32_t>(client.num_samples());
  for (const auto& [name, p] : model::trainable(client.head().named())) push.params.push_back(p);
  ep.send(transport::make_frame(MsgType::kModelPush, static_cast<std::uint32_t>(rounds + 1), client.id(),
                                transport::encode_model_push(push, client.wire())));
}


TrainResult server_loop(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                        std::vector<transport::Endpoint*> endpoints, const transport::ByteLedger& ledger,
                        const RunHooks& hooks) {
  t.validate();
  if (endpoints.size() != t.num_clients) {
    throw ConfigError("server has " + std::to_string(endpoints.size()) + " connections, expects " +
                      std::to_string(t.num_clients));
  }
  std::vector<transport::Endpoint*> eps(endpoints.size(), nullptr);
  for (auto* ep : endpoints) {
    const Frame reg = ep->expect(MsgType::kRegister);
    if (reg.client_id >= eps.size() || eps[reg.client_id]) {
      throw ProtocolError("bad or duplicate registration from client " + std::to_string(reg.client_id));
    }
    ep->set_client(reg.client_id);
    eps[reg.client_id] = ep;
  }

  model::SplitModel init = model::init_model(c, t.seed);
  MpslServer server(c, init.server.clone(), client_ids(eps.size()), t.lr_server, t.momentum, c.dtype);
  server.set_max_grad_norm(t.max_grad_norm);
  TrainResult res;
  for (std::uint32_t r = 1; r <= t.rounds; ++r) {
    const auto start = std::chrono::steady_clock::now();
    server.begin_round(r);
    for (auto* ep : eps) ep->send(server.on_activations(ep->expect(MsgType::kActivations)));
    for (auto* ep : eps) server.on_loss(ep->expect(MsgType::kLoss));
    const auto grads = server.backward_round();
    for (std::size_t n = 0; n < eps.size(); ++n) eps[n]->send(grads[n]);

    analysis::MetricRecord rec;
    rec.round = r;
    rec.method = to_string(Method::kMpsl);
    rec.loss = server.last_loss();
    rec.up_bytes = round_bytes(ledger, Direction::kUplink, r);
    rec.down_bytes = round_bytes(ledger, Direction::kDownlink, r);
    if (t.record_wall_time) rec.wall_ms = elapsed_ms(start);
    if (r < t.rounds) {
      if (hooks.on_round) hooks.on_round(rec);
      res.log.append(std::move(rec));
      continue;
    }
    // Final round: collect heads, then evaluate.
    std::vector<std::size_t> sizes;
    for (std::size_t n = 0; n < eps.size(); ++n) {
      const auto push = transport::decode_model_push(eps[n]->expect(MsgType::kModelPush).payload);
      model::ClientHead head = init.head.clone();
      const auto dst = model::trainable(head.named());
      if (push.params.size() != dst.size()) throw ProtocolError("client " + std::to_string(n) + " pushed a head of the wrong structure");
      std::vector<NamedTensor> src;
      for (std::size_t i = 0; i < dst.size(); ++i) src.emplace_back(dst[i].first, push.params[i].to(c.dtype));
      model::copy_values(src, dst);
      res.heads.push_back(std::move(head));
      sizes.push_back(push.samples);
    }
    res.model = reassembled(c, t, res.heads, sizes, server.model());
    if (t.eval_every > 0) fill_metric(rec, res.model, d, t);
    if (hooks.on_round) hooks.on_round(rec);
    res.log.append(std::move(rec));
  }
  if (t.rounds == 0) res.model = init.clone();
  res.server_backwards = server.backward_count();
  return res;
}

TrainResult run_mpsl(const model::ModelConfig& c, const TrainingConfig& t, const data::Dataset& d,
                     const Shards& shards, transport::ByteLedger* ledger, const RunHooks& hooks, RunMode mode) {
  transport::ByteLedger own;
  if (!ledger) ledger = &own;
  std::vector<transport::EndpointPair> pairs;
  std::vector<Link> links;
  for (std::uint32_t n = 0; n < shards.size(); ++n) pairs.push_back(transport::channel_pair(ledger, n));
  for (auto& p : pairs) links.push_back({p.client.get(), p.server.get()});
  if (mode == RunMode::kSequential) return run_mpsl_sequential(c, t, d, shards, links, *ledger, hooks);

  model::SplitModel init = model::init_model(c, t.seed);
  auto clients = make_clients(c, t, d, shards, init);
  std::vector<std::exception_ptr> errors(clients.size());
  std::vector<std::thread> threads;
  for (std::size_t n = 0; n < clients.size(); ++n) {
    threads.emplace_back([&, n] {
      try {
        client_loop(clients[n], *links[n].client, t.rounds);
      } catch (...) {
        errors[n] = std::current_exception();
        links[n].client->close();
      }
    });
  }
  TrainResult res;
  std::exception_ptr server_error;
  try {
    std::vector<transport::Endpoint*> eps;
    for (auto& l : links) eps.push_back(l.server);
    res = server_loop(c, t, d, eps, *ledger, hooks);
  } catch (...) {
    server_error = std::current_exception();
    for (auto& l : links) l.server->close();
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (server_error) std::rethrow_exception(server_error);
  return res;
}

}  // namespace mpsl::protocol
