// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cstring>

#include "fixtures.hpp"
#include "mpsl/autograd.hpp"
#include "mpsl/baselines/centralized.hpp"
#include "mpsl/bytes.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/model/loss.hpp"
#include "mpsl/ops.hpp"
#include "mpsl/protocol/trainer.hpp"
#include "mpsl/serialize.hpp"

using namespace mpsl;
using namespace mpsl::protocol;
using mpsl::testing::even_shards;
using mpsl::testing::plain_sgd;
using mpsl::testing::rel_err;
using mpsl::testing::tiny_config;
using mpsl::testing::tiny_data;
using transport::Frame;
using transport::MsgType;

namespace {

struct Round {
  std::vector<MpslClient> clients;
  MpslServer server;
};

Round make_round(const model::ModelConfig& c, const data::Dataset& d, const Shards& shards,
                 const std::vector<std::size_t>& batches, std::uint64_t seed = 3, double momentum = 0.0) {
  const auto init = model::init_model(c, seed);
  std::vector<MpslClient> clients;
  std::vector<std::uint32_t> ids;
  for (std::uint32_t n = 0; n < shards.size(); ++n) {
    clients.emplace_back(n, c, init.head.clone(), d.train, shards[n], batches[n], batch_seed(seed, n), 0.05, momentum,
                         c.dtype);
    ids.push_back(n);
  }
  return {std::move(clients), MpslServer(c, init.server.clone(), ids, 0.05, momentum, c.dtype)};
}

// Runs one round through the state machines directly; returns the
// cut-gradient frames.
std::vector<Frame> one_round(Round& rd, std::uint32_t r) {
  rd.server.begin_round(r);
  std::vector<Frame> preds;
  for (auto& cl : rd.clients) preds.push_back(rd.server.on_activations(cl.upload_activations(r)));
  for (std::size_t n = 0; n < rd.clients.size(); ++n) rd.server.on_loss(rd.clients[n].on_prediction(preds[n]));
  return rd.server.backward_round();
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

template <typename T>
std::vector<std::uint8_t> encode_as(const std::vector<std::size_t>& labels) {
  std::vector<std::uint8_t> out;
  for (auto l : labels) {
    const T v = static_cast<T>(l);
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
  }
  return out;
}

bool contains(const std::vector<std::uint8_t>& hay, const std::vector<std::uint8_t>& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST_CASE("server gradient equals the centralized gradient on the union batch") {
  const auto start = std::chrono::steady_clock::now();
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  const auto shards = even_shards(d.train.size(), 3);
  auto rd = make_round(c, d, shards, {4, 3, 3});
  one_round(rd, 1);

  std::vector<std::size_t> all;
  for (auto& cl : rd.clients) all.insert(all.end(), cl.last_batch().begin(), cl.last_batch().end());
  auto oracle = model::init_model(c, 3);
  std::vector<const model::Sample*> batch;
  for (auto i : all) batch.push_back(&d.train[i]);
  const auto labels = model::labels_of(batch);
  backward(baselines::batch_loss(oracle, model::make_batch(c, batch), labels));

  const auto& got = rd.server.last_gradients();
  std::size_t checked = 0;
  for (const auto& [name, p] : model::trainable(oracle.server.named())) {
    REQUIRE(got.count(name));
    CHECK_MESSAGE(rel_err(got.at(name), grads(p)) < 1e-5, name);
    ++checked;
  }
  CHECK(checked == model::trainable(oracle.server.named()).size());
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(10));
}

TEST_CASE("client weights follow |B_n| / |B| on a linear model") {
  // L_n = w . x_n, so dL_S/dw = sum_n |B_n|/|B| x_n.
  Tensor w = Tensor::from_data({3}, {0.5, -1.0, 2.0}, DType::kFloat64);
  w.set_requires_grad(true);
  const Tensor x1 = Tensor::from_data({3}, {1.0, 2.0, 3.0}, DType::kFloat64);
  const Tensor x2 = Tensor::from_data({3}, {-4.0, 0.5, 1.0}, DType::kFloat64);
  for (std::size_t b1 : {1u, 2u}) {
    w.clear_grad();
    std::vector<model::ClientLoss> losses{{ops::sum(ops::mul(w, x1)), b1}, {ops::sum(ops::mul(w, x2)), 2}};
    backward(model::aggregate_losses(losses));
    const double f1 = static_cast<double>(b1) / static_cast<double>(b1 + 2);
    const double f2 = 2.0 / static_cast<double>(b1 + 2);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(f1 * x1.data()[i] + f2 * x2.data()[i]));
  }
}

TEST_CASE("one server backward per round for N in {1, 4, 16}") {
  const auto c = tiny_config(DType::kFloat32);
  const auto d = tiny_data(c, 20);
  for (std::size_t n : {1u, 4u, 16u}) {
    auto t = plain_sgd(n, 3, 32);
    const auto before = backward_invocations();
    const auto res = run_mpsl(c, t, d, even_shards(d.train.size(), n));
    CHECK(res.server_backwards == 3);
    // Beyond the server's one, each client backpropagates its single
    // early-fusion activation tensor.
    CHECK(backward_invocations() - before == 3 * (1 + n));
  }
}

TEST_CASE("N=1: cut gradient equals a standalone backward of the client loss") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto rd = make_round(c, d, even_shards(d.train.size(), 1), {6});
  const auto frames = one_round(rd, 1);
  const auto& acts = rd.server.activations(0);
  auto x = acts.tensors[0].detach();
  x.set_requires_grad(true);
  model::Activations a = acts;
  a.tensors = {x};
  auto server = model::init_model(c, 3).server;
  std::vector<std::size_t> labels;
  for (auto i : rd.clients[0].last_batch()) labels.push_back(d.train[i].label);
  backward(model::cross_entropy(model::server_predict(c, server, a).logits, labels));
  const auto cut = transport::payload_tensors(frames[0].payload);
  CHECK(rel_err(values(cut[0]), grads(x)) < 1e-12);
}

TEST_CASE("forwards of two clients only meet at shared parameters") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto rd = make_round(c, d, even_shards(d.train.size(), 2), {3, 3});
  rd.server.begin_round(1);
  for (auto& cl : rd.clients) rd.server.on_activations(cl.upload_activations(1));
  backward(ops::sum(rd.server.prediction(0).logits));
  const auto& a0 = rd.server.activations(0).tensors[0];
  const auto& a1 = rd.server.activations(1).tensors[0];
  CHECK(a0.has_grad());
  bool b_zero = true;
  if (a1.has_grad()) {
    for (double g : a1.grad()) b_zero = b_zero && g == 0.0;
  }
  CHECK(b_zero);
}

TEST_CASE("uploaded loss is the locally recomputed cross-entropy") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto rd = make_round(c, d, even_shards(d.train.size(), 1), {5});
  rd.server.begin_round(1);
  const Frame pred = rd.server.on_activations(rd.clients[0].upload_activations(1));
  const Frame loss = rd.clients[0].on_prediction(pred);
  const auto p = transport::decode_loss(loss.payload);
  const auto logits = transport::payload_tensors(pred.payload)[0];
  std::vector<std::size_t> labels;
  for (auto i : rd.clients[0].last_batch()) labels.push_back(d.train[i].label);
  CHECK(p.loss == static_cast<float>(model::cross_entropy(logits, labels).item()));
  CHECK(p.count == 5);

  // Perfect one-hot predictions give a loss of about zero.
  std::vector<double> big(5 * c.num_classes, 0.0);
  for (std::size_t i = 0; i < 5; ++i) big[i * c.num_classes + labels[i]] = 60.0;
  const auto perfect = model::evaluate_loss(c.task, Tensor::from_data({5, c.num_classes}, big), labels);
  CHECK(perfect.value < 1e-20);
}

TEST_CASE("server phase machine rejects out-of-order traffic") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto rd = make_round(c, d, even_shards(d.train.size(), 3), {2, 2, 2});
  auto& s = rd.server;
  CHECK_THROWS_AS(s.backward_round(), ProtocolError);
  s.begin_round(1);
  CHECK(s.phase() == Phase::kCollectingActivations);
  const Frame a0 = rd.clients[0].upload_activations(1);
  const Frame p0 = s.on_activations(a0);
  CHECK(transport::payload_tensors(p0.payload)[0].shape() == Shape{2, c.num_classes});
  CHECK_THROWS_AS(s.on_activations(a0), ProtocolError);  // duplicate
  Frame stranger = a0;
  stranger.client_id = 9;
  CHECK_THROWS_AS(s.on_activations(stranger), ProtocolError);
  Frame stale = rd.clients[1].upload_activations(1);
  stale.round = 0;
  CHECK_THROWS_AS(s.on_activations(stale), ProtocolError);
  stale.round = 1;
  // A loss before every upload is in is rejected.
  CHECK_THROWS_AS(s.on_loss(rd.clients[0].on_prediction(p0)), ProtocolError);
  const Frame p1 = s.on_activations(stale);
  const Frame p2 = s.on_activations(rd.clients[2].upload_activations(1));
  CHECK(s.phase() == Phase::kAwaitingLosses);
  CHECK_THROWS_AS(s.begin_round(2), ProtocolError);
  s.on_loss(rd.clients[0].on_prediction(p0));
  s.on_loss(rd.clients[2].on_prediction(p2));
  try {
    s.backward_round();
    FAIL("barrier passed with a missing loss");
  } catch (const BarrierError& e) {
    CHECK(e.absentees() == std::vector<std::uint32_t>{1});
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
  CHECK(s.backward_count() == 0);
  s.on_loss(rd.clients[1].on_prediction(p1));
  const auto grads = s.backward_round();
  CHECK(grads.size() == 3);
  CHECK(s.phase() == Phase::kBackwardDone);
  CHECK(s.backward_count() == 1);
  CHECK_THROWS_AS(s.backward_round(), ProtocolError);
}

TEST_CASE("loss count and cut-gradient shape are validated") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto rd = make_round(c, d, even_shards(d.train.size(), 1), {4});
  rd.server.begin_round(1);
  const Frame pred = rd.server.on_activations(rd.clients[0].upload_activations(1));
  Frame loss = rd.clients[0].on_prediction(pred);
  auto p = transport::decode_loss(loss.payload);
  p.count = 3;
  Frame bad = loss;
  bad.payload = transport::encode_loss(p, c.dtype);
  CHECK_THROWS_AS(rd.server.on_loss(bad), ProtocolError);
  rd.server.on_loss(loss);
  auto grads = rd.server.backward_round();
  Frame wrong = grads[0];
  const std::vector<Tensor> t{Tensor::zeros({1, 2, 3}, c.dtype)};
  wrong.payload = transport::tensors_payload(t, c.dtype);
  CHECK_THROWS_AS(rd.clients[0].on_cut_grad(wrong), ProtocolError);
  // Prediction for a different batch size is rejected too.
  auto rd2 = make_round(c, d, even_shards(d.train.size(), 1), {4});
  rd2.clients[0].upload_activations(1);
  Frame short_pred = pred;
  const std::vector<Tensor> small{Tensor::zeros({2, c.num_classes}, c.dtype)};
  short_pred.payload = transport::tensors_payload(small, c.dtype);
  CHECK_THROWS_AS(rd2.clients[0].on_prediction(short_pred), ProtocolError);
}

TEST_CASE("zero cut gradient leaves the head unchanged") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto rd = make_round(c, d, even_shards(d.train.size(), 1), {4}, 3, 0.9);
  auto before = rd.clients[0].head().clone();
  rd.server.begin_round(1);
  const Frame pred = rd.server.on_activations(rd.clients[0].upload_activations(1));
  rd.server.on_loss(rd.clients[0].on_prediction(pred));
  auto grads = rd.server.backward_round();
  auto g = transport::payload_tensors(grads[0].payload);
  for (auto& t : g) t = Tensor::zeros(t.shape(), t.dtype());
  grads[0].payload = transport::tensors_payload(g, c.dtype);
  rd.clients[0].on_cut_grad(grads[0]);
  const auto a = before.named();
  const auto b = rd.clients[0].head().named();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(values(a[i].second) == values(b[i].second));
}

TEST_CASE("identical heads drift apart on different data") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto rd = make_round(c, d, even_shards(d.train.size(), 2), {4, 4});
  const auto h0 = rd.clients[0].head().named();
  const auto h1 = rd.clients[1].head().named();
  for (std::size_t i = 0; i < h0.size(); ++i) REQUIRE(values(h0[i].second) == values(h1[i].second));
  const auto grads = one_round(rd, 1);
  for (std::size_t n = 0; n < 2; ++n) rd.clients[n].on_cut_grad(grads[n]);
  bool differ = false;
  for (std::size_t i = 0; i < h0.size(); ++i) differ = differ || values(h0[i].second) != values(h1[i].second);
  CHECK(differ);
}

TEST_CASE("client with an empty shard cannot participate") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  const auto init = model::init_model(c, 0);
  CHECK_THROWS_AS(MpslClient(0, c, init.head.clone(), d.train, {}, 1, 0, 0.1, 0.0, c.dtype), DataError);
}

TEST_CASE("late fusion sends one tensor per modality and early fusion one") {
  auto c = tiny_config();
  const auto d = tiny_data(c);
  for (auto f : {model::Fusion::kEarly, model::Fusion::kLate}) {
    c.fusion = f;
    auto rd = make_round(c, d, even_shards(d.train.size(), 1), {3});
    const Frame up = rd.clients[0].upload_activations(1);
    const auto t = transport::payload_tensors(up.payload);
    CHECK(t.size() == (f == model::Fusion::kEarly ? 1u : 2u));
    for (const auto& x : t) CHECK(x.dim(0) == 3);
    CHECK(up.encoded_size() == [&] {
      std::size_t s = transport::kHeaderSize;
      for (const auto& x : t) s += serialized_size(x.shape(), x.dtype());
      return s;
    }());
  }
}

TEST_CASE("label privacy: client-to-server frames carry no label bytes") {
  const auto c = tiny_config(DType::kFloat32);
  const auto d = tiny_data(c, 20);
  const std::size_t n = 8;
  auto t = plain_sgd(n, 20, 48);
  const auto shards = even_shards(d.train.size(), n);

  // Record the batch labels each client draws, per round, by replaying the
  // batch streams.
  const auto alloc = data::allocate_batch(t.global_batch, n);
  std::vector<std::vector<std::vector<std::size_t>>> drawn(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    data::BatchIterator it(shards[k], alloc[k], batch_seed(t.seed, k), k);
    for (std::size_t r = 0; r < t.rounds; ++r) {
      std::vector<std::size_t> labels;
      for (auto i : it.next()) labels.push_back(d.train[i].label);
      drawn[k].push_back(labels);
    }
  }

  transport::ByteLedger ledger(true);
  run_mpsl(c, t, d, shards, &ledger);
  std::size_t frames = 0;
  for (std::uint32_t k = 0; k < n; ++k) {
    for (const auto& lf : ledger.frames(k, transport::Direction::kUplink)) {
      const Frame f = transport::decode_frame(lf.bytes);
      ++frames;
      switch (f.type) {
        case MsgType::kRegister:
          CHECK(f.payload.empty());
          break;
        case MsgType::kActivations: {
          // Only float tensors, and nothing besides them.
          std::size_t expect = 0;
          for (const auto& x : transport::payload_tensors(f.payload)) {
            CHECK(x.dtype() == DType::kFloat32);
            expect += serialized_size(x.shape(), x.dtype());
          }
          CHECK(expect == f.payload.size());
          break;
        }
        case MsgType::kLoss: {
          const auto p = transport::decode_loss(f.payload);
          CHECK(p.count == alloc[k]);
          break;
        }
        default:
          FAIL("unexpected uplink frame type");
      }
      if (f.type == MsgType::kRegister) continue;
      const auto& labels = drawn[k][f.round - 1];
      CHECK_FALSE(contains(f.payload, encode_as<std::uint8_t>(labels)));
      CHECK_FALSE(contains(f.payload, encode_as<std::uint16_t>(labels)));
      CHECK_FALSE(contains(f.payload, encode_as<std::uint32_t>(labels)));
      CHECK_FALSE(contains(f.payload, encode_as<std::uint64_t>(labels)));
      CHECK_FALSE(contains(f.payload, encode_as<float>(labels)));
      CHECK_FALSE(contains(f.payload, encode_as<double>(labels)));
    }
  }
  CHECK(frames == n * (1 + 2 * t.rounds));
  // No client ever addresses another client: every frame on client k's link
  // carries k.
  for (const auto& lf : ledger.frames()) CHECK(transport::decode_frame(lf.bytes).client_id == lf.client);
  // MPSL training moves no parameters.
  CHECK(ledger.type_bytes(MsgType::kModelPull) == 0);
  CHECK(ledger.type_bytes(MsgType::kModelPush) == 0);
}

TEST_CASE("N=1 MPSL reproduces centralized training") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto t = plain_sgd(1, 50, 8);
  const auto mpsl = run_mpsl(c, t, d, even_shards(d.train.size(), 1));
  const auto central = baselines::run_centralized(c, t, d);
  const auto a = mpsl.log.losses();
  const auto b = central.log.losses();
  REQUIRE(a.size() == 50);
  REQUIRE(b.size() == 50);
  double worst = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) worst = std::max(worst, std::abs(a[r] - b[r]));
  CHECK(worst < 1e-5);
  const auto pa = mpsl.model.named();
  const auto pb = central.model.named();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK_MESSAGE(rel_err(values(pa[i].second), values(pb[i].second)) < 1e-9, pa[i].first);
  }
}

TEST_CASE("zero rounds return the initial model and an empty log") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  auto t = plain_sgd(2, 0, 4);
  const auto res = run_mpsl(c, t, d, even_shards(d.train.size(), 2));
  CHECK(res.log.empty());
  CHECK(res.server_backwards == 0);
  const auto init = model::init_model(c, t.seed);
  const auto a = init.named();
  const auto b = res.model.named();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(values(a[i].second) == values(b[i].second));
}

TEST_CASE("training loss halves on separable data") {
  const auto c = tiny_config(DType::kFloat32);
  const auto d = tiny_data(c, 20);
  TrainingConfig t;
  t.num_clients = 4;
  t.rounds = 60;
  t.global_batch = 16;
  t.eval_every = 0;
  const auto res = run_mpsl(c, t, d, even_shards(d.train.size(), 4));
  const auto l = res.log.losses();
  double tail = 0.0;
  for (std::size_t r = l.size() - 5; r < l.size(); ++r) tail += l[r] / 5.0;
  CHECK(tail < l.front() / 2.0);
}

TEST_CASE("sequential runs are deterministic and threaded runs agree") {
  const auto c = tiny_config(DType::kFloat32);
  const auto d = tiny_data(c, 10);
  TrainingConfig t;
  t.num_clients = 3;
  t.rounds = 6;
  t.global_batch = 9;
  t.eval_every = 3;
  const auto shards = even_shards(d.train.size(), 3);
  const auto a = run_mpsl(c, t, d, shards);
  const auto b = run_mpsl(c, t, d, shards);
  CHECK(a.log.csv() == b.log.csv());
  const auto th = run_mpsl(c, t, d, shards, nullptr, {}, RunMode::kThreaded);
  CHECK(th.log.losses() == a.log.losses());
  REQUIRE(th.log.metric_curve().size() == 1);
  CHECK(th.log.metric_curve().back() == a.log.metric_curve().back());
  for (std::size_t r = 0; r < a.log.size(); ++r) {
    CHECK(th.log.records()[r].up_bytes == a.log.records()[r].up_bytes);
    CHECK(th.log.records()[r].down_bytes == a.log.records()[r].down_bytes);
  }
}

TEST_CASE("a round missing a loss is aborted and retried") {
  const auto c = tiny_config(DType::kFloat32);
  const auto d = tiny_data(c, 10);
  auto t = plain_sgd(3, 4, 9);
  const auto shards = even_shards(d.train.size(), 3);
  const auto clean = run_mpsl(c, t, d, shards);

  RunHooks hooks;
  hooks.drop_loss = [](std::uint32_t r, std::uint32_t n, std::size_t attempt) {
    return r == 2 && n == 1 && attempt == 0;
  };
  const auto retried = run_mpsl(c, t, d, shards, nullptr, hooks);
  REQUIRE(retried.aborts.size() == 1);
  CHECK(retried.aborts[0].round == 2);
  CHECK(retried.aborts[0].absentees == std::vector<std::uint32_t>{1});
  // The retry replays the same batches, so training is unaffected.
  CHECK(retried.log.losses() == clean.log.losses());
  CHECK(retried.server_backwards == 4);

  hooks.drop_loss = [](std::uint32_t r, std::uint32_t n, std::size_t) { return r == 3 && n == 0; };
  CHECK_THROWS_AS(run_mpsl(c, t, d, shards, nullptr, hooks), BarrierError);
}
