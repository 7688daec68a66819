// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <thread>

#include "mpsl/errors.hpp"
#include "mpsl/serialize.hpp"
#include "mpsl/transport/endpoint.hpp"

using namespace mpsl;
using namespace mpsl::transport;

namespace {

Frame random_frame(std::mt19937_64& rng) {
  Frame f;
  f.type = static_cast<MsgType>(rng() % 8);
  f.round = static_cast<std::uint32_t>(rng());
  f.client_id = static_cast<std::uint32_t>(rng());
  const std::size_t kind = rng() % 3;
  if (kind == 0) {
    f.payload.resize(rng() % 64);
    for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng());
  } else {
    std::vector<Tensor> ts;
    const std::size_t n = 1 + rng() % 3;
    for (std::size_t i = 0; i < n; ++i) {
      Shape s(rng() % 4);
      for (auto& d : s) d = 1 + rng() % 4;
      std::vector<double> v(numel(s));
      std::normal_distribution<double> nd;
      for (auto& x : v) x = nd(rng);
      ts.push_back(Tensor::from_data(s, v));
    }
    f.payload = tensors_payload(ts, kind == 1 ? DType::kFloat32 : DType::kFloat64);
  }
  return f;
}

}  // namespace

TEST_CASE("frame sizes") {
  const Frame reg = make_frame(MsgType::kRegister, 0, 3, {});
  const auto bytes = encode_frame(reg);
  CHECK(bytes.size() == 22);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MPSL");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[10] == 3);

  const Tensor act = Tensor::zeros({3, 9, 8}, DType::kFloat32);
  const std::vector<Tensor> one{act};
  const Frame f = make_frame(MsgType::kActivations, 7, 1, tensors_payload(one, DType::kFloat32));
  CHECK(f.payload.size() == 878);
  CHECK(encode_frame(f).size() == 900);
  CHECK(decode_frame(encode_frame(f)) == f);
  const auto back = payload_tensors(f.payload);
  REQUIRE(back.size() == 1);
  CHECK(back[0].shape() == Shape{3, 9, 8});
}

TEST_CASE("randomized frames round-trip bit-exactly") {
  std::mt19937_64 rng(2024);
  std::vector<std::uint8_t> stream;
  std::vector<Frame> sent;
  for (int i = 0; i < 10000; ++i) {
    const Frame f = random_frame(rng);
    const auto bytes = encode_frame(f);
    REQUIRE(bytes.size() == f.encoded_size());
    const Frame g = decode_frame(bytes);
    REQUIRE(g == f);
    REQUIRE(encode_frame(g) == bytes);
    if (i < 500) {
      stream.insert(stream.end(), bytes.begin(), bytes.end());
      sent.push_back(f);
    }
  }
  CHECK(decode_stream(stream) == sent);
}

TEST_CASE("frame decode errors carry offsets") {
  const Frame f = make_frame(MsgType::kPrediction, 1, 2, {1, 2, 3, 4});
  auto bytes = encode_frame(f);

  auto expect_offset = [](const std::vector<std::uint8_t>& b, std::size_t off) {
    try {
      decode_frame(b);
      FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
      CHECK(e.offset() == off);
    }
  };
  auto bad = bytes;
  bad[1] = 'X';
  expect_offset(bad, 0);
  bad = bytes;
  bad[5] = 9;
  expect_offset(bad, 5);
  bad = bytes;
  bad[4] = 2;
  expect_offset(bad, 4);
  bad = bytes;
  bad.resize(24);
  expect_offset(bad, 24);
  bad = bytes;
  bad.resize(10);
  expect_offset(bad, 10);
  bad = bytes;
  bad.push_back(0);
  expect_offset(bad, 26);

  // a truncated tensor inside a payload reports its absolute position
  const std::vector<Tensor> one{Tensor::zeros({2, 2})};
  auto payload = tensors_payload(one, DType::kFloat32);
  payload.pop_back();
  CHECK_THROWS_AS(payload_tensors(payload), DecodeError);
}

TEST_CASE("loss and model-push payloads") {
  LossPayload lp{0.25f, 6, Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6})};
  const auto bytes = encode_loss(lp, DType::kFloat32);
  CHECK(bytes.size() == 4 + 4 + serialized_size({2, 3}, DType::kFloat32));
  const LossPayload back = decode_loss(bytes);
  CHECK(back.loss == 0.25f);
  CHECK(back.count == 6);
  CHECK(back.sensitivity.shape() == Shape{2, 3});
  CHECK(back.sensitivity.data()[5] == 6.0);

  ModelPushPayload mp{17, {Tensor::full({4}, 0.5), Tensor::scalar(2.0)}};
  const ModelPushPayload mb = decode_model_push(encode_model_push(mp, DType::kFloat64));
  CHECK(mb.samples == 17);
  REQUIRE(mb.params.size() == 2);
  CHECK(mb.params[1].item() == 2.0);
}

TEST_CASE("ledger accounting") {
  ByteLedger ledger(true);
  auto pair = channel_pair(&ledger, 0);
  const std::vector<Tensor> one{Tensor::zeros({3, 9, 8}, DType::kFloat32)};
  pair.client->send(make_frame(MsgType::kActivations, 0, 0, tensors_payload(one, DType::kFloat32)));
  const Frame got = pair.server->expect(MsgType::kActivations);
  CHECK(got.payload.size() == 878);
  const LedgerReport r = ledger_report(ledger, 1.0);
  CHECK(r.up_mb == doctest::Approx(0.0009).epsilon(1e-12));
  CHECK(r.down_mb == 0.0);
  CHECK(ledger_report(ledger, 2.0).up_mb == doctest::Approx(2 * r.up_mb));

  pair.server->send(make_frame(MsgType::kPrediction, 0, 0, {1, 2}));
  pair.client->send(make_frame(MsgType::kRegister, 0, 0, {}));
  CHECK(ledger.total() == 900 + 24 + 22);
  CHECK(ledger.setup_bytes() == 22);
  std::uint64_t logged = 0;
  for (const auto& f : ledger.frames()) logged += f.bytes.size();
  CHECK(logged == ledger.total());
  CHECK(ledger.round_bytes(0, Direction::kDownlink, 0) == 24);

  ByteLedger empty;
  CHECK_THROWS_AS(ledger_report(empty, 1.0), MetricError);

  CHECK(pair.client->recv().payload.size() == 2);
  pair.server->send(abort_frame(0, 0, "stop"));
  CHECK_THROWS_AS(pair.client->expect(MsgType::kPrediction), ProtocolError);
}

TEST_CASE("channel timeout and close") {
  auto pair = channel_pair(nullptr, 1, std::chrono::milliseconds(20));
  CHECK_THROWS_AS(pair.client->recv(), TransportError);
  pair.server->close();
  CHECK_THROWS_AS(pair.client->send(make_frame(MsgType::kRegister, 0, 1, {})), TransportError);
}

TEST_CASE("tcp endpoints deliver the same frames as channels") {
  ByteLedger ledger;
  TcpListener listener("127.0.0.1", 0);
  std::mt19937_64 rng(5);
  std::vector<Frame> frames;
  for (int i = 0; i < 200; ++i) frames.push_back(random_frame(rng));
  // a large frame crosses many socket reads
  const std::vector<Tensor> big{Tensor::zeros({64, 64, 64}, DType::kFloat32)};
  frames.push_back(make_frame(MsgType::kCutGrad, 1, 1, tensors_payload(big, DType::kFloat32)));

  std::thread client([&] {
    auto ep = tcp_connect("127.0.0.1", listener.port(), &ledger, 9);
    for (const auto& f : frames) ep->send(f);
    const Frame echo = ep->recv();
    CHECK(echo.type == MsgType::kAbort);
  });
  auto server = listener.accept(&ledger, std::chrono::seconds(10));
  for (const auto& f : frames) CHECK(server->recv() == f);
  server->set_client(9);
  server->send(abort_frame(0, 9, "done"));
  client.join();
  std::uint64_t expected = 22 + 4;
  for (const auto& f : frames) expected += f.encoded_size();
  CHECK(ledger.total() == expected);

  server->close();
  CHECK_THROWS_AS(server->recv(), TransportError);
  CHECK(parse_address("localhost:8080").second == 8080);
  CHECK_THROWS_AS(parse_address("localhost"), ConfigError);
  CHECK_THROWS_AS(parse_address("h:99999"), ConfigError);
}

TEST_CASE("tcp peer disconnect surfaces as transport error") {
  TcpListener listener("127.0.0.1", 0);
  std::thread client([&] {
    auto ep = tcp_connect("127.0.0.1", listener.port(), nullptr, 0);
    ep->close();
  });
  auto server = listener.accept(nullptr, std::chrono::seconds(10));
  client.join();
  CHECK_THROWS_AS(server->recv(), TransportError);
}
