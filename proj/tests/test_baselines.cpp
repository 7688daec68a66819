// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fixtures.hpp"
#include "mpsl/baselines/centralized.hpp"
#include "mpsl/baselines/fedavg.hpp"
#include "mpsl/errors.hpp"

using namespace mpsl;
using namespace mpsl::baselines;
using mpsl::testing::even_shards;
using mpsl::testing::plain_sgd;
using mpsl::testing::rel_err;
using mpsl::testing::tiny_config;
using mpsl::testing::tiny_data;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("FedAvg with one client and one batch per epoch is centralized training") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);  // 32 training samples
  auto t = plain_sgd(1, 50, d.train.size());
  const auto fed = run_fedavg(c, t, d, even_shards(d.train.size(), 1));
  const auto central = run_centralized(c, t, d);
  CHECK(fed.log.losses() == central.log.losses());
  const auto a = fed.model.named();
  const auto b = central.model.named();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK_MESSAGE(values(a[i].second) == values(b[i].second), a[i].first);
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  const auto init = model::init_model(c, 1);
  CentralizedTrainer tr(init.clone(), 0.0, 0.0, 0.0);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  tr.step(d.train, idx);
  const auto a = init.named();
  const auto b = tr.model().named();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(values(a[i].second) == values(b[i].second));
  CHECK_THROWS_AS(tr.step(std::vector<const model::Sample*>{}), DataError);
}

TEST_CASE("centralized loss falls over 50 steps") {
  const auto c = tiny_config(DType::kFloat32);
  const auto d = tiny_data(c, 20);
  protocol::TrainingConfig t;
  t.rounds = 50;
  t.global_batch = 16;
  t.eval_every = 0;
  const auto res = run_centralized(c, t, d);
  const auto l = res.log.losses();
  CHECK((l[47] + l[48] + l[49]) / 3.0 < l[0]);
}

TEST_CASE("aggregation weights and idempotence") {
  const auto c = tiny_config();
  const auto m = model::init_model(c, 2);
  const auto p = model::trainable(m.named());
  const auto same = fedavg_aggregate({p, p, p}, {3, 10, 7});
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(rel_err(values(same[i]), values(p[i].second)) < 1e-12);
  }
  // Weights are |D_n| / |D| and sum to one: two scalars 0 and 1.
  std::vector<NamedTensor> zero{{"w", Tensor::from_data({1}, {0.0}, DType::kFloat64)}};
  std::vector<NamedTensor> one{{"w", Tensor::from_data({1}, {1.0}, DType::kFloat64)}};
  CHECK(fedavg_aggregate({zero, one}, {1, 3})[0].item() == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(fedavg_aggregate({one, one}, {5, 9})[0].item() == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<NamedTensor> wrong{{"w", Tensor::from_data({2}, {0.0, 1.0}, DType::kFloat64)}};
  CHECK_THROWS_AS(fedavg_aggregate({zero, wrong}, {1, 1}), ContractError);
}

TEST_CASE("clients with identical data produce the same update") {
  const auto c = tiny_config();
  const auto d = tiny_data(c);
  // Each shard holds one full batch, so batch order does not change the
  // mean gradient beyond summation order.
  protocol::Shards shards{{0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}};
  auto t = plain_sgd(2, 1, 12);
  FedAvg fed(c, t, d, shards, nullptr);
  fed.round(1);
  auto single = plain_sgd(1, 1, 6);
  FedAvg one(c, single, d, {shards[0]}, nullptr);
  one.round(1);
  const auto a = model::trainable(fed.global().named());
  const auto b = model::trainable(one.global().named());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(rel_err(values(a[i].second), values(b[i].second)) < 1e-12);
}

TEST_CASE("FedAvg moves parameters and no activations") {
  const auto c = tiny_config(DType::kFloat32);
  const auto d = tiny_data(c);
  transport::ByteLedger ledger;
  auto t = plain_sgd(2, 2, 8);
  t.local_epochs = 2;
  run_fedavg(c, t, d, even_shards(d.train.size(), 2), &ledger);
  CHECK(ledger.type_bytes(transport::MsgType::kActivations) == 0);
  CHECK(ledger.type_bytes(transport::MsgType::kCutGrad) == 0);
  CHECK(ledger.type_bytes(transport::MsgType::kModelPull) > 0);
  CHECK(ledger.type_bytes(transport::MsgType::kModelPush) > 0);
}
