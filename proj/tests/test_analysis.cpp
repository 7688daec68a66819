// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "mpsl/analysis/cost.hpp"
#include "mpsl/analysis/embeddings.hpp"
#include "mpsl/analysis/metrics.hpp"
#include "mpsl/baselines/fedavg.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/model/model.hpp"
#include "mpsl/serialize.hpp"

using namespace mpsl;
using namespace mpsl::analysis;
using mpsl::testing::even_shards;
using mpsl::testing::plain_sgd;
using mpsl::testing::tiny_config;
using mpsl::testing::tiny_data;

namespace {

model::ModelConfig paper_pair(model::Preset p) {
  auto c = model::preset_config(p);
  c.modalities = {model::Modality::kVision, model::Modality::kText};
  return c;
}

// Position of query i when candidates are sorted by score, ties by index.
std::size_t rank_of(const std::vector<double>& scores, std::size_t i) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), i) - order.begin());
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpsl_analysis_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("accuracy limits and errors") {
  const Tensor logits = Tensor::from_data({3, 2}, {2, 1, 0, 5, 3, -1});
  const std::vector<std::size_t> right{0, 1, 0};
  CHECK(accuracy(logits, right) == 1.0);
  const std::vector<std::size_t> one_wrong{0, 0, 0};
  CHECK(accuracy(logits, one_wrong) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(accuracy(Tensor::zeros({0, 2}), {}), MetricError);
}

TEST_CASE("recall@k matches an exhaustive ranking oracle") {
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  const Recall r = recall_at_k(Tensor::from_data({4, 4}, eye, DType::kFloat64), 1);
  CHECK(r.forward == 1.0);
  CHECK(r.backward == 1.0);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> coarse(0, 4);  // coarse scores force ties
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 10;
    std::vector<double> s(n * n);
    for (auto& v : s) v = coarse(rng);
    const Tensor sim = Tensor::from_data({n, n}, s, DType::kFloat64);
    double prev = -1.0;
    for (std::size_t k = 1; k <= n; ++k) {
      std::size_t fwd = 0, bwd = 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(s.begin() + i * n, s.begin() + (i + 1) * n);
        std::vector<double> col(n);
        for (std::size_t j = 0; j < n; ++j) col[j] = s[j * n + i];
        fwd += rank_of(row, i) < k;
        bwd += rank_of(col, i) < k;
      }
      const Recall got = recall_at_k(sim, k);
      CHECK(got.forward == doctest::Approx(static_cast<double>(fwd) / n));
      CHECK(got.backward == doctest::Approx(static_cast<double>(bwd) / n));
      CHECK(got.mean() >= prev);
      prev = got.mean();
    }
    CHECK(recall_at_k(sim, n).mean() == 1.0);
  }
  CHECK_THROWS_AS(recall_at_k(Tensor::zeros({3, 3}), 4), MetricError);
}

TEST_CASE("rounds to a fraction of the peak") {
  const std::vector<double> mono{0.1, 0.5, 0.8, 0.9, 0.96, 1.0};
  CHECK(rounds_to_fraction_of_peak(mono) == 4);
  const std::vector<double> flat(5, 0.3);
  CHECK(rounds_to_fraction_of_peak(flat) == 0);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> curve;
    for (int r = 0; r < 40; ++r) curve.push_back(1.0 - std::exp(-0.1 * r) + noise(rng));
    const double peak = *std::max_element(curve.begin(), curve.end());
    std::size_t scan = 0;
    while (curve[scan] < 0.95 * peak) ++scan;
    CHECK(rounds_to_fraction_of_peak(curve, 0.95) == scan);
    const auto argmax = static_cast<std::size_t>(std::max_element(curve.begin(), curve.end()) - curve.begin());
    CHECK(rounds_to_fraction_of_peak(curve, 1.0) == argmax);
  }
  CHECK_THROWS_AS(rounds_to_fraction_of_peak(std::vector<double>{}), MetricError);
}

TEST_CASE("metric log is append-only with increasing rounds") {
  MetricLog log;
  log.append({1, "mpsl", 1.5, "accuracy", 0.25, 100, 200, 0.0});
  log.append({2, "mpsl", 1.0, "", std::nullopt, 100, 200, 0.0});
  CHECK_THROWS_AS(log.append({2, "mpsl", 0.9, "", std::nullopt, 0, 0, 0.0}), MetricError);
  CHECK(log.losses() == std::vector<double>{1.5, 1.0});
  CHECK(log.metric_curve() == std::vector<double>{0.25});
  CHECK(MetricLog::csv_header() == "round,method,loss,metric_name,metric_value,up_bytes,down_bytes,wall_ms\n");
  const std::string csv = log.csv();
  CHECK(csv.find("1,mpsl,1.5,accuracy,0.25,100,200,0.000\n") != std::string::npos);
  CHECK(csv.find("2,mpsl,1,,,100,200,0.000\n") != std::string::npos);
  const auto dir = temp_dir("log");
  log.write_csv(dir / "m.csv");
  log.write_csv(dir / "m.csv", true);
  std::ifstream in(dir / "m.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 5);
}

TEST_CASE("toy FLOPs match a hand count of multiply-accumulates") {
  model::ModelConfig c;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 4;
  c.modalities = {model::Modality::kText};
  c.max_text_len = 4;  // seq 5 with cls
  c.num_classes = 3;
  REQUIRE(c.seq_total() == 5);
  const std::size_t s = 5, d = 8, h = 2, hd = 4, f = 32;
  std::size_t macs = 0;
  for (std::size_t i = 0; i < s; ++i) macs += d * 3 * d;  // qkv projection
  for (std::size_t k = 0; k < h; ++k) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) macs += hd;  // scores
      for (std::size_t j = 0; j < s; ++j) macs += hd;  // weighted values
    }
  }
  for (std::size_t i = 0; i < s; ++i) macs += d * d + d * f + f * d;  // out, fc1, fc2
  CHECK(block_flops(c, s) == doctest::Approx(2.0 * static_cast<double>(macs)));
  const double tail = 2.0 * d * 3;
  CHECK(flops_model(c, CostRole::kServer, CostMethod::kMpsl) == doctest::Approx(3.0 * (2.0 * macs + tail)));
  CHECK(flops_model(c, CostRole::kClient, CostMethod::kMpsl) == 0.0);  // text is a lookup

  c.modalities = {model::Modality::kVision};
  c.image_size = 8;
  c.patch_size = 4;
  CHECK(tokenizer_flops(c) == doctest::Approx(2.0 * 4 * 16 * 8));
}

TEST_CASE("FLOPs grow with width, depth and sequence; full freezing leaves only the tail") {
  auto c = tiny_config(DType::kFloat32);
  for (auto role : {CostRole::kClient, CostRole::kServer}) {
    auto m = role == CostRole::kClient ? CostMethod::kFedAvg : CostMethod::kMpsl;
    auto base = flops_model(c, role, m);
    auto wider = c;
    wider.embed_dim = 32;
    auto deeper = c;
    deeper.depth = 3;
    auto longer = c;
    longer.max_text_len = 12;
    CHECK(flops_model(wider, role, m) > base);
    CHECK(flops_model(deeper, role, m) > base);
    CHECK(flops_model(longer, role, m) > base);
  }
  c.freeze_first_k = c.depth;
  const double fwd = tokenizer_flops(c) + encoder_flops(c) + tail_flops(c);
  CHECK(flops_model(c, CostRole::kClient, CostMethod::kFedAvg, true) == doctest::Approx(fwd + 2.0 * tail_flops(c)));
}

TEST_CASE("ViT-B client compute and parameter ratios") {
  const auto c = paper_pair(model::Preset::kB);
  const double ratio = flops_model(c, CostRole::kClient, CostMethod::kFedAvg) /
                       flops_model(c, CostRole::kClient, CostMethod::kMpsl);
  CHECK(ratio >= 100.0);
  CHECK(ratio >= 258.0 / 3.0);
  CHECK(ratio <= 258.0 * 3.0);
  const double pr = static_cast<double>(client_params(c, CostMethod::kFedAvg)) /
                    static_cast<double>(client_params(c, CostMethod::kMpsl));
  CHECK(pr >= 20.0);
  CHECK(pr >= 43.7 / 3.0);
  CHECK(pr <= 43.7 * 3.0);
  CHECK(client_params(c, CostMethod::kMpsl) == model::count_params(c, model::Role::kHead, true));
}

TEST_CASE("communication: MPSL ignores depth, FedAvg overtakes it on large encoders") {
  auto c = paper_pair(model::Preset::kB);
  const auto base = comm_model(c, CostMethod::kMpsl);
  for (std::size_t depth : {2u, 6u, 24u}) {
    auto d = c;
    d.depth = depth;
    d.freeze_first_k = depth / 2;
    CHECK(comm_model(d, CostMethod::kMpsl).total_mb() == base.total_mb());
    CHECK(client_params(d, CostMethod::kMpsl) == client_params(c, CostMethod::kMpsl));
  }
  double prev_ratio = 0.0;
  std::size_t prev_params = 0;
  std::vector<double> ratios;
  for (auto p : model::all_presets()) {
    const auto pc = paper_pair(p);
    const double ratio = comm_model(pc, CostMethod::kFedAvg).total_mb() / comm_model(pc, CostMethod::kMpsl).total_mb();
    CHECK(ratio > prev_ratio);
    prev_ratio = ratio;
    CHECK(client_params(pc, CostMethod::kFedAvg) > prev_params);
    prev_params = client_params(pc, CostMethod::kFedAvg);
    ratios.push_back(ratio);
    MESSAGE(std::string(model::to_string(p)), " fedavg/mpsl MB ratio ", ratio);
  }
  CHECK(ratios[ratios.size() - 1] > 1.0);
  CHECK(ratios[ratios.size() - 2] > 1.0);
  CHECK(ratios.front() < 1.0);
  const auto fc = comm_model(c, CostMethod::kFedClip);
  CHECK(fc.total_mb() < comm_model(c, CostMethod::kFedAvg).total_mb());
}

TEST_CASE("FedAvg round bytes are two parameter copies plus framing") {
  const auto c = paper_pair(model::Preset::kTi);
  const auto rb = round_bytes(c, CostMethod::kFedAvg, 4);
  std::uint64_t headers = 0;
  std::size_t count = 0;
  for (const auto& s : model::parameter_specs(c)) {
    if (!s.trainable) continue;
    headers += serialized_size(s.shape, DType::kFloat32);
    count += std::accumulate(s.shape.begin(), s.shape.end(), std::size_t{1}, std::multiplies<>());
  }
  CHECK(count == client_params(c, CostMethod::kFedAvg));
  const std::uint64_t tensor_overhead = headers - 4 * count;
  CHECK(rb.up + rb.down == 2 * 4 * count + 2 * transport::kHeaderSize + 4 + 2 * tensor_overhead);
}

TEST_CASE("ledger-measured bytes equal the analytic model") {
  struct Case {
    model::ModelConfig c;
    std::size_t clients;
    std::size_t batch;
  };
  std::vector<Case> cases;
  {
    auto c = tiny_config(DType::kFloat32);
    cases.push_back({c, 2, 8});
  }
  {
    auto c = tiny_config(DType::kFloat32);
    c.modalities = {model::Modality::kVision, model::Modality::kAudio};
    c.fusion = model::Fusion::kLate;
    c.audio_samples = 256;
    cases.push_back({c, 3, 9});
  }
  {
    auto c = tiny_config(DType::kFloat64);
    c.task = model::Task::kRetrieval;
    cases.push_back({c, 2, 8});
  }
  for (const auto& k : cases) {
    const auto d = tiny_data(k.c, 12);
    const auto shards = even_shards(d.train.size(), k.clients);
    auto t = plain_sgd(k.clients, 3, k.batch);
    const std::size_t bn = k.batch / k.clients;
    CommSetting s;
    s.batch_per_client = bn;
    s.samples_per_client = shards[0].size();
    for (auto method : {CostMethod::kMpsl, CostMethod::kFedAvg}) {
      transport::ByteLedger ledger;
      if (method == CostMethod::kMpsl) {
        protocol::run_mpsl(k.c, t, d, shards, &ledger);
      } else {
        baselines::run_fedavg(k.c, t, d, shards, &ledger);
      }
      const auto rb = round_bytes(k.c, method, bn);
      for (std::uint32_t n = 0; n < k.clients; ++n) {
        for (std::uint32_t r = 1; r <= t.rounds; ++r) {
          CHECK(ledger.round_bytes(n, transport::Direction::kUplink, r) == rb.up);
          CHECK(ledger.round_bytes(n, transport::Direction::kDownlink, r) == rb.down);
        }
      }
      const auto rep = transport::ledger_report(ledger, rounds_per_epoch(method, s));
      const auto model = comm_model(k.c, method, s);
      CHECK(rep.up_mb == doctest::Approx(model.up_mb_per_epoch).epsilon(1e-12));
      CHECK(rep.down_mb == doctest::Approx(model.down_mb_per_epoch).epsilon(1e-12));
      if (method == CostMethod::kFedAvg) CHECK(ledger.type_bytes(transport::MsgType::kActivations) == 0);
    }
  }
}

TEST_CASE("cost report CSV") {
  std::vector<CostReport> rows;
  for (auto p : model::all_presets()) {
    for (auto m : {CostMethod::kMpsl, CostMethod::kFedAvg}) rows.push_back(cost_report(paper_pair(p), model::to_string(p), m));
  }
  const std::string csv = cost_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  CHECK(csv.rfind("method,preset,client_params,client_gflops,server_gflops,up_mb_per_epoch,down_mb_per_epoch\n", 0) == 0);
  const auto avg = average({rows[0], rows[2]});
  CHECK(avg.client_gflops == doctest::Approx((rows[0].client_gflops + rows[2].client_gflops) / 2));
  CHECK_THROWS_AS(parse_cost_method("fedprox"), ConfigError);
}

TEST_CASE("embedding export round-trips") {
  auto c = tiny_config(DType::kFloat32);
  c.task = model::Task::kRetrieval;
  const auto d = tiny_data(c, 5);
  const auto m = model::init_model(c, 4);
  const auto dir = temp_dir("emb");
  export_embeddings(m, d.test, dir / "e.csv", 7);
  const auto back = import_embeddings(dir / "e.csv");
  const auto mem = embedding_rows(m, d.test, 7);
  REQUIRE(back.size() == d.test.size() * c.modalities.size());
  REQUIRE(back.size() == mem.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].sample == mem[i].sample);
    CHECK(back[i].modality == mem[i].modality);
    double norm = 0.0;
    for (std::size_t j = 0; j < c.proj_dim; ++j) {
      CHECK(std::abs(back[i].values[j] - mem[i].values[j]) < 1e-6);
      norm += back[i].values[j] * back[i].values[j];
    }
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-4);
  }
  CHECK_THROWS_AS(export_embeddings(m, d.test, dir / "missing" / "e.csv"), IoError);
}
