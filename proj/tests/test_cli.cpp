// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "mpsl/cli/experiment.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/model/checkpoint.hpp"

using namespace mpsl;
using mpsl::cli::ExperimentConfig;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_json() {
  return json::parse(R"({
    "model": {"embed_dim": 16, "depth": 2, "heads": 2, "mlp_ratio": 2, "patch_size": 4, "image_size": 8,
              "vocab_size": 32, "max_text_len": 8, "num_classes": 4, "proj_dim": 8, "dtype": "float64"},
    "data": {"synthetic": {"samples_per_class": 10}, "num_clients": 2},
    "training": {"method": "mpsl", "rounds": 4, "global_batch": 8, "seeds": [0, 1], "eval_every": 2}
  })");
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mpsl_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string config_error(const json& j) {
  try {
    cli::experiment_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MPSL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(config_error(tiny_json()).empty());
  auto j = tiny_json();
  j["extra"] = 1;
  CHECK(config_error(j).find("extra") != std::string::npos);
  j = tiny_json();
  j["model"]["widht"] = 3;
  CHECK(config_error(j).find("model.widht") != std::string::npos);
  j = tiny_json();
  j["training"]["lr"] = 0.1;
  CHECK(config_error(j).find("training.lr") != std::string::npos);
  j = tiny_json();
  j["data"]["synthetic"]["colour"] = 1;
  CHECK(config_error(j).find("data.synthetic.colour") != std::string::npos);
  j = tiny_json();
  j["transport"] = {{"kind", "udp"}};
  CHECK(config_error(j).find("udp") != std::string::npos);
  j = tiny_json();
  j["training"]["method"] = "fedprox";
  CHECK(!config_error(j).empty());
  j = tiny_json();
  j["data"]["synthetic"]["image_size"] = 32;
  CHECK(config_error(j).find("image_size") != std::string::npos);
}

TEST_CASE("resolved config parses back to the same experiment") {
  const auto e = cli::experiment_from_json(tiny_json());
  const auto back = cli::experiment_from_json(cli::to_json(e));
  CHECK(cli::to_json(back) == cli::to_json(e));
  CHECK(e.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(e.training.num_clients == 2);
  CHECK(e.data.image_size == e.model.image_size);
}

TEST_CASE("centralized zero rounds writes an empty log and the initial checkpoint") {
  auto j = tiny_json();
  j["training"]["method"] = "centralized";
  j["training"]["rounds"] = 0;
  const auto e = cli::experiment_from_json(j);
  const auto out = scratch("zero");
  const auto runs = cli::run_train(e, out);
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].log.empty());
  CHECK(slurp(out / "seed_0" / "metrics.csv") == analysis::MetricLog::csv_header());
  const auto loaded = model::load_model((out / "seed_1" / "model.ckpt").string(), e.model);
  const auto init = model::init_model(e.model, 1);
  const auto a = loaded.named();
  const auto b = init.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].second.data();
    const auto y = b[i].second.data();
    CHECK_MESSAGE(std::equal(x.begin(), x.end(), y.begin(), y.end()), a[i].first);
  }
  for (const char* f : {"cost.csv", "resolved_config.json"}) CHECK(fs::exists(out / "seed_0" / f));
  const auto resolved = json::parse(slurp(out / "seed_1" / "resolved_config.json"));
  CHECK(resolved["seed"] == 1);
  CHECK(resolved["version"] == cli::kVersion);
  CHECK(fs::exists(out / "summary.csv"));
}

TEST_CASE("train with one client matches centralized") {
  auto j = tiny_json();
  j["data"]["num_clients"] = 1;
  j["training"]["rounds"] = 50;
  j["training"]["momentum"] = 0.0;
  j["training"]["eval_every"] = 0;
  j["training"]["seeds"] = {3};
  const auto mpsl_runs = cli::run_train(cli::experiment_from_json(j), scratch("n1_mpsl"));
  j["training"]["method"] = "centralized";
  const auto cen_runs = cli::run_train(cli::experiment_from_json(j), scratch("n1_cen"));
  const auto a = mpsl_runs[0].log.losses();
  const auto b = cen_runs[0].log.losses();
  REQUIRE(a.size() == 50);
  REQUIRE(b.size() == 50);
  for (std::size_t r = 0; r < a.size(); ++r) CHECK_MESSAGE(std::abs(a[r] - b[r]) < 1e-5, "round " << r + 1);
}

TEST_CASE("sequential reruns are byte identical") {
  for (const char* method : {"mpsl", "fedavg", "centralized"}) {
    auto j = tiny_json();
    j["training"]["method"] = method;
    const auto e = cli::experiment_from_json(j);
    const auto a = scratch(std::string("rerun_a_") + method);
    const auto b = scratch(std::string("rerun_b_") + method);
    cli::run_train(e, a);
    cli::run_train(e, b);
    for (const char* f : {"seed_0/metrics.csv", "seed_1/metrics.csv", "seed_1/model.ckpt", "summary.csv"}) {
      CHECK_MESSAGE(slurp(a / f) == slurp(b / f), method << " " << f);
    }
  }
}

TEST_CASE("tcp and channel transports give the same run") {
  auto j = tiny_json();
  j["training"]["seeds"] = {0};
  const auto channel = cli::run_train(cli::experiment_from_json(j), scratch("tr_channel"));
  j["transport"] = {{"kind", "tcp"}, {"sequential", true}};
  const auto tcp = cli::run_train(cli::experiment_from_json(j), scratch("tr_tcp"));
  CHECK(channel[0].log.csv() == tcp[0].log.csv());
  j["transport"] = {{"kind", "tcp"}, {"sequential", false}};
  const auto threaded = cli::run_train(cli::experiment_from_json(j), scratch("tr_tcp_thr"));
  CHECK(channel[0].log.losses() == threaded[0].log.losses());
  CHECK(channel[0].log.metric_curve().back() == threaded[0].log.metric_curve().back());
}

TEST_CASE("batch sweep on retrieval gives one group per value and seed") {
  auto j = tiny_json();
  j["model"]["task"] = "retrieval";
  j["data"]["synthetic"] = {{"num_pairs", 100}};
  j["training"]["rounds"] = 2;
  j["training"]["seeds"] = {0, 1, 2};
  j["data"]["min_per_client"] = 32;
  j["sweep"] = {{"axis", "batch"}, {"values", {8, 64}}};
  const auto csv = cli::run_sweep(cli::experiment_from_json(j), scratch("sweep_batch"));
  const auto rows = lines(csv);
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] + "\n" == cli::sweep_csv_header());
  std::map<std::string, std::set<std::string>> groups;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = fields(rows[i]);
    CHECK(f[0] == "batch");
    groups[f[1]].insert(f[2]);
    CHECK(f[6] == "recall@1");
  }
  CHECK(groups.size() == 2);
  CHECK(groups["8"].size() == 3);
  CHECK(groups["64"].size() == 3);
}

TEST_CASE("fusion sweep on one modality gives identical metrics") {
  auto j = tiny_json();
  j["model"]["modalities"] = {"vision"};
  j["training"]["seeds"] = {0, 1};
  j["sweep"] = {{"axis", "fusion"}, {"values", {"early", "late"}}};
  const auto rows = lines(cli::run_sweep(cli::experiment_from_json(j), scratch("sweep_fusion")));
  REQUIRE(rows.size() == 5);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto early = fields(rows[1 + s]);
    const auto late = fields(rows[3 + s]);
    CHECK(early[1] == "early");
    CHECK(late[1] == "late");
    CHECK(std::abs(std::stod(early[5]) - std::stod(late[5])) < 1e-9);
    CHECK(std::abs(std::stod(early[7]) - std::stod(late[7])) < 1e-9);
  }
}

TEST_CASE("blocks sweep trainable parameter column increases") {
  auto j = tiny_json();
  j["model"]["depth"] = 4;
  j["training"]["rounds"] = 1;
  j["training"]["seeds"] = {0};
  j["sweep"] = {{"axis", "blocks"}, {"values", {3, 2, 0}}};
  const auto rows = lines(cli::run_sweep(cli::experiment_from_json(j), scratch("sweep_blocks")));
  REQUIRE(rows.size() == 4);
  std::size_t prev = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const std::size_t p = std::stoul(fields(rows[i])[8]);
    CHECK(p > prev);
    prev = p;
  }
  j["sweep"]["values"] = {5};
  CHECK_THROWS_AS(cli::run_sweep(cli::experiment_from_json(j), scratch("sweep_bad")), ConfigError);
}

TEST_CASE("exit codes separate config, runtime and transport failures") {
  const auto dir = scratch("exit");
  fs::create_directories(dir);
  auto j = tiny_json();
  j["training"]["rounds"] = 1;
  j["training"]["seeds"] = {0};
  j["outputs"] = {{"directory", (dir / "ok").string()}};
  std::ofstream(dir / "ok.json") << j.dump();
  CHECK(run_cli("train --config " + (dir / "ok.json").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "seed_0" / "metrics.csv"));

  auto bad = j;
  bad["model"]["depht"] = 2;
  std::ofstream(dir / "bad.json") << bad.dump();
  CHECK(run_cli("train --config " + (dir / "bad.json").string()) == 2);
  CHECK(run_cli("train") == 2);
  CHECK(run_cli("cost --presets Q") == 2);

  auto starved = j;
  starved["data"]["min_per_client"] = 1000;
  std::ofstream(dir / "starved.json") << starved.dump();
  CHECK(run_cli("train --config " + (dir / "starved.json").string()) == 3);

  // Nothing listens on port 1.
  CHECK(run_cli("join --config " + (dir / "ok.json").string() + " --client 0 --address 127.0.0.1:1") == 4);
}
