// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpsl/analysis/cost.hpp"
#include "mpsl/analysis/embeddings.hpp"
#include "mpsl/cli/experiment.hpp"
#include "mpsl/data/partition.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/model/checkpoint.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kRuntime = 3, kTransport = 4 };

using mpsl::cli::ExperimentConfig;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string transport;
  bool sequential = false;
  bool threaded = false;
};

ExperimentConfig load(const Common& o) {
  ExperimentConfig e = mpsl::cli::load_experiment(o.config);
  if (!o.transport.empty()) {
    if (o.transport == "tcp") e.transport.kind = mpsl::cli::TransportKind::kTcp;
    else if (o.transport == "channel") e.transport.kind = mpsl::cli::TransportKind::kChannel;
    else throw mpsl::ConfigError("--transport: expected channel or tcp");
  }
  if (o.sequential) e.transport.sequential = true;
  if (o.threaded) e.transport.sequential = false;
  if (!o.out.empty()) e.out_dir = o.out;
  return e;
}

void add_common(CLI::App* cmd, Common& o, bool transport) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory (overrides outputs.directory)");
  cmd->add_option("--seed", o.seed, "run only this seed");
  if (transport) {
    cmd->add_option("--transport", o.transport, "channel or tcp");
    auto* s = cmd->add_flag("--sequential", o.sequential, "lock-step driver (deterministic)");
    cmd->add_flag("--threaded", o.threaded, "one thread per client")->excludes(s);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal parallel split learning experiments"};
  app.set_version_flag("--version", mpsl::cli::kVersion);
  app.require_subcommand(1);

  Common train_o;
  auto* train = app.add_subcommand("train", "train one method for every configured seed");
  add_common(train, train_o, true);

  std::vector<std::string> presets{"Ti", "S", "B", "L", "H"};
  std::vector<std::string> methods{"mpsl", "fedavg"};
  std::string cost_out;
  std::size_t cost_batch = 4, cost_samples = 128, cost_epochs = 1;
  auto* cost = app.add_subcommand("cost", "analytic compute and communication report");
  cost->add_option("--presets", presets, "model presets")->delimiter(',');
  cost->add_option("--methods", methods, "mpsl, fedavg, fedclip, centralized")->delimiter(',');
  cost->add_option("--batch", cost_batch, "per-client batch");
  cost->add_option("--samples", cost_samples, "per-client samples per epoch");
  cost->add_option("--local-epochs", cost_epochs, "FedAvg local epochs");
  cost->add_option("--out", cost_out, "CSV path (stdout when omitted)");

  Common sweep_o;
  auto* sweep = app.add_subcommand("sweep", "train across the values of one axis");
  add_common(sweep, sweep_o, true);

  Common emb_o;
  std::string checkpoint;
  std::string split = "test";
  auto* emb = app.add_subcommand("export-embeddings", "write per-modality embeddings of a retrieval model");
  add_common(emb, emb_o, false);
  emb->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  emb->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  Common gen_o;
  auto* gen = app.add_subcommand("gen-data", "export the synthetic dataset and its client partition");
  add_common(gen, gen_o, false);

  Common serve_o;
  std::string port_file;
  auto* serve = app.add_subcommand("serve", "MPSL server process for a multi-process TCP run");
  add_common(serve, serve_o, false);
  serve->add_option("--port-file", port_file, "write the bound port here");

  Common join_o;
  std::uint32_t client = 0;
  std::string address;
  auto* join = app.add_subcommand("join", "MPSL client process for a multi-process TCP run");
  add_common(join, join_o, false);
  join->add_option("--client", client, "client index")->required();
  join->add_option("--address", address, "server host:port")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train) {
      const auto e = load(train_o);
      const auto runs = mpsl::cli::run_train(e, e.out_dir, train_o.seed);
      const auto s = mpsl::cli::summarize(runs);
      std::printf("%s: %zu seed(s), final loss %.6g [%.6g, %.6g]", mpsl::protocol::to_string(e.method), runs.size(),
                  s.loss_mean, s.loss_min, s.loss_max);
      if (s.has_metric) std::printf(", %s %.4f [%.4f, %.4f]", s.metric_name.c_str(), s.metric_mean, s.metric_min, s.metric_max);
      std::printf("\n");
    } else if (*cost) {
      mpsl::analysis::CommSetting cs;
      cs.batch_per_client = cost_batch;
      cs.samples_per_client = cost_samples;
      cs.local_epochs = cost_epochs;
      std::vector<mpsl::analysis::CostReport> rows;
      for (const auto& m : methods) {
        const auto method = mpsl::analysis::parse_cost_method(m);
        for (const auto& p : presets) {
          const auto preset = mpsl::model::parse_preset(p);
          rows.push_back(mpsl::analysis::cost_report(mpsl::model::preset_config(preset), p, method, cs));
        }
      }
      if (cost_out.empty()) std::cout << mpsl::analysis::cost_csv(rows);
      else mpsl::analysis::write_cost_csv(rows, cost_out);
    } else if (*sweep) {
      ExperimentConfig e = load(sweep_o);
      if (sweep_o.seed) e.seeds = {*sweep_o.seed};
      std::cout << mpsl::cli::run_sweep(e, e.out_dir);
    } else if (*emb) {
      const auto e = load(emb_o);
      const auto m = mpsl::model::load_model(checkpoint, e.model);
      const auto d = mpsl::cli::make_dataset(e, emb_o.seed.value_or(e.seeds.front()));
      const std::string out = emb_o.out.empty() ? (e.out_dir / "embeddings.csv").string() : emb_o.out;
      mpsl::analysis::export_embeddings(m, split == "train" ? d.train : d.test, out);
    } else if (*gen) {
      const auto e = load(gen_o);
      const auto seed = gen_o.seed.value_or(e.seeds.front());
      const auto d = mpsl::cli::make_dataset(e, seed);
      const auto p = mpsl::cli::make_partition(e, d, seed);
      mpsl::data::export_dataset(d, e.out_dir);
      const auto labels = mpsl::protocol::partition_labels(d);
      mpsl::data::write_partition_csv(p, labels, e.out_dir / "partition.csv");
    } else if (*serve) {
      ExperimentConfig e = load(serve_o);
      const auto seed = serve_o.seed.value_or(e.seeds.front());
      const auto r = mpsl::cli::serve(e, seed, port_file);
      const auto dir = e.out_dir / ("seed_" + std::to_string(seed));
      mpsl::cli::write_run(e, seed, r, dir);
    } else if (*join) {
      const auto e = load(join_o);
      mpsl::cli::join(e, join_o.seed.value_or(e.seeds.front()), client, address);
    }
  } catch (const mpsl::ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return kConfig;
  } catch (const mpsl::TransportError& err) {
    std::fprintf(stderr, "transport error: %s\n", err.what());
    return kTransport;
  } catch (const mpsl::DecodeError& err) {
    std::fprintf(stderr, "transport error: %s\n", err.what());
    return kTransport;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kRuntime;
  }
  return kOk;
}
