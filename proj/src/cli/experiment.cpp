// SPDX-License-Identifier: Apache-2.0

#include "mpsl/cli/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "mpsl/analysis/cost.hpp"
#include "mpsl/baselines/centralized.hpp"
#include "mpsl/baselines/fedavg.hpp"
#include "mpsl/errors.hpp"
#include "mpsl/json_fields.hpp"
#include "mpsl/model/checkpoint.hpp"
#include "mpsl/serialize.hpp"

namespace mpsl::cli {

namespace {

const char* to_string(TransportKind k) { return k == TransportKind::kTcp ? "tcp" : "channel"; }

TransportKind parse_transport(const std::string& s) {
  if (s == "channel") return TransportKind::kChannel;
  if (s == "tcp") return TransportKind::kTcp;
  throw ConfigError("unknown transport '" + s + "' (expected channel or tcp)");
}

void require_match(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("data." + what + " disagrees with the model section");
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  data.validate();
  training.validate();
  if (!(alpha > 0.0)) throw ConfigError("data.alpha: must be positive");
  if (seeds.empty()) throw ConfigError("training.seeds: at least one seed is required");
  if (model.task == model::Task::kRetrieval && training.global_batch < 2 * training.num_clients) {
    throw ConfigError("training.global_batch: retrieval needs at least two samples per client");
  }
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  JsonFields top(j, "config", {"model", "data", "training", "transport", "outputs", "sweep"});
  ExperimentConfig e;
  if (top.has("model")) e.model = model::model_config_from_json(j["model"], "model");

  std::optional<std::size_t> clients;
  if (top.has("data")) {
    const auto& d = j["data"];
    JsonFields f(d, "data", {"synthetic", "alpha", "num_clients", "min_per_client"});
    if (f.has("synthetic")) e.data = data::synthetic_spec_from_json(d["synthetic"], "data.synthetic");
    if (f.has("synthetic")) {
      const auto& s = d["synthetic"];
      if (s.contains("task")) require_match(e.data.task == e.model.task, "synthetic.task");
      if (s.contains("modalities")) require_match(e.data.modalities == e.model.modalities, "synthetic.modalities");
      if (s.contains("num_classes") && e.model.task == model::Task::kClassification) {
        require_match(e.data.num_classes == e.model.num_classes, "synthetic.num_classes");
      }
      for (const char* k : {"image_size", "image_channels", "audio_samples", "text_len", "vocab_size"}) {
        if (s.contains(k)) throw ConfigError(std::string("data.synthetic.") + k + ": geometry is taken from the model section");
      }
    }
    f.real("alpha", e.alpha);
    if (f.has("num_clients")) {
      std::size_t n = 0;
      f.size("num_clients", n);
      clients = n;
    }
    f.size("min_per_client", e.min_per_client);
  }
  e.data.task = e.model.task;
  e.data.modalities = e.model.modalities;
  if (e.model.task == model::Task::kClassification) e.data.num_classes = e.model.num_classes;
  e.data.match(e.model);

  if (top.has("training")) {
    nlohmann::json t = j["training"];
    if (!t.is_object()) throw ConfigError("training: expected an object");
    if (t.contains("method")) {
      if (!t["method"].is_string()) throw ConfigError("training.method: expected a string");
      try {
        e.method = protocol::parse_method(t["method"].get<std::string>());
      } catch (const ConfigError& err) {
        throw ConfigError(std::string("training.method: ") + err.what());
      }
      t.erase("method");
    }
    if (t.contains("seeds")) {
      if (!t["seeds"].is_array()) throw ConfigError("training.seeds: expected an array of integers");
      e.seeds.clear();
      for (const auto& s : t["seeds"]) {
        if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("training.seeds: expected non-negative integers");
        e.seeds.push_back(s.get<std::uint64_t>());
      }
      t.erase("seeds");
    }
    if (clients && t.contains("num_clients") && t["num_clients"] != *clients) {
      throw ConfigError("training.num_clients: disagrees with data.num_clients");
    }
    if (clients && !t.contains("num_clients")) t["num_clients"] = *clients;
    e.training = protocol::training_config_from_json(t, "training");
  } else if (clients) {
    e.training.num_clients = *clients;
  }

  if (top.has("transport")) {
    JsonFields f(j["transport"], "transport", {"kind", "address", "sequential"});
    f.parsed("kind", e.transport.kind, parse_transport);
    if (auto a = f.str("address")) {
      try {
        transport::parse_address(*a);
      } catch (const ConfigError& err) {
        throw ConfigError(std::string("transport.address: ") + err.what());
      }
      e.transport.address = *a;
    }
    f.boolean("sequential", e.transport.sequential);
  }
  if (top.has("outputs")) {
    JsonFields f(j["outputs"], "outputs", {"directory"});
    if (auto d = f.str("directory")) e.out_dir = *d;
  }
  if (top.has("sweep")) {
    JsonFields f(j["sweep"], "sweep", {"axis", "values"});
    SweepSection s;
    if (auto a = f.str("axis")) s.axis = *a;
    static const std::vector<std::string> axes{"batch", "blocks", "depth", "fusion", "clients"};
    if (std::find(axes.begin(), axes.end(), s.axis) == axes.end()) {
      throw ConfigError("sweep.axis: unknown axis '" + s.axis + "' (expected batch, blocks, depth, fusion or clients)");
    }
    if (!f.has("values") || !j["sweep"]["values"].is_array() || j["sweep"]["values"].empty()) {
      throw ConfigError("sweep.values: expected a non-empty array");
    }
    for (const auto& v : j["sweep"]["values"]) s.values.push_back(v);
    e.sweep = s;
  }
  e.validate();
  return e;
}

nlohmann::json to_json(const ExperimentConfig& e) {
  nlohmann::json t = protocol::to_json(e.training);
  t["method"] = protocol::to_string(e.method);
  t["seeds"] = e.seeds;
  nlohmann::json synthetic = data::to_json(e.data);
  for (const char* k : {"image_size", "image_channels", "audio_samples", "text_len", "vocab_size"}) synthetic.erase(k);
  nlohmann::json j{
      {"model", model::to_json(e.model)},
      {"data",
       {{"synthetic", synthetic},
        {"alpha", e.alpha},
        {"num_clients", e.training.num_clients},
        {"min_per_client", e.min_per_client}}},
      {"training", t},
      {"transport",
       {{"kind", to_string(e.transport.kind)}, {"address", e.transport.address}, {"sequential", e.transport.sequential}}},
      {"outputs", {{"directory", e.out_dir.string()}}},
  };
  if (e.sweep) j["sweep"] = {{"axis", e.sweep->axis}, {"values", e.sweep->values}};
  return j;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw ConfigError(path.string() + ": " + err.what());
  }
  return experiment_from_json(j);
}

data::Dataset make_dataset(const ExperimentConfig& e, std::uint64_t seed) {
  data::SyntheticSpec s = e.data;
  s.seed = e.data.seed + seed;
  return data::generate(s);
}

data::Partition make_partition(const ExperimentConfig& e, const data::Dataset& d, std::uint64_t seed) {
  std::size_t min = e.min_per_client;
  if (min == 0) {
    const auto alloc = data::allocate_batch(e.training.global_batch, e.training.num_clients);
    min = *std::max_element(alloc.begin(), alloc.end());
  }
  return data::dirichlet_partition(protocol::partition_labels(d), e.training.num_clients, e.alpha, seed, min);
}

protocol::TrainingConfig training_for(const ExperimentConfig& e, std::uint64_t seed) {
  protocol::TrainingConfig t = e.training;
  t.seed = seed;
  return t;
}

namespace {

protocol::TrainResult run_mpsl_tcp(const ExperimentConfig& e, const protocol::TrainingConfig& t,
                                   const data::Dataset& d, const protocol::Shards& shards,
                                   transport::ByteLedger* ledger) {
  const auto [host, port] = transport::parse_address(e.transport.address);
  transport::TcpListener listener(host, port);
  const auto timeout = std::chrono::seconds(30);
  if (e.transport.sequential) {
    std::vector<std::unique_ptr<transport::TcpEndpoint>> client_side, server_side;
    std::vector<protocol::Link> links;
    for (std::uint32_t n = 0; n < shards.size(); ++n) {
      client_side.push_back(transport::tcp_connect(host, listener.port(), ledger, n, timeout));
      server_side.push_back(listener.accept(ledger, timeout));
      server_side.back()->set_client(n);
      links.push_back({client_side.back().get(), server_side.back().get()});
    }
    return protocol::run_mpsl_sequential(e.model, t, d, shards, links, *ledger);
  }
  model::SplitModel init = model::init_model(e.model, t.seed);
  auto clients = protocol::make_clients(e.model, t, d, shards, init);
  std::vector<std::exception_ptr> errors(clients.size());
  std::vector<std::thread> threads;
  for (std::size_t n = 0; n < clients.size(); ++n) {
    threads.emplace_back([&, n] {
      try {
        auto ep = transport::tcp_connect(host, listener.port(), ledger, static_cast<std::uint32_t>(n), timeout);
        protocol::client_loop(clients[n], *ep, t.rounds);
      } catch (...) {
        errors[n] = std::current_exception();
      }
    });
  }
  protocol::TrainResult res;
  std::exception_ptr server_error;
  try {
    std::vector<std::unique_ptr<transport::TcpEndpoint>> accepted;
    std::vector<transport::Endpoint*> eps;
    for (std::size_t n = 0; n < clients.size(); ++n) {
      accepted.push_back(listener.accept(ledger, timeout));
      eps.push_back(accepted.back().get());
    }
    res = protocol::server_loop(e.model, t, d, eps, *ledger);
  } catch (...) {
    server_error = std::current_exception();
  }
  for (auto& th : threads) th.join();
  if (server_error) std::rethrow_exception(server_error);
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return res;
}

}  // namespace

protocol::TrainResult run_seed(const ExperimentConfig& e, std::uint64_t seed, transport::ByteLedger* ledger) {
  const auto d = make_dataset(e, seed);
  const auto t = training_for(e, seed);
  transport::ByteLedger own;
  if (!ledger) ledger = &own;
  switch (e.method) {
    case protocol::Method::kCentralized:
      return baselines::run_centralized(e.model, t, d);
    case protocol::Method::kFedAvg:
      return baselines::run_fedavg(e.model, t, d, protocol::shards_of(make_partition(e, d, seed)), ledger);
    case protocol::Method::kMpsl: {
      const auto shards = protocol::shards_of(make_partition(e, d, seed));
      if (e.transport.kind == TransportKind::kTcp) return run_mpsl_tcp(e, t, d, shards, ledger);
      return protocol::run_mpsl(e.model, t, d, shards, ledger, {},
                                e.transport.sequential ? protocol::RunMode::kSequential : protocol::RunMode::kThreaded);
    }
  }
  throw ConfigError("unknown method");
}

void write_run(const ExperimentConfig& e, std::uint64_t seed, const protocol::TrainResult& r,
               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  r.log.write_csv(dir / "metrics.csv");
  model::save_checkpoint((dir / "model.ckpt").string(), e.model, r.model.named());

  analysis::CostMethod cm = analysis::CostMethod::kMpsl;
  if (e.method == protocol::Method::kFedAvg) cm = analysis::CostMethod::kFedAvg;
  if (e.method == protocol::Method::kCentralized) cm = analysis::CostMethod::kCentralized;
  analysis::CommSetting s;
  const auto alloc = data::allocate_batch(e.training.global_batch, e.training.num_clients);
  s.batch_per_client = alloc.front();
  s.samples_per_client = std::max<std::size_t>(1, e.data.task == model::Task::kRetrieval
                                                      ? e.data.num_pairs * 4 / 5 / e.training.num_clients
                                                      : e.data.num_classes * e.data.samples_per_class * 4 / 5 /
                                                            e.training.num_clients);
  s.local_epochs = e.training.local_epochs;
  const std::string name = e.model.preset ? model::to_string(*e.model.preset) : "custom";
  analysis::write_cost_csv({analysis::cost_report(e.model, name, cm, s)}, dir / "cost.csv");

  nlohmann::json resolved = to_json(e);
  resolved["seed"] = seed;
  resolved["version"] = kVersion;
  const std::string text = resolved.dump(2) + "\n";
  write_file(dir / "resolved_config.json", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

ExperimentConfig apply_axis(const ExperimentConfig& e, const std::string& axis, const nlohmann::json& value) {
  ExperimentConfig out = e;
  auto count = [&]() -> std::size_t {
    if (!value.is_number_integer() || value.get<long long>() < 0) {
      throw ConfigError("sweep.values: axis '" + axis + "' needs non-negative integers");
    }
    return value.get<std::size_t>();
  };
  if (axis == "batch") {
    out.training.global_batch = count();
  } else if (axis == "blocks") {
    out.model.freeze_first_k = count();
  } else if (axis == "depth") {
    out.model.depth = count();
    out.model.freeze_first_k = out.model.depth / 2;
  } else if (axis == "fusion") {
    if (!value.is_string()) throw ConfigError("sweep.values: axis 'fusion' needs strings");
    out.model.fusion = model::parse_fusion(value.get<std::string>());
  } else if (axis == "clients") {
    out.training.num_clients = count();
  } else {
    throw ConfigError("sweep.axis: unknown axis '" + axis + "'");
  }
  out.sweep.reset();
  out.validate();
  return out;
}

SeedSummary summarize(const std::vector<protocol::TrainResult>& runs) {
  SeedSummary s;
  std::vector<double> losses, metrics;
  for (const auto& r : runs) {
    if (!r.log.empty()) losses.push_back(r.log.records().back().loss);
    for (auto it = r.log.records().rbegin(); it != r.log.records().rend(); ++it) {
      if (it->metric_value) {
        metrics.push_back(*it->metric_value);
        s.metric_name = it->metric_name;
        break;
      }
    }
  }
  auto stats = [](const std::vector<double>& v, double& mean, double& lo, double& hi) {
    if (v.empty()) return;
    double sum = 0;
    for (double x : v) sum += x;
    mean = sum / static_cast<double>(v.size());
    lo = *std::min_element(v.begin(), v.end());
    hi = *std::max_element(v.begin(), v.end());
  };
  stats(losses, s.loss_mean, s.loss_min, s.loss_max);
  stats(metrics, s.metric_mean, s.metric_min, s.metric_max);
  s.has_metric = !metrics.empty();
  return s;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::uint64_t total(const protocol::TrainResult& r, bool up) {
  std::uint64_t b = 0;
  for (const auto& rec : r.log.records()) b += up ? rec.up_bytes : rec.down_bytes;
  return b;
}

std::string with_seed_context(std::uint64_t seed, const std::exception& err) {
  return "seed " + std::to_string(seed) + ": " + err.what();
}

template <class F>
auto with_context(std::uint64_t seed, F&& f) {
  try {
    return f();
  } catch (const ConfigError& err) {
    throw ConfigError(with_seed_context(seed, err));
  } catch (const TransportError& err) {
    throw TransportError(with_seed_context(seed, err));
  } catch (const DecodeError&) {
    throw;
  } catch (const Error& err) {
    throw Error(with_seed_context(seed, err));
  }
}

}  // namespace

std::vector<protocol::TrainResult> run_train(const ExperimentConfig& e, const std::filesystem::path& out,
                                             std::optional<std::uint64_t> only_seed) {
  std::vector<std::uint64_t> seeds = only_seed ? std::vector<std::uint64_t>{*only_seed} : e.seeds;
  std::vector<protocol::TrainResult> runs;
  for (auto s : seeds) {
    runs.push_back(with_context(s, [&] { return run_seed(e, s); }));
    write_run(e, s, runs.back(), out / ("seed_" + std::to_string(s)));
  }
  const auto sum = summarize(runs);
  std::ostringstream csv;
  csv << "method,seeds,final_loss_mean,final_loss_min,final_loss_max,metric_name,metric_mean,metric_min,metric_max\n";
  csv << protocol::to_string(e.method) << ',' << seeds.size() << ',' << fmt(sum.loss_mean) << ',' << fmt(sum.loss_min)
      << ',' << fmt(sum.loss_max) << ',' << sum.metric_name << ',';
  if (sum.has_metric) csv << fmt(sum.metric_mean) << ',' << fmt(sum.metric_min) << ',' << fmt(sum.metric_max);
  else csv << ",,";
  csv << '\n';
  write_text(out / "summary.csv", csv.str());
  nlohmann::json resolved = to_json(e);
  resolved["version"] = kVersion;
  resolved["seeds_run"] = seeds;
  write_text(out / "resolved_config.json", resolved.dump(2) + "\n");
  return runs;
}

std::string sweep_csv_header() {
  return "axis,value,seed,method,rounds,final_loss,metric_name,final_metric,trainable_params,up_bytes,down_bytes\n";
}

std::string run_sweep(const ExperimentConfig& e, const std::filesystem::path& out) {
  if (!e.sweep) throw ConfigError("sweep: section missing from config");
  std::string csv = sweep_csv_header();
  for (const auto& v : e.sweep->values) {
    const std::string label = v.is_string() ? v.get<std::string>() : v.dump();
    ExperimentConfig x;
    try {
      x = apply_axis(e, e.sweep->axis, v);
    } catch (const ConfigError& err) {
      throw ConfigError(e.sweep->axis + "=" + label + ": " + err.what());
    }
    const std::size_t trainable = model::count_params(x.model, std::nullopt, true);
    std::vector<protocol::TrainResult> runs;
    try {
      runs = run_train(x, out / (e.sweep->axis + "_" + label));
    } catch (const ConfigError& err) {
      throw ConfigError(e.sweep->axis + "=" + label + ": " + err.what());
    } catch (const TransportError& err) {
      throw TransportError(e.sweep->axis + "=" + label + ": " + err.what());
    } catch (const Error& err) {
      throw Error(e.sweep->axis + "=" + label + ": " + err.what());
    }
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& r = runs[i];
      const auto curve = r.log.metric_curve();
      std::string name;
      for (const auto& rec : r.log.records()) {
        if (rec.metric_value) name = rec.metric_name;
      }
      csv += e.sweep->axis + ',' + label + ',' + std::to_string(x.seeds[i]) + ',' + protocol::to_string(x.method) + ',' +
             std::to_string(r.log.size()) + ',' + (r.log.empty() ? "" : fmt(r.log.records().back().loss)) + ',' + name +
             ',' + (curve.empty() ? "" : fmt(curve.back())) + ',' + std::to_string(trainable) + ',' +
             std::to_string(total(r, true)) + ',' + std::to_string(total(r, false)) + '\n';
    }
  }
  write_text(out / "sweep.csv", csv);
  return csv;
}

protocol::TrainResult serve(const ExperimentConfig& e, std::uint64_t seed, const std::filesystem::path& port_file) {
  if (e.method != protocol::Method::kMpsl) throw ConfigError("training.method: serve runs mpsl only");
  const auto d = make_dataset(e, seed);
  const auto t = training_for(e, seed);
  const auto [host, port] = transport::parse_address(e.transport.address);
  transport::TcpListener listener(host, port);
  if (!port_file.empty()) {
    // Written via rename so a watcher never sees a partial file.
    const auto tmp = port_file.string() + ".tmp";
    write_text(tmp, std::to_string(listener.port()) + "\n");
    std::filesystem::rename(tmp, port_file);
  }
  transport::ByteLedger ledger;
  std::vector<std::unique_ptr<transport::TcpEndpoint>> accepted;
  std::vector<transport::Endpoint*> eps;
  for (std::size_t n = 0; n < t.num_clients; ++n) {
    accepted.push_back(listener.accept(&ledger, std::chrono::seconds(60)));
    accepted.back()->set_record_receives(true);
    eps.push_back(accepted.back().get());
  }
  return protocol::server_loop(e.model, t, d, eps, ledger);
}

void join(const ExperimentConfig& e, std::uint64_t seed, std::uint32_t client, const std::string& address) {
  if (e.method != protocol::Method::kMpsl) throw ConfigError("training.method: join runs mpsl only");
  const auto d = make_dataset(e, seed);
  const auto t = training_for(e, seed);
  if (client >= t.num_clients) throw ConfigError("--client: index out of range for training.num_clients");
  const auto shards = protocol::shards_of(make_partition(e, d, seed));
  auto clients = protocol::make_clients(e.model, t, d, shards, model::init_model(e.model, t.seed));
  const auto [host, port] = transport::parse_address(address);
  transport::ByteLedger ledger;
  auto ep = transport::tcp_connect(host, port, &ledger, client, std::chrono::seconds(30));
  protocol::client_loop(clients[client], *ep, t.rounds);
}

}  // namespace mpsl::cli
