// SPDX-License-Identifier: Apache-2.0

#include "mpsl/data/partition.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "mpsl/errors.hpp"

namespace mpsl::data {

std::vector<std::size_t> Partition::indices(std::uint32_t client) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == client) out.push_back(i);
  }
  return out;
}

std::size_t Partition::size(std::uint32_t client) const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), client));
}

Partition dirichlet_partition(std::span<const std::size_t> labels, std::size_t num_clients, double alpha,
                              std::uint64_t seed, std::size_t min_per_client, std::size_t max_retries) {
  if (!(alpha > 0.0)) throw ConfigError("dirichlet alpha must be positive");
  if (num_clients == 0) throw ConfigError("need at least one client");
  if (labels.empty()) throw PartitionError("cannot partition an empty dataset");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].empty()) throw PartitionError("class " + std::to_string(c) + " has no samples");
  }

  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    Partition p;
    p.num_clients = num_clients;
    p.num_classes = classes;
    p.alpha = alpha;
    p.seed = seed + attempt;
    p.assignment.assign(labels.size(), 0);
    p.histograms.assign(num_clients, std::vector<std::size_t>(classes, 0));
    std::mt19937_64 rng(p.seed);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> w(num_clients);
      for (auto& x : w) x = gamma(rng);
      // Tiny alphas can underflow every draw; fall back to one-hot.
      if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0) {
        std::fill(w.begin(), w.end(), 0.0);
        w[rng() % num_clients] = 1.0;
      }
      std::discrete_distribution<std::uint32_t> pick(w.begin(), w.end());
      for (std::size_t i : by_class[c]) {
        const std::uint32_t n = pick(rng);
        p.assignment[i] = n;
        ++p.histograms[n][c];
      }
    }
    bool ok = true;
    for (std::uint32_t n = 0; n < num_clients; ++n) {
      const auto& h = p.histograms[n];
      if (std::accumulate(h.begin(), h.end(), std::size_t{0}) < min_per_client) ok = false;
    }
    if (ok) return p;
  }
  throw PartitionError("no Dirichlet draw gave every one of " + std::to_string(num_clients) + " clients at least " +
                       std::to_string(min_per_client) + " samples after " + std::to_string(max_retries + 1) +
                       " attempts; use a larger dataset or a larger alpha");
}

double mean_top_class_mass(const Partition& p) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& h : p.histograms) {
    const std::size_t n = std::accumulate(h.begin(), h.end(), std::size_t{0});
    if (n == 0) continue;
    total += static_cast<double>(*std::max_element(h.begin(), h.end())) / static_cast<double>(n);
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

void write_partition_csv(const Partition& p, std::span<const std::size_t> labels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sample_index,client_id,label\n";
  for (std::size_t i = 0; i < p.assignment.size(); ++i) out << i << ',' << p.assignment[i] << ',' << labels[i] << '\n';
}

BatchIterator::BatchIterator(std::vector<std::size_t> shard, std::size_t batch, std::uint64_t seed,
                             std::uint32_t client)
    : shard_(std::move(shard)), batch_(batch), rng_(seed) {
  if (batch_ == 0) throw ConfigError("client " + std::to_string(client) + ": batch size must be positive");
  if (batch_ > shard_.size()) {
    throw ConfigError("client " + std::to_string(client) + ": batch size " + std::to_string(batch_) +
                      " exceeds its shard of " + std::to_string(shard_.size()) + " samples");
  }
  reshuffle();
}

void BatchIterator::reshuffle() {
  std::shuffle(shard_.begin(), shard_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchIterator::next() {
  if (cursor_ + batch_ > shard_.size()) {
    reshuffle();
    ++epoch_;
  }
  std::vector<std::size_t> out(shard_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               shard_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

std::vector<std::size_t> allocate_batch(std::size_t global_batch, std::size_t num_clients) {
  if (num_clients == 0) throw ConfigError("need at least one client");
  std::vector<std::size_t> out(num_clients, global_batch / num_clients);
  for (std::size_t i = 0; i < global_batch % num_clients; ++i) ++out[i];
  return out;
}

}  // namespace mpsl::data
