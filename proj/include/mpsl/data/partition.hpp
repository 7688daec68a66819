// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace mpsl::data {

struct Partition {
  std::vector<std::uint32_t> assignment;  // sample index -> client
  std::size_t num_clients = 0;
  std::size_t num_classes = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;                    // seed of the accepted draw
  std::vector<std::vector<std::size_t>> histograms;  // [client][class]

  std::vector<std::size_t> indices(std::uint32_t client) const;
  std::size_t size(std::uint32_t client) const;
};

// For each class draw p ~ Dir(alpha * 1_N) and allocate that class's samples
// multinomially. A draw leaving any client below min_per_client is redrawn
// with seed + 1, up to max_retries times.
Partition dirichlet_partition(std::span<const std::size_t> labels, std::size_t num_clients, double alpha,
                              std::uint64_t seed, std::size_t min_per_client = 1, std::size_t max_retries = 1000);

// Mean over clients of the largest class fraction.
double mean_top_class_mass(const Partition& p);

// Columns: sample_index, client_id, label.
void write_partition_csv(const Partition& p, std::span<const std::size_t> labels, const std::filesystem::path& path);

/// Epoch-wise shuffled mini-batches over one client's shard; the short
/// final batch of each epoch is dropped.
class BatchIterator {
 public:
  BatchIterator(std::vector<std::size_t> shard, std::size_t batch, std::uint64_t seed, std::uint32_t client = 0);

  std::vector<std::size_t> next();
  std::size_t batches_per_epoch() const { return shard_.size() / batch_; }
  std::size_t batch_size() const { return batch_; }
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();
  std::vector<std::size_t> shard_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

// Global batch split equally, remainder to the lowest client ids.
std::vector<std::size_t> allocate_batch(std::size_t global_batch, std::size_t num_clients);

}  // namespace mpsl::data
