// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpsl/tensor.hpp"

namespace mpsl::analysis {

// Fraction of rows whose first maximal logit is the label.
double accuracy(const Tensor& logits, std::span<const std::size_t> labels);

struct Recall {
  double forward = 0.0;   // rows (e.g. image) -> columns (e.g. text)
  double backward = 0.0;  // columns -> rows
  double mean() const { return 0.5 * (forward + backward); }
};

// Square similarity matrix with true matches on the diagonal. A query's rank
// counts candidates scoring higher, plus equal-scoring candidates with a
// lower index.
Recall recall_at_k(const Tensor& sim, std::size_t k);

// Smallest index whose value reaches fraction * max(curve).
std::size_t rounds_to_fraction_of_peak(std::span<const double> curve, double fraction = 0.95);

struct MetricRecord {
  std::uint32_t round = 0;
  std::string method;
  double loss = 0.0;
  std::string metric_name;               // empty when not evaluated this round
  std::optional<double> metric_value;
  std::uint64_t up_bytes = 0;            // this round, summed over clients
  std::uint64_t down_bytes = 0;
  double wall_ms = 0.0;
};

/// Append-only per-round log; rounds must strictly increase.
class MetricLog {
 public:
  void append(MetricRecord r);
  const std::vector<MetricRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

  std::vector<double> losses() const;
  // Evaluated metric values in round order, with their rounds.
  std::vector<double> metric_curve() const;
  std::vector<std::uint32_t> metric_rounds() const;

  // Columns: round, method, loss, metric_name, metric_value, up_bytes,
  // down_bytes, wall_ms.
  void write_csv(const std::filesystem::path& path, bool append = false) const;
  std::string csv() const;
  static std::string csv_header();

 private:
  std::vector<MetricRecord> records_;
};

}  // namespace mpsl::analysis
