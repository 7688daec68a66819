// SPDX-License-Identifier: Apache-2.0

#include "mpsl/analysis/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "mpsl/errors.hpp"

namespace mpsl::analysis {

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("accuracy: logits must be 2-D");
  if (logits.dim(0) == 0) throw MetricError("accuracy of an empty evaluation set");
  if (labels.size() != logits.dim(0)) throw ShapeError("accuracy: label count does not match logits");
  const std::size_t c = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.data().subspan(i * c, c);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

double directional_recall(const Tensor& sim, std::size_t k, bool rows) {
  const std::size_t n = sim.dim(0);
  auto at = [&](std::size_t q, std::size_t cand) {
    return rows ? sim.data()[q * n + cand] : sim.data()[cand * n + q];
  };
  std::size_t hits = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double truth = at(q, q);
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      const double s = at(q, j);
      if (s > truth || (s == truth && j < q)) ++rank;
    }
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

Recall recall_at_k(const Tensor& sim, std::size_t k) {
  if (sim.rank() != 2 || sim.dim(0) != sim.dim(1)) throw ShapeError("recall_at_k: similarity matrix must be square");
  if (sim.dim(0) == 0) throw MetricError("recall of an empty evaluation set");
  if (k == 0 || k > sim.dim(0)) {
    throw MetricError("recall_at_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(sim.dim(0)) + "]");
  }
  return {directional_recall(sim, k, true), directional_recall(sim, k, false)};
}

std::size_t rounds_to_fraction_of_peak(std::span<const double> curve, double fraction) {
  if (curve.empty()) throw MetricError("empty metric curve");
  const double peak = *std::max_element(curve.begin(), curve.end());
  const double target = fraction * peak;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i] >= target) return i;
  }
  return curve.size() - 1;
}

void MetricLog::append(MetricRecord r) {
  if (!records_.empty() && r.round <= records_.back().round) {
    throw MetricError("metric log rounds must increase (got " + std::to_string(r.round) + " after " +
                      std::to_string(records_.back().round) + ")");
  }
  records_.push_back(std::move(r));
}

std::vector<double> MetricLog::losses() const {
  std::vector<double> out;
  for (const auto& r : records_) out.push_back(r.loss);
  return out;
}

std::vector<double> MetricLog::metric_curve() const {
  std::vector<double> out;
  for (const auto& r : records_) {
    if (r.metric_value) out.push_back(*r.metric_value);
  }
  return out;
}

std::vector<std::uint32_t> MetricLog::metric_rounds() const {
  std::vector<std::uint32_t> out;
  for (const auto& r : records_) {
    if (r.metric_value) out.push_back(r.round);
  }
  return out;
}

std::string MetricLog::csv_header() {
  return "round,method,loss,metric_name,metric_value,up_bytes,down_bytes,wall_ms\n";
}

std::string MetricLog::csv() const {
  std::string out;
  char buf[64];
  for (const auto& r : records_) {
    out += std::to_string(r.round) + "," + r.method + ",";
    std::snprintf(buf, sizeof buf, "%.9g", r.loss);
    out += buf;
    out += "," + r.metric_name + ",";
    if (r.metric_value) {
      std::snprintf(buf, sizeof buf, "%.9g", *r.metric_value);
      out += buf;
    }
    out += "," + std::to_string(r.up_bytes) + "," + std::to_string(r.down_bytes) + ",";
    std::snprintf(buf, sizeof buf, "%.3f", r.wall_ms);
    out += buf;
    out += "\n";
  }
  return out;
}

void MetricLog::write_csv(const std::filesystem::path& path, bool append) const {
  const bool fresh = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << csv_header();
  out << csv();
}

}  // namespace mpsl::analysis
