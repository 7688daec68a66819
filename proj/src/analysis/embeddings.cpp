// SPDX-License-Identifier: Apache-2.0

#include "mpsl/analysis/embeddings.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mpsl/errors.hpp"
#include "mpsl/protocol/evaluate.hpp"

namespace mpsl::analysis {

std::vector<EmbeddingRow> embedding_rows(const model::SplitModel& m, const std::vector<model::Sample>& samples,
                                         std::size_t batch) {
  const auto emb = protocol::embed(m, samples, batch);
  std::vector<EmbeddingRow> rows;
  const std::size_t p = m.config.proj_dim;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t k = 0; k < emb.size(); ++k) {
      const auto v = emb[k].data().subspan(i * p, p);
      rows.push_back({i, model::to_string(m.config.modalities[k]), {v.begin(), v.end()}});
    }
  }
  return rows;
}

void export_embeddings(const model::SplitModel& m, const std::vector<model::Sample>& samples,
                       const std::filesystem::path& path, std::size_t batch) {
  const auto rows = embedding_rows(m, samples, batch);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embeddings to " + path.string());
  out << "sample_id,modality";
  for (std::size_t j = 0; j < m.config.proj_dim; ++j) out << ",e" << j;
  out << "\n";
  char buf[32];
  for (const auto& r : rows) {
    out << r.sample << "," << r.modality;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("failed writing embeddings to " + path.string());
}

std::vector<EmbeddingRow> import_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings from " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EmbeddingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    EmbeddingRow r;
    std::getline(ss, cell, ',');
    r.sample = std::stoul(cell);
    std::getline(ss, r.modality, ',');
    while (std::getline(ss, cell, ',')) r.values.push_back(std::stod(cell));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mpsl::analysis
