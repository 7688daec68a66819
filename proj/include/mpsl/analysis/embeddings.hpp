// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mpsl/model/model.hpp"
#include "mpsl/model/inputs.hpp"

namespace mpsl::analysis {

struct EmbeddingRow {
  std::size_t sample = 0;
  std::string modality;
  std::vector<double> values;
};

// Final per-modality embeddings of a retrieval model, one row per sample and
// modality. Columns: sample_id, modality, e0 .. e{proj-1}.
std::vector<EmbeddingRow> embedding_rows(const model::SplitModel& m, const std::vector<model::Sample>& samples,
                                         std::size_t batch = 64);
void export_embeddings(const model::SplitModel& m, const std::vector<model::Sample>& samples,
                       const std::filesystem::path& path, std::size_t batch = 64);
std::vector<EmbeddingRow> import_embeddings(const std::filesystem::path& path);

}  // namespace mpsl::analysis
