#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   "GRNDCKPT"            8-byte magic
//   u32 version           currently 1
//   u64 config hash       FNV-1a over the model config JSON below
//   u64 n, n bytes        model config JSON
//   u64 n, n bytes        run config JSON (may be empty)
//   u64 count             stored tensors, then per tensor:
//       u64 n, n bytes name; u32 rank; u64 dims[rank]; f64 values[prod(dims)]
//   u8 has_adam           then, if set: f64 lr, beta1, beta2, epsilon; u64 step;
//                         u64 count; count x (m tensor, v tensor) in the same tensor layout
//   u64 count             epoch metrics: u64 epoch; f64 train_loss, l_att, l_rec, val_accuracy
//   u64 best_epoch

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grounder/model.hpp"
#include "grounder/optim.hpp"

namespace grounder {

struct Checkpoint {
  ModelParams model;
  std::string run_config;  // JSON text
  std::optional<AdamState> adam;
  std::vector<EpochMetrics> metrics;
  std::size_t best_epoch = 0;
};

std::uint64_t fnv1a(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// DataError on a malformed file or a config hash mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace grounder
