#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stripflow/tensor.hpp"

namespace stripflow {

// Named map from parameter path to tensor-with-grad, ordered by creation.
// Creation order fixes the initialization RNG stream, so a (config, seed)
// pair always yields bitwise-identical parameters.
//
// get() counts accesses; the regression-initialization contract asserts a
// zero count across its modes.
struct ModelParams {
  std::vector<std::pair<std::string, TensorPtr>> entries;
  uint64_t init_seed = 0;
  mutable uint64_t access_count = 0;

  TensorPtr add(const std::string& path, Shape shape);
  TensorPtr get(const std::string& path) const;  // throws on unknown path
  bool has(const std::string& path) const;
  int64_t total_count() const;
  void zero_grads();
  void ensure_grads();
};

// Fan-in-scaled uniform init for every ".weight" entry (bound sqrt(3/fan_in),
// so the per-tensor std targets 1/sqrt(fan_in)); ".bias" entries stay zero.
// Deterministic in (creation order, seed).
void init_params(ModelParams& params, uint64_t seed);

// Self-describing little-endian binary checkpoint:
//   magic "STRIPFLO", u32 version, u32 entry count, then per entry
//   u32 path length, path bytes, u32 rank, i32 dims[rank], f32 payload.
// The init seed rides along as entry "meta.init_seed" (two f32 slots holding
// the raw halves of the u64). Round-trips are bitwise lossless.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace stripflow
