#pragma once

#include <cstdint>
#include <string>

namespace stripflow {

enum class InitMode { kZeros, kCriLiteral, kCriSoftArgmax, kFlowHead };
enum class AggregateMode { kBroadcastSum, kSeparate1d };
enum class QueryMode { kSeparate, kSame };

InitMode parse_init_mode(const std::string& s);
AggregateMode parse_aggregate_mode(const std::string& s);
QueryMode parse_query_mode(const std::string& s);
std::string to_string(InitMode m);
std::string to_string(AggregateMode m);
std::string to_string(QueryMode m);

// Fully resolved run settings; flag override > config file > these defaults.
struct RunConfig {
  // model dims
  int d = 4;            // feature downsample factor, one of {2, 4, 8}
  int channels = 64;    // feature channels C
  int cprime = 32;      // query/key channels C'
  int hidden = 64;      // GRU hidden channels; context encoder emits 2*hidden
  // correlation options
  bool corr_scaled = true;  // 1/sqrt(C) scaling of dot products
  int radius = 3;
  AggregateMode aggregate_mode = AggregateMode::kBroadcastSum;
  bool csc = true;
  QueryMode queries = QueryMode::kSeparate;
  // update block widths
  int motion_corr_dim = 96;
  int motion_flow_dim = 32;
  int motion_fused_dim = 80;
  int head_dim = 64;
  int gru_levels = 1;  // recorded stub; only the 1-level update block exists
  // refinement
  InitMode init_mode = InitMode::kCriSoftArgmax;
  int m = 12;
  // trainer
  double lr = 2e-3;
  double momentum = 0.9;
  double clip_norm = 1.0;
  int steps = 1000;
  int batch = 4;
  double gamma = 0.8;
  uint64_t seed = 0;
  int eval_cadence = 250;
  int eval_samples = 100;
  int train_eval_samples = 16;
  // synthetic data
  int height = 64;
  int width = 64;
  double max_disp = 8.0;
  std::string gen_kind = "translation";  // translation | affine | composite
  double texture_sigma = 2.0;
  // io
  std::string outdir = "out";

  int context_dim() const { return 2 * hidden; }
};

// Throws std::invalid_argument describing the first violated constraint.
void validate(const RunConfig& cfg);

// Sorted `key = value` lines mirroring the CLI option names.
std::string resolved_text(const RunConfig& cfg);

// Writes resolved_text to <outdir>/config.resolved, creating outdir.
void write_resolved(const RunConfig& cfg);

}  // namespace stripflow
