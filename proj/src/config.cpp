#include "stripflow/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stripflow {

InitMode parse_init_mode(const std::string& s) {
  if (s == "zeros") return InitMode::kZeros;
  if (s == "cri-paper-literal") return InitMode::kCriLiteral;
  if (s == "cri-soft-argmax") return InitMode::kCriSoftArgmax;
  if (s == "flow-head") return InitMode::kFlowHead;
  throw std::invalid_argument("unknown init-mode: " + s +
                              " (expected zeros|cri-paper-literal|cri-soft-argmax|flow-head)");
}

AggregateMode parse_aggregate_mode(const std::string& s) {
  if (s == "broadcast-sum") return AggregateMode::kBroadcastSum;
  if (s == "separate-1d") return AggregateMode::kSeparate1d;
  throw std::invalid_argument("unknown aggregate-mode: " + s + " (expected broadcast-sum|separate-1d)");
}

QueryMode parse_query_mode(const std::string& s) {
  if (s == "separate") return QueryMode::kSeparate;
  if (s == "same") return QueryMode::kSame;
  throw std::invalid_argument("unknown queries mode: " + s + " (expected separate|same)");
}

std::string to_string(InitMode m) {
  switch (m) {
    case InitMode::kZeros: return "zeros";
    case InitMode::kCriLiteral: return "cri-paper-literal";
    case InitMode::kCriSoftArgmax: return "cri-soft-argmax";
    case InitMode::kFlowHead: return "flow-head";
  }
  return "?";
}

std::string to_string(AggregateMode m) {
  return m == AggregateMode::kBroadcastSum ? "broadcast-sum" : "separate-1d";
}

std::string to_string(QueryMode m) { return m == QueryMode::kSeparate ? "separate" : "same"; }

void validate(const RunConfig& cfg) {
  if (cfg.d != 2 && cfg.d != 4 && cfg.d != 8)
    throw std::invalid_argument("d must be one of 2, 4, 8; got " + std::to_string(cfg.d));
  if (cfg.channels < 4) throw std::invalid_argument("channels must be >= 4");
  if (cfg.cprime < 1 || cfg.cprime > cfg.channels)
    throw std::invalid_argument("cprime must lie in [1, channels]");
  if (cfg.hidden < 1) throw std::invalid_argument("hidden must be positive");
  if (cfg.radius < 0) throw std::invalid_argument("radius must be nonnegative");
  if (cfg.m < 1) throw std::invalid_argument("m must be >= 1");
  if (cfg.gru_levels != 1)
    throw std::invalid_argument("gru-levels " + std::to_string(cfg.gru_levels) +
                                " is a recorded variant only; this build implements the 1-level update block");
  if (!(cfg.lr > 0)) throw std::invalid_argument("lr must be positive");
  if (cfg.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (cfg.batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(cfg.clip_norm > 0)) throw std::invalid_argument("clip-norm must be positive");
  if (cfg.height < cfg.d || cfg.width < cfg.d || cfg.height % cfg.d != 0 || cfg.width % cfg.d != 0) {
    throw std::invalid_argument("image size " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height) +
                                " must be a positive multiple of d=" + std::to_string(cfg.d));
  }
  if (!(cfg.max_disp >= 0) || cfg.max_disp >= std::min(cfg.height, cfg.width))
    throw std::invalid_argument("max-disp must lie in [0, min(height, width))");
  if (!cfg.csc && (cfg.init_mode == InitMode::kCriLiteral || cfg.init_mode == InitMode::kCriSoftArgmax))
    throw std::invalid_argument("init-mode " + to_string(cfg.init_mode) + " requires --csc on");
  if (cfg.eval_cadence < 1 || cfg.eval_samples < 1 || cfg.train_eval_samples < 1)
    throw std::invalid_argument("eval cadence and sample counts must be positive");
  if (cfg.gen_kind != "translation" && cfg.gen_kind != "affine" && cfg.gen_kind != "composite")
    throw std::invalid_argument("gen-kind must be translation|affine|composite, got " + cfg.gen_kind);
  if (!(cfg.texture_sigma > 0)) throw std::invalid_argument("texture-sigma must be positive");
}

std::string resolved_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << "aggregate-mode = " << to_string(cfg.aggregate_mode) << "\n";
  os << "batch = " << cfg.batch << "\n";
  os << "channels = " << cfg.channels << "\n";
  os << "clip-norm = " << cfg.clip_norm << "\n";
  os << "cprime = " << cfg.cprime << "\n";
  os << "csc = " << (cfg.csc ? "on" : "off") << "\n";
  os << "d = " << cfg.d << "\n";
  os << "eval-cadence = " << cfg.eval_cadence << "\n";
  os << "eval-samples = " << cfg.eval_samples << "\n";
  os << "gamma = " << cfg.gamma << "\n";
  os << "gen-kind = " << cfg.gen_kind << "\n";
  os << "gru-levels = " << cfg.gru_levels << "\n";
  os << "head-dim = " << cfg.head_dim << "\n";
  os << "height = " << cfg.height << "\n";
  os << "hidden = " << cfg.hidden << "\n";
  os << "init-mode = " << to_string(cfg.init_mode) << "\n";
  os << "lr = " << cfg.lr << "\n";
  os << "m = " << cfg.m << "\n";
  os << "max-disp = " << cfg.max_disp << "\n";
  os << "momentum = " << cfg.momentum << "\n";
  os << "motion-corr-dim = " << cfg.motion_corr_dim << "\n";
  os << "motion-flow-dim = " << cfg.motion_flow_dim << "\n";
  os << "motion-fused-dim = " << cfg.motion_fused_dim << "\n";
  os << "outdir = " << cfg.outdir << "\n";
  os << "queries = " << to_string(cfg.queries) << "\n";
  os << "radius = " << cfg.radius << "\n";
  os << "scaled-corr = " << (cfg.corr_scaled ? "on" : "off") << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "steps = " << cfg.steps << "\n";
  os << "texture-sigma = " << cfg.texture_sigma << "\n";
  os << "train-eval-samples = " << cfg.train_eval_samples << "\n";
  os << "width = " << cfg.width << "\n";
  return os.str();
}

void write_resolved(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.outdir);
  const std::string path = cfg.outdir + "/config.resolved";
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << resolved_text(cfg);
}

}  // namespace stripflow
