#pragma once

#include "stripflow/config.hpp"
#include "stripflow/params.hpp"
#include "stripflow/tensor.hpp"

namespace stripflow {

struct ImagePair {
  TensorPtr i1, i2;  // 3×H0×W0, values in [0, 1]
};

struct FeaturePair {
  TensorPtr f1, f2;  // C×H×W at the 1/d grid
  int d = 0;
};

// Context split: a tanh-bounded hidden-state initializer and a softplus
// (nonnegative) input-context part, both hidden×H×W.
struct ContextFeatures {
  TensorPtr hidden, inp;
};

// Registers one encoder trunk (three conv blocks whose strides multiply to
// d; 7×7 entry for d=8, 3×3 otherwise).
void add_encoder_params(ModelParams& params, const std::string& prefix, int in_ch, int out_ch, int d);

// Runs a registered trunk. Each conv is followed by softplus except the
// last, whose activation the caller owns.
TensorPtr run_encoder_trunk(const ModelParams& params, const std::string& prefix, const TensorPtr& img,
                            int d);

// Two-branch feature encoder with unshared weights; rejects spatial sizes
// not divisible by d with a crop diagnostic.
FeaturePair encode_features(const ImagePair& pair, const ModelParams& params, const RunConfig& cfg);

ContextFeatures encode_context(const TensorPtr& i1, const ModelParams& params, const RunConfig& cfg);

}  // namespace stripflow
