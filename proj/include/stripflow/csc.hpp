#pragma once

#include "stripflow/config.hpp"
#include "stripflow/params.hpp"
#include "stripflow/tensor.hpp"

namespace stripflow {

struct OrthogonalQueries {
  TensorPtr qv, qh;  // C'×H×W each
};

struct StripKeys {
  TensorPtr khat_v;  // C'×W, projected keys mean-pooled over H
  TensorPtr khat_h;  // C'×H, projected keys mean-pooled over W
};

// C_v indexes candidate horizontal positions x' (keys pooled over H leave a
// per-column descriptor); C_h indexes candidate vertical positions y'.
struct OrthogonalVolumes {
  TensorPtr cv;  // H×W×W
  TensorPtr chh;  // H×W×H
};

void add_csc_params(ModelParams& params, const RunConfig& cfg);

// Two 1×1 projections of F1. In the tied ("same") mode both queries come
// from the single registered projection.
OrthogonalQueries make_queries(const TensorPtr& f1, const ModelParams& params, const RunConfig& cfg);

// Two 1×1 projections of F2, then exact-mean strip pooling over H and W.
StripKeys make_strip_keys(const TensorPtr& f2, const ModelParams& params, const RunConfig& cfg);

OrthogonalVolumes cross_strip_correlation(const OrthogonalQueries& q, const StripKeys& k,
                                          const RunConfig& cfg);

}  // namespace stripflow
