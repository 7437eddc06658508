#include "stripflow/csc.hpp"

#include <stdexcept>

#include "stripflow/ops.hpp"

namespace stripflow {

void add_csc_params(ModelParams& params, const RunConfig& cfg) {
  const int C = cfg.channels, Cp = cfg.cprime;
  params.add("csc.qv.weight", {Cp, C, 1, 1});
  params.add("csc.qv.bias", {Cp});
  if (cfg.queries == QueryMode::kSeparate) {
    params.add("csc.qh.weight", {Cp, C, 1, 1});
    params.add("csc.qh.bias", {Cp});
  }
  params.add("csc.kv.weight", {Cp, C, 1, 1});
  params.add("csc.kv.bias", {Cp});
  params.add("csc.kh.weight", {Cp, C, 1, 1});
  params.add("csc.kh.bias", {Cp});
}

OrthogonalQueries make_queries(const TensorPtr& f1, const ModelParams& params, const RunConfig& cfg) {
  OrthogonalQueries q;
  q.qv = conv2d(f1, params.get("csc.qv.weight"), params.get("csc.qv.bias"), 1, 0);
  if (cfg.queries == QueryMode::kSeparate) {
    q.qh = conv2d(f1, params.get("csc.qh.weight"), params.get("csc.qh.bias"), 1, 0);
  } else {
    q.qh = q.qv;
  }
  return q;
}

StripKeys make_strip_keys(const TensorPtr& f2, const ModelParams& params, const RunConfig& cfg) {
  (void)cfg;
  TensorPtr kv = conv2d(f2, params.get("csc.kv.weight"), params.get("csc.kv.bias"), 1, 0);
  TensorPtr kh = conv2d(f2, params.get("csc.kh.weight"), params.get("csc.kh.bias"), 1, 0);
  StripKeys keys;
  keys.khat_v = strip_pool(kv, 1);  // mean over H -> C'×W
  keys.khat_h = strip_pool(kh, 2);  // mean over W -> C'×H
  return keys;
}

OrthogonalVolumes cross_strip_correlation(const OrthogonalQueries& q, const StripKeys& k,
                                          const RunConfig& cfg) {
  if (q.qv->dim(0) != k.khat_v->dim(0) || q.qh->dim(0) != k.khat_h->dim(0)) {
    throw std::invalid_argument("cross_strip_correlation: query/key channel mismatch, " +
                                shape_str(q.qv->shape) + " vs " + shape_str(k.khat_v->shape));
  }
  OrthogonalVolumes vols;
  vols.cv = cross_corr_op(q.qv, k.khat_v, cfg.corr_scaled);   // H×W×W
  vols.chh = cross_corr_op(q.qh, k.khat_h, cfg.corr_scaled);  // H×W×H
  return vols;
}

}  // namespace stripflow
