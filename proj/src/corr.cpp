#include "stripflow/corr.hpp"

#include <stdexcept>

#include "stripflow/ops.hpp"

namespace stripflow {

TensorPtr all_pair_correlation(const FeaturePair& f, bool scaled) {
  return all_pair_corr_op(f.f1, f.f2, scaled);
}

TensorPtr aggregate(const TensorPtr& allpair, const OrthogonalVolumes& vols) {
  return aggregate_op(allpair, vols.cv, vols.chh);
}

CorrelationPyramid build_pyramid(const TensorPtr& chat) {
  if (chat->rank() != 5) {
    throw std::invalid_argument("build_pyramid: expected H×W×ch×H×W aggregated volume, got " +
                                shape_str(chat->shape));
  }
  CorrelationPyramid pyr;
  pyr.kernels = {1, 2, 4, 8};
  pyr.channels = chat->dim(2);
  for (int k : pyr.kernels) pyr.levels.push_back(avg_pool2d(chat, k));
  return pyr;
}

TensorPtr lookup(const CorrelationPyramid& pyr, const TensorPtr& flow, int radius) {
  TensorPtr features = lookup_op(pyr.levels, pyr.kernels, flow, radius);
  if (pyr.cv_1d && pyr.ch_1d) {
    TensorPtr sv = lookup1d_op(pyr.cv_1d, flow, 0, radius);
    TensorPtr sh = lookup1d_op(pyr.ch_1d, flow, 1, radius);
    features = concat_channels({features, sv, sh});
  }
  return features;
}

int lookup_feature_count(const RunConfig& cfg) {
  const int side = 2 * cfg.radius + 1;
  const int pyramid_channels = cfg.csc && cfg.aggregate_mode == AggregateMode::kBroadcastSum ? 2 : 1;
  int n = 4 * pyramid_channels * side * side;
  if (cfg.csc && cfg.aggregate_mode == AggregateMode::kSeparate1d) n += 2 * side;
  return n;
}

}  // namespace stripflow
