#pragma once

#include <vector>

#include "stripflow/config.hpp"
#include "stripflow/csc.hpp"
#include "stripflow/encoders.hpp"
#include "stripflow/tensor.hpp"

namespace stripflow {

// All-pair feature correlation; entry (y1,x1,y2,x2) = <F1(:,y1,x1), F2(:,y2,x2)>.
TensorPtr all_pair_correlation(const FeaturePair& f, bool scaled);

// Folds the orthogonal volumes into channel 1 of the aggregated volume by
// broadcast sum; channel 0 carries the all-pair volume bitwise.
TensorPtr aggregate(const TensorPtr& allpair, const OrthogonalVolumes& vols);

// Static per-pair pyramid over the aggregated volume's last two dims with
// kernels 1, 2, 4, 8, plus the raw 1D volumes for the separate-1d lookup.
struct CorrelationPyramid {
  std::vector<TensorPtr> levels;  // H×W×ch×Hk×Wk
  std::vector<int> kernels;       // {1, 2, 4, 8}
  int channels = 0;
  TensorPtr cv_1d, ch_1d;  // set in separate-1d mode
};

CorrelationPyramid build_pyramid(const TensorPtr& chat);

// Per-pixel local sampling of all levels at the flow-displaced position;
// in separate-1d mode appends (2r+1) samples from each raw 1D volume.
TensorPtr lookup(const CorrelationPyramid& pyr, const TensorPtr& flow, int radius);

// Feature count produced by lookup for a given configuration.
int lookup_feature_count(const RunConfig& cfg);

}  // namespace stripflow
