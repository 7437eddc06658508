#pragma once

#include "stripflow/tensor.hpp"

namespace stripflow {

// Differentiable primitives. Forward passes run eagerly; each result node
// carries a closure that chain-rules into its parents. Reductions (dot
// products, pooling windows, softmax sums) accumulate in double and store
// float32.

// Elementwise, same shape.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, float s);
TensorPtr offset(const TensorPtr& a, float c);
TensorPtr tanh_op(const TensorPtr& a);
TensorPtr sigmoid_op(const TensorPtr& a);
TensorPtr softplus_op(const TensorPtr& a);
TensorPtr abs_op(const TensorPtr& a);

// a: M×K, b: K×N -> M×N.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

// x: C×H×W, w: C'×C×k×k (k odd), bias: C'. Output extents use the usual
// floor arithmetic H' = (H + 2p - k)/s + 1; rejects empty outputs and
// channel mismatches.
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias, int stride, int padding);

// Pools the last two dims with an edge-truncated kernel×kernel mean;
// output extents are ceil(H/k), ceil(W/k). kernel=1 is a bitwise copy.
TensorPtr avg_pool2d(const TensorPtr& x, int kernel);

// Max-subtracted softmax over the last dim.
TensorPtr softmax_lastdim(const TensorPtr& x);

// img: C×H×W, coords: H'×W'×2 holding continuous (x, y) positions.
// Out-of-bounds coordinates clamp to the border. Differentiable in both
// the image and the coordinates.
TensorPtr bilinear_sample(const TensorPtr& img, const TensorPtr& coords);

// Channel-dim (dim 0) concat / slice for C×H×W stacks.
TensorPtr concat_channels(const std::vector<TensorPtr>& parts);
TensorPtr slice_channels(const TensorPtr& x, int begin, int count);

TensorPtr reshape(const TensorPtr& x, Shape new_shape);
// Permutation of a rank-3 tensor's axes: out axis i draws from in axis perm[i].
TensorPtr permute3(const TensorPtr& x, int p0, int p1, int p2);

TensorPtr sum_all(const TensorPtr& x);             // -> scalar (shape {1})
TensorPtr sum_lastdim(const TensorPtr& x);         // ...×K -> ...
TensorPtr stack_lastdim(const TensorPtr& a, const TensorPtr& b);  // S -> S×2

// Mean over one full spatial axis of a C×H×W tensor: axis=1 pools each
// column over H (-> C×W), axis=2 pools each row over W (-> C×H).
TensorPtr strip_pool(const TensorPtr& x, int axis);

// f1, f2: C×H×W -> H×W×H×W of feature dot products; entry (y1,x1,y2,x2) is
// <f1(:,y1,x1), f2(:,y2,x2)>, scaled by 1/sqrt(C) when scaled is set.
TensorPtr all_pair_corr_op(const TensorPtr& f1, const TensorPtr& f2, bool scaled);

// q: C×H×W, khat: C×K -> H×W×K of per-pixel query/key dot products.
TensorPtr cross_corr_op(const TensorPtr& q, const TensorPtr& khat, bool scaled);

// allpair: H×W×H×W, cv: H×W×W, ch: H×W×H -> H×W×2×H×W. Channel 0 carries
// the all-pair volume bitwise; channel 1 at (y1,x1,y2,x2) is
// cv(y1,x1,x2) + ch(y1,x1,y2).
TensorPtr aggregate_op(const TensorPtr& allpair, const TensorPtr& cv, const TensorPtr& ch);

// levels[k]: H×W×ch×Hk×Wk pooled volumes with kernels[k] ∈ {1,2,4,8};
// flow: H×W×2 in coarse-grid units. Samples each level's per-pixel slice on
// the (2r+1)² grid centred at ((x+u)/κ, (y+v)/κ), border-clamped, and
// concatenates levels×channels×offsets -> L×H×W.
TensorPtr lookup_op(const std::vector<TensorPtr>& levels, const std::vector<int>& kernels,
                    const TensorPtr& flow, int radius);

// vol: H×W×K of per-pixel 1D correlation signals; flow: H×W×2. Samples each
// pixel's signal linearly at positions (x+u)+dx (component 0, K=W) or
// (y+v)+dy (component 1, K=H) for offsets in [-r, r], border-clamped.
// -> (2r+1)×H×W.
TensorPtr lookup1d_op(const TensorPtr& vol, const TensorPtr& flow, int component, int radius);

// flow: H×W×2 (coarse units), mask: (d·d·9)×H×W -> (H·d)×(W·d)×2.
// Each output subpixel is a softmax-weighted convex combination of the 3×3
// (border-clamped) coarse neighborhood, times d to convert grid units.
TensorPtr convex_upsample_op(const TensorPtr& flow, const TensorPtr& mask, int d);

}  // namespace stripflow
