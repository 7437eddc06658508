#include "stripflow/encoders.hpp"

#include <stdexcept>

#include "stripflow/ops.hpp"

namespace stripflow {

namespace {

struct BlockSpec {
  int k, stride, out_ch;
};

std::vector<BlockSpec> encoder_blocks(int out_ch, int d) {
  const int w0 = std::max(out_ch / 2, 4);
  const int w1 = std::max(3 * out_ch / 4, 4);
  switch (d) {
    case 2: return {{3, 2, w0}, {3, 1, w1}, {3, 1, out_ch}};
    case 4: return {{3, 2, w0}, {3, 2, w1}, {3, 1, out_ch}};
    case 8: return {{7, 2, w0}, {3, 2, w1}, {3, 2, out_ch}};
    default: throw std::invalid_argument("encoder: d must be one of 2, 4, 8; got " + std::to_string(d));
  }
}

void check_divisible(const TensorPtr& img, int d) {
  if (img->rank() != 3 || img->dim(0) != 3) {
    throw std::invalid_argument("encoder: expected a 3×H×W image, got " + shape_str(img->shape));
  }
  const int H = img->dim(1), W = img->dim(2);
  if (H % d != 0 || W % d != 0 || H < d || W < d) {
    throw std::invalid_argument("encoder: image " + std::to_string(W) + "x" + std::to_string(H) +
                                " is not a multiple of d=" + std::to_string(d) + "; crop to " +
                                std::to_string(W / d * d) + "x" + std::to_string(H / d * d));
  }
}

}  // namespace

void add_encoder_params(ModelParams& params, const std::string& prefix, int in_ch, int out_ch, int d) {
  int c = in_ch;
  int idx = 0;
  for (const BlockSpec& b : encoder_blocks(out_ch, d)) {
    const std::string base = prefix + ".block" + std::to_string(idx++);
    params.add(base + ".weight", {b.out_ch, c, b.k, b.k});
    params.add(base + ".bias", {b.out_ch});
    c = b.out_ch;
  }
}

TensorPtr run_encoder_trunk(const ModelParams& params, const std::string& prefix, const TensorPtr& img,
                            int d) {
  check_divisible(img, d);
  const auto blocks = encoder_blocks(0, d);  // only k/stride matter here
  TensorPtr x = img;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string base = prefix + ".block" + std::to_string(i);
    const auto w = params.get(base + ".weight");
    const auto b = params.get(base + ".bias");
    x = conv2d(x, w, b, blocks[i].stride, blocks[i].k / 2);
    if (i + 1 < blocks.size()) x = softplus_op(x);
  }
  return x;
}

FeaturePair encode_features(const ImagePair& pair, const ModelParams& params, const RunConfig& cfg) {
  if (pair.i1->shape != pair.i2->shape) {
    throw std::invalid_argument("encode_features: frames differ in shape, " + shape_str(pair.i1->shape) +
                                " vs " + shape_str(pair.i2->shape));
  }
  FeaturePair out;
  out.d = cfg.d;
  out.f1 = softplus_op(run_encoder_trunk(params, "encoder.f1", pair.i1, cfg.d));
  out.f2 = softplus_op(run_encoder_trunk(params, "encoder.f2", pair.i2, cfg.d));
  return out;
}

ContextFeatures encode_context(const TensorPtr& i1, const ModelParams& params, const RunConfig& cfg) {
  TensorPtr trunk = run_encoder_trunk(params, "encoder.ctx", i1, cfg.d);
  ContextFeatures out;
  out.hidden = tanh_op(slice_channels(trunk, 0, cfg.hidden));
  out.inp = softplus_op(slice_channels(trunk, cfg.hidden, cfg.hidden));
  return out;
}

}  // namespace stripflow
