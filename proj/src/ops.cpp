#include "stripflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "stripflow/parallel.hpp"

namespace stripflow {

namespace {

TensorPtr make_result(Shape shape, std::vector<TensorPtr> parents, const char* op) {
  auto t = make_tensor(std::move(shape));
  for (const auto& p : parents) {
    if (p->requires_grad) {
      t->requires_grad = true;
      break;
    }
  }
  t->parents = std::move(parents);
  t->op = op;
  return t;
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
  }
}

// Elementwise op with y = f(x), dy/dx supplied as a second lambda over
// (x, y) so saturating functions can reuse the output.
template <typename F, typename DF>
TensorPtr unary_op(const TensorPtr& a, const char* name, F f, DF df) {
  auto out = make_result(a->shape, {a}, name);
  const int64_t n = a->size();
  const float* x = a->data.data();
  float* y = out->data.data();
  for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pa = a;
    out->backward_fn = [o, pa, df] {
      if (!pa->requires_grad) return;
      const int64_t n2 = pa->size();
      const float* g = o->grad.data();
      const float* x2 = pa->data.data();
      const float* y2 = o->data.data();
      float* ga = pa->grad.data();
      for (int64_t i = 0; i < n2; ++i) ga[i] += g[i] * df(x2[i], y2[i]);
    };
  }
  return out;
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  auto out = make_result(a->shape, {a, b}, "add");
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
      const int64_t n2 = o->size();
      const float* g = o->grad.data();
      if (pa->requires_grad) {
        float* ga = pa->grad.data();
        for (int64_t i = 0; i < n2; ++i) ga[i] += g[i];
      }
      if (pb->requires_grad) {
        float* gb = pb->grad.data();
        for (int64_t i = 0; i < n2; ++i) gb[i] += g[i];
      }
    };
  }
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "sub");
  auto out = make_result(a->shape, {a, b}, "sub");
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
      const int64_t n2 = o->size();
      const float* g = o->grad.data();
      if (pa->requires_grad) {
        float* ga = pa->grad.data();
        for (int64_t i = 0; i < n2; ++i) ga[i] += g[i];
      }
      if (pb->requires_grad) {
        float* gb = pb->grad.data();
        for (int64_t i = 0; i < n2; ++i) gb[i] -= g[i];
      }
    };
  }
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "mul");
  auto out = make_result(a->shape, {a, b}, "mul");
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
      const int64_t n2 = o->size();
      const float* g = o->grad.data();
      if (pa->requires_grad) {
        float* ga = pa->grad.data();
        const float* xb = pb->data.data();
        for (int64_t i = 0; i < n2; ++i) ga[i] += g[i] * xb[i];
      }
      if (pb->requires_grad) {
        float* gb = pb->grad.data();
        const float* xa = pa->data.data();
        for (int64_t i = 0; i < n2; ++i) gb[i] += g[i] * xa[i];
      }
    };
  }
  return out;
}

TensorPtr scale(const TensorPtr& a, float s) {
  return unary_op(
      a, "scale", [s](float x) { return x * s; }, [s](float, float) { return s; });
}

TensorPtr offset(const TensorPtr& a, float c) {
  return unary_op(
      a, "offset", [c](float x) { return x + c; }, [](float, float) { return 1.0f; });
}

TensorPtr tanh_op(const TensorPtr& a) {
  return unary_op(
      a, "tanh", [](float x) { return std::tanh(x); },
      [](float, float y) { return 1.0f - y * y; });
}

TensorPtr sigmoid_op(const TensorPtr& a) {
  return unary_op(
      a, "sigmoid", [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
      [](float, float y) { return y * (1.0f - y); });
}

TensorPtr softplus_op(const TensorPtr& a) {
  // log1p(exp(x)) with the usual large-|x| branches to stay finite.
  return unary_op(
      a, "softplus",
      [](float x) {
        if (x > 20.0f) return x;
        if (x < -20.0f) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

TensorPtr abs_op(const TensorPtr& a) {
  return unary_op(
      a, "abs", [](float x) { return std::fabs(x); },
      [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2) {
    throw std::invalid_argument("matmul: expected rank-2 operands, got " + shape_str(a->shape) +
                                " and " + shape_str(b->shape));
  }
  const int M = a->dim(0), K = a->dim(1), K2 = b->dim(0), N = b->dim(1);
  if (K != K2) {
    throw std::invalid_argument("matmul: inner dims disagree, " + shape_str(a->shape) + " x " +
                                shape_str(b->shape));
  }
  auto out = make_result({M, N}, {a, b}, "matmul");
  const float* A = a->data.data();
  const float* B = b->data.data();
  float* C = out->data.data();
  parallel_for(M, [&](int64_t i0, int64_t i1) {
    std::vector<double> acc(static_cast<size_t>(N));
    for (int64_t i = i0; i < i1; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int k = 0; k < K; ++k) {
        const double aik = A[i * K + k];
        const float* brow = B + static_cast<int64_t>(k) * N;
        for (int j = 0; j < N; ++j) acc[j] += aik * brow[j];
      }
      for (int j = 0; j < N; ++j) C[i * N + j] = static_cast<float>(acc[j]);
    }
  });
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pa = a, pb = b;
    out->backward_fn = [o, pa, pb, M, K, N] {
      const float* g = o->grad.data();
      if (pa->requires_grad) {
        const float* B = pb->data.data();
        float* ga = pa->grad.data();
        parallel_for(M, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) {
            for (int k = 0; k < K; ++k) {
              const float* grow = g + i * N;
              const float* brow = B + static_cast<int64_t>(k) * N;
              double acc = 0.0;
              for (int j = 0; j < N; ++j) acc += static_cast<double>(grow[j]) * brow[j];
              ga[i * K + k] += static_cast<float>(acc);
            }
          }
        });
      }
      if (pb->requires_grad) {
        const float* A = pa->data.data();
        float* gb = pb->grad.data();
        parallel_for(K, [&](int64_t k0, int64_t k1) {
          std::vector<double> acc(static_cast<size_t>(N));
          for (int64_t k = k0; k < k1; ++k) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int i = 0; i < M; ++i) {
              const double aik = A[static_cast<int64_t>(i) * K + k];
              const float* grow = g + static_cast<int64_t>(i) * N;
              for (int j = 0; j < N; ++j) acc[j] += aik * grow[j];
            }
            float* gbrow = gb + k * N;
            for (int j = 0; j < N; ++j) gbrow[j] += static_cast<float>(acc[j]);
          }
        });
      }
    };
  }
  return out;
}

namespace {

struct ConvDims {
  int C, H, W, Cout, k, Ho, Wo, stride, pad;
};

ConvDims conv_dims(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias, int stride,
                   int padding) {
  if (x->rank() != 3) throw std::invalid_argument("conv2d: input must be C×H×W, got " + shape_str(x->shape));
  if (w->rank() != 4) throw std::invalid_argument("conv2d: weight must be C'×C×k×k, got " + shape_str(w->shape));
  ConvDims d{};
  d.C = x->dim(0);
  d.H = x->dim(1);
  d.W = x->dim(2);
  d.Cout = w->dim(0);
  d.k = w->dim(2);
  d.stride = stride;
  d.pad = padding;
  if (w->dim(3) != d.k) throw std::invalid_argument("conv2d: kernel must be square, got " + shape_str(w->shape));
  if (d.k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(d.k));
  if (w->dim(1) != d.C) {
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(w->dim(1)) +
                                " input channels but input has " + std::to_string(d.C) +
                                " (input " + shape_str(x->shape) + ", weight " + shape_str(w->shape) + ")");
  }
  if (bias->rank() != 1 || bias->dim(0) != d.Cout) {
    throw std::invalid_argument("conv2d: bias must have shape (" + std::to_string(d.Cout) + "), got " +
                                shape_str(bias->shape));
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be nonnegative");
  d.Ho = (d.H + 2 * padding - d.k) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.k) / stride + 1;
  if (d.H + 2 * padding - d.k < 0 || d.W + 2 * padding - d.k < 0 || d.Ho < 1 || d.Wo < 1) {
    throw std::invalid_argument("conv2d: kernel " + std::to_string(d.k) + " does not fit input " +
                                shape_str(x->shape) + " with padding " + std::to_string(padding));
  }
  return d;
}

// x' range such that 0 <= x'*s + kx - p < W, clipped to [0, Wo).
inline void conv_col_range(int W, int Wo, int s, int kx, int p, int* lo, int* hi) {
  int num = p - kx;
  *lo = num <= 0 ? 0 : (num + s - 1) / s;
  int num2 = W - 1 - kx + p;
  *hi = num2 < 0 ? 0 : std::min(Wo, num2 / s + 1);
}

}  // namespace

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias, int stride,
                 int padding) {
  const ConvDims d = conv_dims(x, w, bias, stride, padding);
  auto out = make_result({d.Cout, d.Ho, d.Wo}, {x, w, bias}, "conv2d");
  const float* X = x->data.data();
  const float* Wt = w->data.data();
  const float* Bv = bias->data.data();
  float* Y = out->data.data();

  parallel_for(d.Cout, [&](int64_t c0, int64_t c1) {
    std::vector<double> acc(static_cast<size_t>(d.Wo));
    for (int64_t co = c0; co < c1; ++co) {
      for (int yo = 0; yo < d.Ho; ++yo) {
        std::fill(acc.begin(), acc.end(), static_cast<double>(Bv[co]));
        for (int c = 0; c < d.C; ++c) {
          for (int ky = 0; ky < d.k; ++ky) {
            const int yi = yo * d.stride + ky - d.pad;
            if (yi < 0 || yi >= d.H) continue;
            const float* xrow = X + (static_cast<int64_t>(c) * d.H + yi) * d.W;
            const float* wrow = Wt + ((co * d.C + c) * d.k + ky) * d.k;
            for (int kx = 0; kx < d.k; ++kx) {
              int lo, hi;
              conv_col_range(d.W, d.Wo, d.stride, kx, d.pad, &lo, &hi);
              const double wv = wrow[kx];
              const float* xs = xrow + (static_cast<int64_t>(lo) * d.stride + kx - d.pad);
              double* ap = acc.data() + lo;
              const int n = hi - lo;
              if (d.stride == 1) {
                for (int i = 0; i < n; ++i) ap[i] += wv * xs[i];
              } else {
                for (int i = 0; i < n; ++i) ap[i] += wv * xs[static_cast<int64_t>(i) * d.stride];
              }
            }
          }
        }
        float* yrow = Y + (co * d.Ho + yo) * d.Wo;
        for (int i = 0; i < d.Wo; ++i) yrow[i] = static_cast<float>(acc[i]);
      }
    }
  });

  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x, pw = w, pb = bias;
    out->backward_fn = [o, px, pw, pb, d] {
      const float* G = o->grad.data();
      const float* X = px->data.data();
      const float* Wt = pw->data.data();
      if (pb->requires_grad) {
        float* gb = pb->grad.data();
        for (int co = 0; co < d.Cout; ++co) {
          double acc = 0.0;
          const float* gplane = G + static_cast<int64_t>(co) * d.Ho * d.Wo;
          for (int64_t i = 0; i < static_cast<int64_t>(d.Ho) * d.Wo; ++i) acc += gplane[i];
          gb[co] += static_cast<float>(acc);
        }
      }
      if (pw->requires_grad) {
        float* gw = pw->grad.data();
        parallel_for(d.Cout, [&](int64_t c0, int64_t c1) {
          for (int64_t co = c0; co < c1; ++co) {
            for (int c = 0; c < d.C; ++c) {
              for (int ky = 0; ky < d.k; ++ky) {
                for (int kx = 0; kx < d.k; ++kx) {
                  int lo, hi;
                  conv_col_range(d.W, d.Wo, d.stride, kx, d.pad, &lo, &hi);
                  double acc = 0.0;
                  for (int yo = 0; yo < d.Ho; ++yo) {
                    const int yi = yo * d.stride + ky - d.pad;
                    if (yi < 0 || yi >= d.H) continue;
                    const float* grow = G + (co * d.Ho + yo) * d.Wo;
                    const float* xs = X + (static_cast<int64_t>(c) * d.H + yi) * d.W +
                                      (static_cast<int64_t>(lo) * d.stride + kx - d.pad);
                    const int n = hi - lo;
                    if (d.stride == 1) {
                      for (int i = 0; i < n; ++i) acc += static_cast<double>(grow[lo + i]) * xs[i];
                    } else {
                      for (int i = 0; i < n; ++i)
                        acc += static_cast<double>(grow[lo + i]) * xs[static_cast<int64_t>(i) * d.stride];
                    }
                  }
                  gw[((co * d.C + c) * d.k + ky) * d.k + kx] += static_cast<float>(acc);
                }
              }
            }
          }
        });
      }
      if (px->requires_grad) {
        float* gx = px->grad.data();
        parallel_for(d.C, [&](int64_t cc0, int64_t cc1) {
          std::vector<double> plane(static_cast<size_t>(d.H) * d.W);
          for (int64_t c = cc0; c < cc1; ++c) {
            std::fill(plane.begin(), plane.end(), 0.0);
            for (int co = 0; co < d.Cout; ++co) {
              for (int ky = 0; ky < d.k; ++ky) {
                const float* wrow = Wt + ((static_cast<int64_t>(co) * d.C + c) * d.k + ky) * d.k;
                for (int kx = 0; kx < d.k; ++kx) {
                  int lo, hi;
                  conv_col_range(d.W, d.Wo, d.stride, kx, d.pad, &lo, &hi);
                  const double wv = wrow[kx];
                  for (int yo = 0; yo < d.Ho; ++yo) {
                    const int yi = yo * d.stride + ky - d.pad;
                    if (yi < 0 || yi >= d.H) continue;
                    const float* grow = G + (static_cast<int64_t>(co) * d.Ho + yo) * d.Wo;
                    double* prow = plane.data() + static_cast<int64_t>(yi) * d.W + (lo * d.stride + kx - d.pad);
                    const int n = hi - lo;
                    if (d.stride == 1) {
                      for (int i = 0; i < n; ++i) prow[i] += wv * grow[lo + i];
                    } else {
                      for (int i = 0; i < n; ++i) prow[static_cast<int64_t>(i) * d.stride] += wv * grow[lo + i];
                    }
                  }
                }
              }
            }
            float* gplane = gx + c * d.H * d.W;
            for (int64_t i = 0; i < static_cast<int64_t>(d.H) * d.W; ++i)
              gplane[i] += static_cast<float>(plane[i]);
          }
        });
      }
    };
  }
  return out;
}

TensorPtr avg_pool2d(const TensorPtr& x, int kernel) {
  if (kernel <= 0) throw std::invalid_argument("avg_pool2d: kernel must be positive, got " + std::to_string(kernel));
  if (x->rank() < 2) throw std::invalid_argument("avg_pool2d: input must have at least 2 dims");
  const int H = x->dim(x->rank() - 2);
  const int W = x->dim(x->rank() - 1);
  const int Ho = (H + kernel - 1) / kernel;
  const int Wo = (W + kernel - 1) / kernel;
  Shape oshape = x->shape;
  oshape[oshape.size() - 2] = Ho;
  oshape[oshape.size() - 1] = Wo;
  auto out = make_result(std::move(oshape), {x}, "avg_pool2d");
  if (kernel == 1) {
    out->data = x->data;  // identity, bitwise
  } else {
    const int64_t batch = x->size() / (static_cast<int64_t>(H) * W);
    const float* X = x->data.data();
    float* Y = out->data.data();
    parallel_for(batch, [&](int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b) {
        const float* xp = X + b * H * W;
        float* yp = Y + b * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int y0 = oy * kernel, y1 = std::min(y0 + kernel, H);
          for (int ox = 0; ox < Wo; ++ox) {
            const int x0 = ox * kernel, x1 = std::min(x0 + kernel, W);
            double acc = 0.0;
            for (int yy = y0; yy < y1; ++yy)
              for (int xx = x0; xx < x1; ++xx) acc += xp[yy * W + xx];
            yp[oy * Wo + ox] = static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
          }
        }
      }
    });
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    out->backward_fn = [o, px, kernel, H, W, Ho, Wo] {
      if (!px->requires_grad) return;
      const int64_t batch = px->size() / (static_cast<int64_t>(H) * W);
      const float* G = o->grad.data();
      float* gx = px->grad.data();
      parallel_for(batch, [&](int64_t b0, int64_t b1) {
        for (int64_t b = b0; b < b1; ++b) {
          const float* gp = G + b * Ho * Wo;
          float* gxp = gx + b * H * W;
          for (int oy = 0; oy < Ho; ++oy) {
            const int y0 = oy * kernel, y1 = std::min(y0 + kernel, H);
            for (int ox = 0; ox < Wo; ++ox) {
              const int x0 = ox * kernel, x1 = std::min(x0 + kernel, W);
              const float share = gp[oy * Wo + ox] / static_cast<float>((y1 - y0) * (x1 - x0));
              for (int yy = y0; yy < y1; ++yy)
                for (int xx = x0; xx < x1; ++xx) gxp[yy * W + xx] += share;
            }
          }
        }
      });
    };
  }
  return out;
}

TensorPtr softmax_lastdim(const TensorPtr& x) {
  if (x->rank() < 1) throw std::invalid_argument("softmax_lastdim: scalar input");
  const int K = x->dim(x->rank() - 1);
  const int64_t rows = x->size() / K;
  auto out = make_result(x->shape, {x}, "softmax_lastdim");
  const float* X = x->data.data();
  float* Y = out->data.data();
  parallel_for(rows, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const float* xr = X + r * K;
      float* yr = Y + r * K;
      float mx = xr[0];
      for (int i = 1; i < K; ++i) mx = std::max(mx, xr[i]);
      double sum = 0.0;
      for (int i = 0; i < K; ++i) sum += std::exp(static_cast<double>(xr[i]) - mx);
      for (int i = 0; i < K; ++i)
        yr[i] = static_cast<float>(std::exp(static_cast<double>(xr[i]) - mx) / sum);
    }
  });
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    out->backward_fn = [o, px, K, rows] {
      if (!px->requires_grad) return;
      const float* G = o->grad.data();
      const float* Y = o->data.data();
      float* gx = px->grad.data();
      parallel_for(rows, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
          const float* gr = G + r * K;
          const float* yr = Y + r * K;
          float* gxr = gx + r * K;
          double dot = 0.0;
          for (int i = 0; i < K; ++i) dot += static_cast<double>(gr[i]) * yr[i];
          for (int i = 0; i < K; ++i)
            gxr[i] += static_cast<float>(yr[i] * (gr[i] - dot));
        }
      });
    };
  }
  return out;
}

namespace {

// Shared bilinear helpers: clamped corner indices and weights for one axis.
struct Lerp {
  int i0, i1;
  float frac;
};

inline Lerp axis_lerp(float v, int extent) {
  float c = std::min(std::max(v, 0.0f), static_cast<float>(extent - 1));
  int i0 = static_cast<int>(std::floor(c));
  if (i0 > extent - 1) i0 = extent - 1;
  int i1 = std::min(i0 + 1, extent - 1);
  return {i0, i1, c - static_cast<float>(i0)};
}

inline bool axis_interior(float v, int extent) { return v > 0.0f && v < static_cast<float>(extent - 1); }

}  // namespace

TensorPtr bilinear_sample(const TensorPtr& img, const TensorPtr& coords) {
  if (img->rank() != 3) throw std::invalid_argument("bilinear_sample: image must be C×H×W");
  if (coords->rank() != 3 || coords->dim(2) != 2)
    throw std::invalid_argument("bilinear_sample: coords must be H'×W'×2, got " + shape_str(coords->shape));
  const int C = img->dim(0), H = img->dim(1), W = img->dim(2);
  const int Hc = coords->dim(0), Wc = coords->dim(1);
  auto out = make_result({C, Hc, Wc}, {img, coords}, "bilinear_sample");
  const float* I = img->data.data();
  const float* Q = coords->data.data();
  float* Y = out->data.data();
  const int64_t npix = static_cast<int64_t>(Hc) * Wc;
  parallel_for(C, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      const float* plane = I + c * H * W;
      float* yplane = Y + c * npix;
      for (int64_t p = 0; p < npix; ++p) {
        const Lerp lx = axis_lerp(Q[p * 2 + 0], W);
        const Lerp ly = axis_lerp(Q[p * 2 + 1], H);
        const double v00 = plane[ly.i0 * W + lx.i0];
        const double v01 = plane[ly.i0 * W + lx.i1];
        const double v10 = plane[ly.i1 * W + lx.i0];
        const double v11 = plane[ly.i1 * W + lx.i1];
        const double top = v00 + lx.frac * (v01 - v00);
        const double bot = v10 + lx.frac * (v11 - v10);
        yplane[p] = static_cast<float>(top + ly.frac * (bot - top));
      }
    }
  });
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pi = img, pc = coords;
    out->backward_fn = [o, pi, pc, C, H, W, npix] {
      const float* G = o->grad.data();
      const float* Q = pc->data.data();
      if (pi->requires_grad) {
        float* gi = pi->grad.data();
        parallel_for(C, [&](int64_t c0, int64_t c1) {
          for (int64_t c = c0; c < c1; ++c) {
            float* gplane = gi + c * H * W;
            const float* gout = G + c * npix;
            for (int64_t p = 0; p < npix; ++p) {
              const Lerp lx = axis_lerp(Q[p * 2 + 0], W);
              const Lerp ly = axis_lerp(Q[p * 2 + 1], H);
              const float g = gout[p];
              gplane[ly.i0 * W + lx.i0] += g * (1 - ly.frac) * (1 - lx.frac);
              gplane[ly.i0 * W + lx.i1] += g * (1 - ly.frac) * lx.frac;
              gplane[ly.i1 * W + lx.i0] += g * ly.frac * (1 - lx.frac);
              gplane[ly.i1 * W + lx.i1] += g * ly.frac * lx.frac;
            }
          }
        });
      }
      if (pc->requires_grad) {
        const float* I = pi->data.data();
        float* gq = pc->grad.data();
        parallel_for(npix, [&](int64_t p0, int64_t p1) {
          for (int64_t p = p0; p < p1; ++p) {
            const float xc = Q[p * 2 + 0], yc = Q[p * 2 + 1];
            const Lerp lx = axis_lerp(xc, W);
            const Lerp ly = axis_lerp(yc, H);
            const bool xin = axis_interior(xc, W);
            const bool yin = axis_interior(yc, H);
            double gx = 0.0, gy = 0.0;
            for (int c = 0; c < C; ++c) {
              const float* plane = I + static_cast<int64_t>(c) * H * W;
              const double v00 = plane[ly.i0 * W + lx.i0];
              const double v01 = plane[ly.i0 * W + lx.i1];
              const double v10 = plane[ly.i1 * W + lx.i0];
              const double v11 = plane[ly.i1 * W + lx.i1];
              const double g = G[c * npix + p];
              if (xin) gx += g * ((1 - ly.frac) * (v01 - v00) + ly.frac * (v11 - v10));
              if (yin) gy += g * ((1 - lx.frac) * (v10 - v00) + lx.frac * (v11 - v01));
            }
            gq[p * 2 + 0] += static_cast<float>(gx);
            gq[p * 2 + 1] += static_cast<float>(gy);
          }
        });
      }
    };
  }
  return out;
}

TensorPtr concat_channels(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int H = parts[0]->dim(1), W = parts[0]->dim(2);
  int Ctot = 0;
  for (const auto& p : parts) {
    if (p->rank() != 3 || p->dim(1) != H || p->dim(2) != W) {
      throw std::invalid_argument("concat_channels: spatial mismatch, got " + shape_str(p->shape));
    }
    Ctot += p->dim(0);
  }
  auto out = make_result({Ctot, H, W}, parts, "concat_channels");
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out->data.data() + off, p->data.data(), p->data.size() * sizeof(float));
    off += p->size();
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    std::vector<TensorPtr> ps = parts;
    out->backward_fn = [o, ps] {
      int64_t off2 = 0;
      for (const auto& p : ps) {
        if (p->requires_grad) {
          const float* g = o->grad.data() + off2;
          float* gp = p->grad.data();
          const int64_t n = p->size();
          for (int64_t i = 0; i < n; ++i) gp[i] += g[i];
        }
        off2 += p->size();
      }
    };
  }
  return out;
}

TensorPtr slice_channels(const TensorPtr& x, int begin, int count) {
  if (x->rank() != 3) throw std::invalid_argument("slice_channels: input must be C×H×W");
  if (begin < 0 || count < 1 || begin + count > x->dim(0)) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + "," +
                                std::to_string(begin + count) + ") outside " + shape_str(x->shape));
  }
  const int H = x->dim(1), W = x->dim(2);
  const int64_t plane = static_cast<int64_t>(H) * W;
  auto out = make_result({count, H, W}, {x}, "slice_channels");
  std::memcpy(out->data.data(), x->data.data() + begin * plane, static_cast<size_t>(count) * plane * sizeof(float));
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    out->backward_fn = [o, px, begin, plane, count] {
      if (!px->requires_grad) return;
      const float* g = o->grad.data();
      float* gx = px->grad.data() + begin * plane;
      for (int64_t i = 0; i < count * plane; ++i) gx[i] += g[i];
    };
  }
  return out;
}

TensorPtr reshape(const TensorPtr& x, Shape new_shape) {
  if (numel(new_shape) != x->size()) {
    throw std::invalid_argument("reshape: element count mismatch, " + shape_str(x->shape) + " -> " +
                                shape_str(new_shape));
  }
  auto out = make_result(std::move(new_shape), {x}, "reshape");
  out->data = x->data;
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    out->backward_fn = [o, px] {
      if (!px->requires_grad) return;
      const float* g = o->grad.data();
      float* gx = px->grad.data();
      const int64_t n = px->size();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
    };
  }
  return out;
}

TensorPtr permute3(const TensorPtr& x, int p0, int p1, int p2) {
  if (x->rank() != 3) throw std::invalid_argument("permute3: input must be rank 3");
  int perm[3] = {p0, p1, p2};
  bool seen[3] = {false, false, false};
  for (int i = 0; i < 3; ++i) {
    if (perm[i] < 0 || perm[i] > 2 || seen[perm[i]]) throw std::invalid_argument("permute3: invalid permutation");
    seen[perm[i]] = true;
  }
  const int in0 = x->dim(0), in1 = x->dim(1), in2 = x->dim(2);
  const int od[3] = {x->dim(p0), x->dim(p1), x->dim(p2)};
  auto out = make_result({od[0], od[1], od[2]}, {x}, "permute3");
  const int64_t istr[3] = {static_cast<int64_t>(in1) * in2, in2, 1};
  // stride of the input axis feeding each output axis
  const int64_t s0 = istr[p0], s1 = istr[p1], s2 = istr[p2];
  const float* X = x->data.data();
  float* Y = out->data.data();
  int64_t idx = 0;
  for (int a = 0; a < od[0]; ++a)
    for (int b = 0; b < od[1]; ++b)
      for (int c = 0; c < od[2]; ++c) Y[idx++] = X[a * s0 + b * s1 + c * s2];
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    const int oda = od[0], odb = od[1], odc = od[2];
    out->backward_fn = [o, px, s0, s1, s2, oda, odb, odc] {
      if (!px->requires_grad) return;
      const float* g = o->grad.data();
      float* gx = px->grad.data();
      int64_t idx2 = 0;
      for (int a = 0; a < oda; ++a)
        for (int b = 0; b < odb; ++b)
          for (int c = 0; c < odc; ++c) gx[a * s0 + b * s1 + c * s2] += g[idx2++];
    };
  }
  return out;
}

TensorPtr sum_all(const TensorPtr& x) {
  auto out = make_result({1}, {x}, "sum_all");
  double acc = 0.0;
  for (float v : x->data) acc += v;
  out->data[0] = static_cast<float>(acc);
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    out->backward_fn = [o, px] {
      if (!px->requires_grad) return;
      const float g = o->grad[0];
      float* gx = px->grad.data();
      const int64_t n = px->size();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    };
  }
  return out;
}

TensorPtr sum_lastdim(const TensorPtr& x) {
  if (x->rank() < 2) throw std::invalid_argument("sum_lastdim: need rank >= 2");
  const int K = x->dim(x->rank() - 1);
  const int64_t rows = x->size() / K;
  Shape oshape(x->shape.begin(), x->shape.end() - 1);
  auto out = make_result(std::move(oshape), {x}, "sum_lastdim");
  const float* X = x->data.data();
  float* Y = out->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int i = 0; i < K; ++i) acc += X[r * K + i];
    Y[r] = static_cast<float>(acc);
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    out->backward_fn = [o, px, K, rows] {
      if (!px->requires_grad) return;
      const float* g = o->grad.data();
      float* gx = px->grad.data();
      for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < K; ++i) gx[r * K + i] += g[r];
    };
  }
  return out;
}

TensorPtr stack_lastdim(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "stack_lastdim");
  Shape oshape = a->shape;
  oshape.push_back(2);
  auto out = make_result(std::move(oshape), {a, b}, "stack_lastdim");
  const int64_t n = a->size();
  for (int64_t i = 0; i < n; ++i) {
    out->data[i * 2 + 0] = a->data[i];
    out->data[i * 2 + 1] = b->data[i];
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pa = a, pb = b;
    out->backward_fn = [o, pa, pb, n] {
      const float* g = o->grad.data();
      if (pa->requires_grad) {
        float* ga = pa->grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i * 2 + 0];
      }
      if (pb->requires_grad) {
        float* gb = pb->grad.data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i * 2 + 1];
      }
    };
  }
  return out;
}

TensorPtr strip_pool(const TensorPtr& x, int axis) {
  if (x->rank() != 3) throw std::invalid_argument("strip_pool: input must be C×H×W");
  if (axis != 1 && axis != 2) throw std::invalid_argument("strip_pool: axis must be 1 (over H) or 2 (over W)");
  const int C = x->dim(0), H = x->dim(1), W = x->dim(2);
  const int keep = axis == 1 ? W : H;
  const int pooled = axis == 1 ? H : W;
  auto out = make_result({C, keep}, {x}, "strip_pool");
  const float* X = x->data.data();
  float* Y = out->data.data();
  for (int c = 0; c < C; ++c) {
    const float* plane = X + static_cast<int64_t>(c) * H * W;
    float* yrow = Y + static_cast<int64_t>(c) * keep;
    if (axis == 1) {
      for (int j = 0; j < W; ++j) {
        double acc = 0.0;
        for (int i = 0; i < H; ++i) acc += plane[i * W + j];
        yrow[j] = static_cast<float>(acc / H);
      }
    } else {
      for (int i = 0; i < H; ++i) {
        double acc = 0.0;
        for (int j = 0; j < W; ++j) acc += plane[i * W + j];
        yrow[i] = static_cast<float>(acc / W);
      }
    }
  }
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr px = x;
    out->backward_fn = [o, px, axis, C, H, W, keep, pooled] {
      if (!px->requires_grad) return;
      const float* g = o->grad.data();
      float* gx = px->grad.data();
      const float inv = 1.0f / static_cast<float>(pooled);
      for (int c = 0; c < C; ++c) {
        const float* grow = g + static_cast<int64_t>(c) * keep;
        float* gplane = gx + static_cast<int64_t>(c) * H * W;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) gplane[i * W + j] += inv * (axis == 1 ? grow[j] : grow[i]);
      }
    };
  }
  return out;
}

TensorPtr all_pair_corr_op(const TensorPtr& f1, const TensorPtr& f2, bool scaled) {
  if (f1->rank() != 3 || f2->rank() != 3 || f1->shape != f2->shape) {
    throw std::invalid_argument("all_pair_corr: features must share shape C×H×W, got " +
                                shape_str(f1->shape) + " vs " + shape_str(f2->shape));
  }
  const int C = f1->dim(0), H = f1->dim(1), W = f1->dim(2);
  const int64_t P = static_cast<int64_t>(H) * W;
  const double sc = scaled ? 1.0 / std::sqrt(static_cast<double>(C)) : 1.0;
  auto out = make_result({H, W, H, W}, {f1, f2}, "all_pair_corr");
  const float* A = f1->data.data();
  const float* B = f2->data.data();
  float* Y = out->data.data();
  parallel_for(P, [&](int64_t p0, int64_t p1) {
    std::vector<double> acc(static_cast<size_t>(P));
    for (int64_t p = p0; p < p1; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int c = 0; c < C; ++c) {
        const double v = A[c * P + p];
        const float* brow = B + static_cast<int64_t>(c) * P;
        for (int64_t q = 0; q < P; ++q) acc[q] += v * brow[q];
      }
      float* yrow = Y + p * P;
      for (int64_t q = 0; q < P; ++q) yrow[q] = static_cast<float>(acc[q] * sc);
    }
  });
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pa = f1, pb = f2;
    out->backward_fn = [o, pa, pb, C, P, sc] {
      const float* G = o->grad.data();
      if (pa->requires_grad) {
        const float* B = pb->data.data();
        float* ga = pa->grad.data();
        parallel_for(C, [&](int64_t c0, int64_t c1) {
          for (int64_t c = c0; c < c1; ++c) {
            const float* brow = B + c * P;
            float* garow = ga + c * P;
            for (int64_t p = 0; p < P; ++p) {
              const float* grow = G + p * P;
              double acc = 0.0;
              for (int64_t q = 0; q < P; ++q) acc += static_cast<double>(grow[q]) * brow[q];
              garow[p] += static_cast<float>(acc * sc);
            }
          }
        });
      }
      if (pb->requires_grad) {
        const float* A = pa->data.data();
        float* gb = pb->grad.data();
        parallel_for(C, [&](int64_t c0, int64_t c1) {
          std::vector<double> acc(static_cast<size_t>(P));
          for (int64_t c = c0; c < c1; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* arow = A + c * P;
            for (int64_t p = 0; p < P; ++p) {
              const double v = arow[p];
              const float* grow = G + p * P;
              for (int64_t q = 0; q < P; ++q) acc[q] += v * grow[q];
            }
            float* gbrow = gb + c * P;
            for (int64_t q = 0; q < P; ++q) gbrow[q] += static_cast<float>(acc[q] * sc);
          }
        });
      }
    };
  }
  return out;
}

TensorPtr cross_corr_op(const TensorPtr& q, const TensorPtr& khat, bool scaled) {
  if (q->rank() != 3 || khat->rank() != 2) {
    throw std::invalid_argument("cross_corr: expected C×H×W queries and C×K keys, got " +
                                shape_str(q->shape) + " and " + shape_str(khat->shape));
  }
  if (q->dim(0) != khat->dim(0)) {
    throw std::invalid_argument("cross_corr: channel mismatch, queries " + shape_str(q->shape) +
                                " vs keys " + shape_str(khat->shape));
  }
  const int C = q->dim(0), H = q->dim(1), W = q->dim(2), K = khat->dim(1);
  const int64_t P = static_cast<int64_t>(H) * W;
  const double sc = scaled ? 1.0 / std::sqrt(static_cast<double>(C)) : 1.0;
  auto out = make_result({H, W, K}, {q, khat}, "cross_corr");
  const float* Qd = q->data.data();
  const float* Kd = khat->data.data();
  float* Y = out->data.data();
  parallel_for(P, [&](int64_t p0, int64_t p1) {
    std::vector<double> acc(static_cast<size_t>(K));
    for (int64_t p = p0; p < p1; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int c = 0; c < C; ++c) {
        const double v = Qd[c * P + p];
        const float* krow = Kd + static_cast<int64_t>(c) * K;
        for (int j = 0; j < K; ++j) acc[j] += v * krow[j];
      }
      float* yrow = Y + p * K;
      for (int j = 0; j < K; ++j) yrow[j] = static_cast<float>(acc[j] * sc);
    }
  });
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pq = q, pk = khat;
    out->backward_fn = [o, pq, pk, C, K, P, sc] {
      const float* G = o->grad.data();
      if (pq->requires_grad) {
        const float* Kd = pk->data.data();
        float* gq = pq->grad.data();
        parallel_for(C, [&](int64_t c0, int64_t c1) {
          for (int64_t c = c0; c < c1; ++c) {
            const float* krow = Kd + c * K;
            float* gqrow = gq + c * P;
            for (int64_t p = 0; p < P; ++p) {
              const float* grow = G + p * K;
              double acc = 0.0;
              for (int j = 0; j < K; ++j) acc += static_cast<double>(grow[j]) * krow[j];
              gqrow[p] += static_cast<float>(acc * sc);
            }
          }
        });
      }
      if (pk->requires_grad) {
        const float* Qd = pq->data.data();
        float* gk = pk->grad.data();
        parallel_for(C, [&](int64_t c0, int64_t c1) {
          std::vector<double> acc(static_cast<size_t>(K));
          for (int64_t c = c0; c < c1; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* qrow = Qd + c * P;
            for (int64_t p = 0; p < P; ++p) {
              const double v = qrow[p];
              const float* grow = G + p * K;
              for (int j = 0; j < K; ++j) acc[j] += v * grow[j];
            }
            float* gkrow = gk + c * K;
            for (int j = 0; j < K; ++j) gkrow[j] += static_cast<float>(acc[j] * sc);
          }
        });
      }
    };
  }
  return out;
}

TensorPtr aggregate_op(const TensorPtr& allpair, const TensorPtr& cv, const TensorPtr& ch) {
  if (allpair->rank() != 4) throw std::invalid_argument("aggregate: all-pair volume must be H×W×H×W");
  const int H = allpair->dim(0), W = allpair->dim(1);
  if (allpair->dim(2) != H || allpair->dim(3) != W)
    throw std::invalid_argument("aggregate: all-pair volume must be H×W×H×W, got " + shape_str(allpair->shape));
  if (cv->rank() != 3 || cv->dim(0) != H || cv->dim(1) != W || cv->dim(2) != W) {
    throw std::invalid_argument("aggregate: C_v must be H×W×W = (" + std::to_string(H) + "," +
                                std::to_string(W) + "," + std::to_string(W) + "), got " + shape_str(cv->shape));
  }
  if (ch->rank() != 3 || ch->dim(0) != H || ch->dim(1) != W || ch->dim(2) != H) {
    throw std::invalid_argument("aggregate: C_h must be H×W×H, got " + shape_str(ch->shape));
  }
  const int64_t P = static_cast<int64_t>(H) * W;
  auto out = make_result({H, W, 2, H, W}, {allpair, cv, ch}, "aggregate");
  const float* AP = allpair->data.data();
  const float* CV = cv->data.data();
  const float* CH = ch->data.data();
  float* Y = out->data.data();
  parallel_for(P, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      std::memcpy(Y + p * 2 * P, AP + p * P, static_cast<size_t>(P) * sizeof(float));
      float* ch1 = Y + p * 2 * P + P;
      const float* cvrow = CV + p * W;
      const float* chrow = CH + p * H;
      for (int y2 = 0; y2 < H; ++y2) {
        const float hv = chrow[y2];
        float* row = ch1 + static_cast<int64_t>(y2) * W;
        for (int x2 = 0; x2 < W; ++x2) row[x2] = cvrow[x2] + hv;
      }
    }
  });
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pap = allpair, pcv = cv, pch = ch;
    out->backward_fn = [o, pap, pcv, pch, H, W, P] {
      const float* G = o->grad.data();
      if (pap->requires_grad) {
        float* g = pap->grad.data();
        for (int64_t p = 0; p < P; ++p) {
          const float* grow = G + p * 2 * P;
          float* arow = g + p * P;
          for (int64_t q = 0; q < P; ++q) arow[q] += grow[q];
        }
      }
      if (pcv->requires_grad || pch->requires_grad) {
        float* gcv = pcv->requires_grad ? pcv->grad.data() : nullptr;
        float* gch = pch->requires_grad ? pch->grad.data() : nullptr;
        for (int64_t p = 0; p < P; ++p) {
          const float* ch1 = G + p * 2 * P + P;
          for (int y2 = 0; y2 < H; ++y2) {
            const float* row = ch1 + static_cast<int64_t>(y2) * W;
            double racc = 0.0;
            for (int x2 = 0; x2 < W; ++x2) {
              if (gcv) gcv[p * W + x2] += row[x2];
              racc += row[x2];
            }
            if (gch) gch[p * H + y2] += static_cast<float>(racc);
          }
        }
      }
    };
  }
  return out;
}

TensorPtr lookup_op(const std::vector<TensorPtr>& levels, const std::vector<int>& kernels,
                    const TensorPtr& flow, int radius) {
  if (levels.empty() || levels.size() != kernels.size())
    throw std::invalid_argument("lookup: levels and kernels must align");
  if (radius < 0) throw std::invalid_argument("lookup: radius must be nonnegative");
  if (flow->rank() != 3 || flow->dim(2) != 2)
    throw std::invalid_argument("lookup: flow must be H×W×2, got " + shape_str(flow->shape));
  const int H = flow->dim(0), W = flow->dim(1);
  const int ch = levels[0]->dim(2);
  for (const auto& lv : levels) {
    if (lv->rank() != 5 || lv->dim(0) != H || lv->dim(1) != W || lv->dim(2) != ch)
      throw std::invalid_argument("lookup: level shape mismatch, got " + shape_str(lv->shape));
  }
  const int side = 2 * radius + 1;
  const int nlvl = static_cast<int>(levels.size());
  const int L = nlvl * ch * side * side;
  const int64_t P = static_cast<int64_t>(H) * W;
  auto out_parents = levels;
  out_parents.push_back(flow);
  auto out = make_result({L, H, W}, out_parents, "lookup");
  const float* F = flow->data.data();
  float* Y = out->data.data();

  parallel_for(H, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < W; ++x) {
        const int64_t p = y * W + x;
        const float u = F[p * 2 + 0], v = F[p * 2 + 1];
        for (int l = 0; l < nlvl; ++l) {
          const float kappa = static_cast<float>(kernels[l]);
          const int Hk = levels[l]->dim(3), Wk = levels[l]->dim(4);
          const float cx = (static_cast<float>(x) + u) / kappa;
          const float cy = (static_cast<float>(y) + v) / kappa;
          const float* base = levels[l]->data.data() + p * ch * Hk * Wk;
          for (int c = 0; c < ch; ++c) {
            const float* plane = base + static_cast<int64_t>(c) * Hk * Wk;
            for (int dy = -radius; dy <= radius; ++dy) {
              const Lerp ly = axis_lerp(cy + dy, Hk);
              for (int dx = -radius; dx <= radius; ++dx) {
                const Lerp lx = axis_lerp(cx + dx, Wk);
                const double v00 = plane[ly.i0 * Wk + lx.i0];
                const double v01 = plane[ly.i0 * Wk + lx.i1];
                const double v10 = plane[ly.i1 * Wk + lx.i0];
                const double v11 = plane[ly.i1 * Wk + lx.i1];
                const double top = v00 + lx.frac * (v01 - v00);
                const double bot = v10 + lx.frac * (v11 - v10);
                const int feat = ((l * ch + c) * side + (dy + radius)) * side + (dx + radius);
                Y[feat * P + p] = static_cast<float>(top + ly.frac * (bot - top));
              }
            }
          }
        }
      }
    }
  });

  if (out->requires_grad) {
    Tensor* o = out.get();
    std::vector<TensorPtr> lv = levels;
    std::vector<int> ks = kernels;
    TensorPtr pf = flow;
    out->backward_fn = [o, lv, ks, pf, H, W, ch, radius, side, P] {
      const float* G = o->grad.data();
      const float* F = pf->data.data();
      const int nlvl = static_cast<int>(lv.size());
      // Scatter into level grads overlaps between pixels, so this pass is serial.
      for (int64_t p = 0; p < P; ++p) {
        const int x = static_cast<int>(p % W);
        const int y = static_cast<int>(p / W);
        const float u = F[p * 2 + 0], v = F[p * 2 + 1];
        double gu = 0.0, gv = 0.0;
        for (int l = 0; l < nlvl; ++l) {
          const float kappa = static_cast<float>(ks[l]);
          const int Hk = lv[l]->dim(3), Wk = lv[l]->dim(4);
          const float cx = (static_cast<float>(x) + u) / kappa;
          const float cy = (static_cast<float>(y) + v) / kappa;
          const bool level_grad = lv[l]->requires_grad;
          float* gbase = level_grad ? lv[l]->grad.data() + p * ch * Hk * Wk : nullptr;
          const float* base = lv[l]->data.data() + p * ch * Hk * Wk;
          for (int c = 0; c < ch; ++c) {
            const float* plane = base + static_cast<int64_t>(c) * Hk * Wk;
            float* gplane = level_grad ? gbase + static_cast<int64_t>(c) * Hk * Wk : nullptr;
            for (int dy = -radius; dy <= radius; ++dy) {
              const float sy = cy + dy;
              const Lerp ly = axis_lerp(sy, Hk);
              const bool yin = axis_interior(sy, Hk);
              for (int dx = -radius; dx <= radius; ++dx) {
                const float sx = cx + dx;
                const Lerp lx = axis_lerp(sx, Wk);
                const bool xin = axis_interior(sx, Wk);
                const int feat = ((l * ch + c) * side + (dy + radius)) * side + (dx + radius);
                const float g = G[feat * P + p];
                if (g == 0.0f) continue;
                if (gplane) {
                  gplane[ly.i0 * Wk + lx.i0] += g * (1 - ly.frac) * (1 - lx.frac);
                  gplane[ly.i0 * Wk + lx.i1] += g * (1 - ly.frac) * lx.frac;
                  gplane[ly.i1 * Wk + lx.i0] += g * ly.frac * (1 - lx.frac);
                  gplane[ly.i1 * Wk + lx.i1] += g * ly.frac * lx.frac;
                }
                if (pf->requires_grad && (xin || yin)) {
                  const double v00 = plane[ly.i0 * Wk + lx.i0];
                  const double v01 = plane[ly.i0 * Wk + lx.i1];
                  const double v10 = plane[ly.i1 * Wk + lx.i0];
                  const double v11 = plane[ly.i1 * Wk + lx.i1];
                  if (xin)
                    gu += g * ((1 - ly.frac) * (v01 - v00) + ly.frac * (v11 - v10)) / kappa;
                  if (yin)
                    gv += g * ((1 - lx.frac) * (v10 - v00) + lx.frac * (v11 - v01)) / kappa;
                }
              }
            }
          }
        }
        if (pf->requires_grad) {
          pf->grad[p * 2 + 0] += static_cast<float>(gu);
          pf->grad[p * 2 + 1] += static_cast<float>(gv);
        }
      }
    };
  }
  return out;
}

TensorPtr lookup1d_op(const TensorPtr& vol, const TensorPtr& flow, int component, int radius) {
  if (vol->rank() != 3) throw std::invalid_argument("lookup1d: volume must be H×W×K");
  if (flow->rank() != 3 || flow->dim(2) != 2)
    throw std::invalid_argument("lookup1d: flow must be H×W×2, got " + shape_str(flow->shape));
  if (component != 0 && component != 1) throw std::invalid_argument("lookup1d: component must be 0 or 1");
  if (radius < 0) throw std::invalid_argument("lookup1d: radius must be nonnegative");
  const int H = vol->dim(0), W = vol->dim(1), K = vol->dim(2);
  if (flow->dim(0) != H || flow->dim(1) != W)
    throw std::invalid_argument("lookup1d: flow grid mismatch, " + shape_str(flow->shape));
  const int side = 2 * radius + 1;
  const int64_t P = static_cast<int64_t>(H) * W;
  auto out = make_result({side, H, W}, {vol, flow}, "lookup1d");
  const float* V = vol->data.data();
  const float* F = flow->data.data();
  float* Y = out->data.data();
  parallel_for(P, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      const int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
      const float base = component == 0 ? static_cast<float>(x) + F[p * 2 + 0]
                                        : static_cast<float>(y) + F[p * 2 + 1];
      const float* row = V + p * K;
      for (int o = -radius; o <= radius; ++o) {
        const Lerp l = axis_lerp(base + o, K);
        Y[static_cast<int64_t>(o + radius) * P + p] =
            static_cast<float>(row[l.i0] + l.frac * (static_cast<double>(row[l.i1]) - row[l.i0]));
      }
    }
  });
  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pv = vol, pf = flow;
    out->backward_fn = [o, pv, pf, component, radius, K, W, P, H] {
      const int side2 = 2 * radius + 1;
      (void)side2;
      const float* G = o->grad.data();
      const float* V = pv->data.data();
      const float* F = pf->data.data();
      // Each pixel owns its own volume row and flow cell: parallel-safe.
      parallel_for(P, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
          const int x = static_cast<int>(p % W), y = static_cast<int>(p / W);
          const float base = component == 0 ? static_cast<float>(x) + F[p * 2 + 0]
                                            : static_cast<float>(y) + F[p * 2 + 1];
          const float* row = V + p * K;
          float* grow = pv->requires_grad ? pv->grad.data() + p * K : nullptr;
          double gflow = 0.0;
          for (int off = -radius; off <= radius; ++off) {
            const float s = base + off;
            const Lerp l = axis_lerp(s, K);
            const float g = G[static_cast<int64_t>(off + radius) * P + p];
            if (grow) {
              grow[l.i0] += g * (1 - l.frac);
              grow[l.i1] += g * l.frac;
            }
            if (pf->requires_grad && axis_interior(s, K)) gflow += static_cast<double>(g) * (row[l.i1] - row[l.i0]);
          }
          if (pf->requires_grad) pf->grad[p * 2 + component] += static_cast<float>(gflow);
        }
      });
    };
  }
  return out;
}

TensorPtr convex_upsample_op(const TensorPtr& flow, const TensorPtr& mask, int d) {
  if (flow->rank() != 3 || flow->dim(2) != 2)
    throw std::invalid_argument("convex_upsample: flow must be H×W×2, got " + shape_str(flow->shape));
  const int H = flow->dim(0), W = flow->dim(1);
  if (mask->rank() != 3 || mask->dim(0) != d * d * 9 || mask->dim(1) != H || mask->dim(2) != W) {
    throw std::invalid_argument("convex_upsample: mask must be (" + std::to_string(d * d * 9) + "," +
                                std::to_string(H) + "," + std::to_string(W) + "), got " + shape_str(mask->shape));
  }
  const int Hf = H * d, Wf = W * d;
  const int64_t P = static_cast<int64_t>(H) * W;
  auto out = make_result({Hf, Wf, 2}, {flow, mask}, "convex_upsample");
  const float* FV = flow->data.data();
  const float* M = mask->data.data();
  float* Y = out->data.data();

  auto neighbor = [&](int y, int x, int n, int c) -> float {
    const int yn = std::min(std::max(y + n / 3 - 1, 0), H - 1);
    const int xn = std::min(std::max(x + n % 3 - 1, 0), W - 1);
    return FV[(static_cast<int64_t>(yn) * W + xn) * 2 + c];
  };

  parallel_for(H, [&](int64_t y0, int64_t y1) {
    double wts[9];
    for (int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < W; ++x) {
        for (int i = 0; i < d; ++i) {
          for (int j = 0; j < d; ++j) {
            const int sub = i * d + j;
            float mx = -std::numeric_limits<float>::infinity();
            for (int n = 0; n < 9; ++n)
              mx = std::max(mx, M[(static_cast<int64_t>(sub) * 9 + n) * P + y * W + x]);
            double wsum = 0.0;
            for (int n = 0; n < 9; ++n) {
              wts[n] = std::exp(static_cast<double>(M[(static_cast<int64_t>(sub) * 9 + n) * P + y * W + x]) - mx);
              wsum += wts[n];
            }
            for (int c = 0; c < 2; ++c) {
              double acc = 0.0;
              for (int n = 0; n < 9; ++n) acc += wts[n] / wsum * neighbor(static_cast<int>(y), x, n, c);
              Y[((y * d + i) * Wf + (x * d + j)) * 2 + c] = static_cast<float>(d * acc);
            }
          }
        }
      }
    }
  });

  if (out->requires_grad) {
    Tensor* o = out.get();
    TensorPtr pf = flow, pm = mask;
    out->backward_fn = [o, pf, pm, H, W, d, P] {
      const int Wf = W * d;
      const float* G = o->grad.data();
      const float* FV = pf->data.data();
      const float* M = pm->data.data();
      float* gf = pf->requires_grad ? pf->grad.data() : nullptr;
      float* gm = pm->requires_grad ? pm->grad.data() : nullptr;
      double wts[9];
      // Neighboring cells share flow grads; serial scatter.
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
              const int sub = i * d + j;
              float mx = -std::numeric_limits<float>::infinity();
              for (int n = 0; n < 9; ++n)
                mx = std::max(mx, M[(static_cast<int64_t>(sub) * 9 + n) * P + static_cast<int64_t>(y) * W + x]);
              double wsum = 0.0;
              for (int n = 0; n < 9; ++n) {
                wts[n] = std::exp(
                    static_cast<double>(M[(static_cast<int64_t>(sub) * 9 + n) * P + static_cast<int64_t>(y) * W + x]) - mx);
                wsum += wts[n];
              }
              for (int n = 0; n < 9; ++n) wts[n] /= wsum;
              const float* gout = G + ((static_cast<int64_t>(y) * d + i) * Wf + (static_cast<int64_t>(x) * d + j)) * 2;
              double s[2] = {0.0, 0.0};
              for (int c = 0; c < 2; ++c) {
                for (int n = 0; n < 9; ++n) {
                  const int yn = std::min(std::max(y + n / 3 - 1, 0), H - 1);
                  const int xn = std::min(std::max(x + n % 3 - 1, 0), W - 1);
                  s[c] += wts[n] * FV[(static_cast<int64_t>(yn) * W + xn) * 2 + c];
                }
              }
              for (int n = 0; n < 9; ++n) {
                const int yn = std::min(std::max(y + n / 3 - 1, 0), H - 1);
                const int xn = std::min(std::max(x + n % 3 - 1, 0), W - 1);
                double gln = 0.0;
                for (int c = 0; c < 2; ++c) {
                  const double fn = FV[(static_cast<int64_t>(yn) * W + xn) * 2 + c];
                  if (gf) gf[(static_cast<int64_t>(yn) * W + xn) * 2 + c] += static_cast<float>(d * wts[n] * gout[c]);
                  gln += gout[c] * d * wts[n] * (fn - s[c]);
                }
                if (gm) gm[(static_cast<int64_t>(sub) * 9 + n) * P + static_cast<int64_t>(y) * W + x] += static_cast<float>(gln);
              }
            }
          }
        }
      }
    };
  }
  return out;
}

}  // namespace stripflow
