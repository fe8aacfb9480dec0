#pragma once

// Numerical kernels for the generator forward pass. All kernels take
// CHW tensors (no batch axis), use stride 1, and accumulate in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "weightscape/error.hpp"
#include "weightscape/parallel.hpp"
#include "weightscape/tensor.hpp"

namespace weightscape {

namespace detail {

inline void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

inline void expect_extent(std::size_t actual, std::size_t expected,
                          const std::string& what) {
  if (actual != expected) {
    throw ShapeError(what + ": expected " + std::to_string(expected) +
                     ", got " + std::to_string(actual));
  }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip) with zero padding and stride 1.
///
/// input [C_in,H,W], kernel [C_out,C_in,kH,kW], bias [C_out]. The output is
/// [C_out, H+2p-kH+1, W+2p-kW+1]. Output channels are computed in parallel;
/// the summation order inside a channel is fixed.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     const Tensor& bias, std::size_t padding) {
  detail::expect_rank(input, 3, "conv2d input");
  detail::expect_rank(kernel, 4, "conv2d kernel");
  detail::expect_rank(bias, 1, "conv2d bias");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = kernel.dim(0), kh = kernel.dim(2),
                    kw = kernel.dim(3);
  detail::expect_extent(kernel.dim(1), c_in, "conv2d kernel input channels");
  detail::expect_extent(bias.dim(0), c_out, "conv2d bias length");
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d kernel spatial extents must be odd, got " +
                     std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d kernel larger than padded input height/width");
  }
  const std::size_t oh = h + 2 * padding - kh + 1;
  const std::size_t ow = w + 2 * padding - kw + 1;

  Tensor out({c_out, oh, ow});
  const float* in = input.data().data();
  const float* k = kernel.data().data();
  float* dst = out.data().data();
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  parallel_for(c_out, [&](std::size_t co) {
    std::vector<double> acc(oh * ow, static_cast<double>(bias[co]));
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const float* plane = in + ci * h * w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double weight = k[((co * c_in + ci) * kh + ky) * kw + kx];
          if (weight == 0.0) continue;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const float* row = plane + static_cast<std::size_t>(iy) * w;
            double* acc_row = acc.data() + oy * ow;
            // ix = ox + kx - pad must land in [0, w)
            const auto shift = static_cast<std::ptrdiff_t>(kx) - pad;
            const std::size_t ox_begin =
                shift < 0 ? static_cast<std::size_t>(-shift) : 0;
            const auto ox_end = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(ow),
                static_cast<std::ptrdiff_t>(w) - shift));
            for (std::size_t ox = ox_begin; ox < ox_end; ++ox) {
              acc_row[ox] += weight * row[static_cast<std::ptrdiff_t>(ox) + shift];
            }
          }
        }
      }
    }
    float* out_plane = dst + co * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) {
      out_plane[i] = static_cast<float>(acc[i]);
    }
  });
  return out;
}

/// out[m] = sum_n weight[m,n] * input[n] + bias[m]
inline Tensor linear(const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  detail::expect_rank(input, 1, "linear input");
  detail::expect_rank(weight, 2, "linear weight");
  detail::expect_rank(bias, 1, "linear bias");
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  detail::expect_extent(input.dim(0), n, "linear input length");
  detail::expect_extent(bias.dim(0), m, "linear bias length");

  Tensor out({m});
  parallel_for(m, [&](std::size_t row) {
    double acc = bias[row];
    const float* wr = weight.data().data() + row * n;
    for (std::size_t j = 0; j < n; ++j) {
      acc += static_cast<double>(wr[j]) * input[j];
    }
    out[row] = static_cast<float>(acc);
  });
  return out;
}

/// Inference-mode batch normalization with per-channel gain and bias:
/// gain * (x - mean) / sqrt(var + epsilon) + bias.
inline Tensor batch_norm_inference(const Tensor& input, const Tensor& mean,
                                   const Tensor& var, const Tensor& gain,
                                   const Tensor& bias, float epsilon) {
  detail::expect_rank(input, 3, "batch_norm input");
  const std::size_t c = input.dim(0);
  for (const Tensor* t : {&mean, &var, &gain, &bias}) {
    detail::expect_rank(*t, 1, "batch_norm parameter");
    detail::expect_extent(t->dim(0), c, "batch_norm parameter length");
  }
  if (!(epsilon > 0.0f)) throw ShapeError("batch_norm epsilon must be > 0");
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (var[ch] < 0.0f) {
      throw ShapeError("batch_norm variance is negative at channel " +
                       std::to_string(ch));
    }
  }

  Tensor out(input.shape());
  const std::size_t plane = input.dim(1) * input.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double scale = static_cast<double>(gain[ch]) /
                         std::sqrt(static_cast<double>(var[ch]) + epsilon);
    const double shift = static_cast<double>(bias[ch]) - scale * mean[ch];
    const float* src = input.data().data() + ch * plane;
    float* dst = out.data().data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = static_cast<float>(scale * src[i] + shift);
    }
  }
  return out;
}

/// Replicates each pixel into a 2x2 block.
inline Tensor upsample_nearest_2x(const Tensor& input) {
  detail::expect_rank(input, 3, "upsample input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  const float* src = input.data().data();
  float* dst = out.data().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const float* row = src + (ch * h + y / 2) * w;
      float* out_row = dst + (ch * 2 * h + y) * 2 * w;
      for (std::size_t x = 0; x < 2 * w; ++x) out_row[x] = row[x / 2];
    }
  }
  return out;
}

inline Tensor relu(Tensor t) {
  for (float& v : t.data()) v = v > 0.0f ? v : 0.0f;
  return t;
}

inline Tensor tanh(Tensor t) {
  for (float& v : t.data()) v = std::tanh(v);
  return t;
}

/// Numerically stable softmax over a vector.
inline Tensor softmax(const Tensor& input) {
  detail::expect_rank(input, 1, "softmax input");
  const auto values = input.data();
  const double peak = *std::max_element(values.begin(), values.end());
  std::vector<double> e(values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    e[i] = std::exp(static_cast<double>(values[i]) - peak);
    total += e[i];
  }
  Tensor out(input.shape());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<float>(e[i] / total);
  }
  return out;
}

/// Parameters of a non-local self-attention layer. All projections are 1x1
/// convolutions without bias: query/key map C -> C_qk, value maps
/// C -> C_v and output maps C_v -> C.
struct AttentionParams {
  Tensor query;   // [C_qk, C, 1, 1]
  Tensor key;     // [C_qk, C, 1, 1]
  Tensor value;   // [C_v, C, 1, 1]
  Tensor output;  // [C, C_v, 1, 1]
  float gamma = 0.0f;
};

namespace detail {

/// 1x1 projection without bias; returns [C_out, N] with N = H*W.
inline std::vector<double> project_pointwise(const Tensor& input,
                                             const Tensor& kernel,
                                             const char* what) {
  expect_rank(kernel, 4, what);
  const std::size_t c = input.dim(0);
  const std::size_t n = input.dim(1) * input.dim(2);
  const std::size_t c_out = kernel.dim(0);
  expect_extent(kernel.dim(1), c, std::string(what) + " input channels");
  if (kernel.dim(2) != 1 || kernel.dim(3) != 1) {
    throw ShapeError(std::string(what) + ": projection kernels must be 1x1");
  }
  std::vector<double> out(c_out * n, 0.0);
  const float* src = input.data().data();
  parallel_for(c_out, [&](std::size_t o) {
    double* dst = out.data() + o * n;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double w = kernel[o * c + ch];
      const float* plane = src + ch * n;
      for (std::size_t p = 0; p < n; ++p) dst[p] += w * plane[p];
    }
  });
  return out;
}

}  // namespace detail

/// out = input + gamma * W_o( sum_j softmax_j(q_i . k_j) v_j ) over all H*W
/// positions. gamma == 0 returns the input unchanged, bit for bit.
inline Tensor self_attention(const Tensor& input, const AttentionParams& p) {
  detail::expect_rank(input, 3, "attention input");
  const std::size_t c = input.dim(0);
  const std::size_t n = input.dim(1) * input.dim(2);
  const std::size_t c_qk = p.query.dim(0);
  const std::size_t c_v = p.value.dim(0);
  detail::expect_extent(p.key.dim(0), c_qk, "attention key channels");
  detail::expect_rank(p.output, 4, "attention output projection");
  detail::expect_extent(p.output.dim(0), c, "attention output channels");
  detail::expect_extent(p.output.dim(1), c_v, "attention output input channels");
  if (p.gamma == 0.0f) {
    // still validate the projection shapes
    detail::project_pointwise(Tensor({c, 1, 1}), p.query, "attention query");
    detail::project_pointwise(Tensor({c, 1, 1}), p.key, "attention key");
    detail::project_pointwise(Tensor({c, 1, 1}), p.value, "attention value");
    return input;
  }

  const auto q = detail::project_pointwise(input, p.query, "attention query");
  const auto k = detail::project_pointwise(input, p.key, "attention key");
  const auto v = detail::project_pointwise(input, p.value, "attention value");

  // attended[cv, i] = sum_j softmax_j(q_i . k_j) * v[cv, j]
  std::vector<double> attended(c_v * n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> logits(n);
    double peak = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c_qk; ++ch) dot += q[ch * n + i] * k[ch * n + j];
      logits[j] = dot;
      peak = std::max(peak, dot);
    }
    double total = 0.0;
    for (double& l : logits) {
      l = std::exp(l - peak);
      total += l;
    }
    for (std::size_t cv = 0; cv < c_v; ++cv) {
      const double* vr = v.data() + cv * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += logits[j] * vr[j];
      attended[cv * n + i] = acc / total;
    }
  });

  Tensor out(input.shape());
  const float* src = input.data().data();
  float* dst = out.data().data();
  const double gamma = p.gamma;
  parallel_for(c, [&](std::size_t o) {
    std::vector<double> acc(n, 0.0);
    for (std::size_t cv = 0; cv < c_v; ++cv) {
      const double w = p.output[o * c_v + cv];
      const double* a = attended.data() + cv * n;
      for (std::size_t i = 0; i < n; ++i) acc[i] += w * a[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      dst[o * n + i] = static_cast<float>(src[o * n + i] + gamma * acc[i]);
    }
  });
  return out;
}

}  // namespace weightscape
