#pragma once

// Brute-force reference implementations. These are written directly from the
// mathematical definitions with plain index arithmetic and share no code with
// the library kernels they check.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "weightscape/tensor.hpp"

namespace oracle {

using weightscape::Tensor;

inline Tensor random_tensor(weightscape::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

// input [Ci,H,W], kernel [Co,Ci,kH,kW]; out[o,y,x] = b[o] + sum k[o,i,dy,dx] in[i,y+dy-p,x+dx-p]
inline Tensor conv2d(const Tensor& in, const Tensor& k, const Tensor& b, std::size_t pad) {
  const long ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const long co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const long p = static_cast<long>(pad);
  const long oh = h + 2 * p - kh + 1, ow = w + 2 * p - kw + 1;
  Tensor out({static_cast<std::size_t>(co), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (long o = 0; o < co; ++o)
    for (long y = 0; y < oh; ++y)
      for (long x = 0; x < ow; ++x) {
        double acc = b[o];
        for (long i = 0; i < ci; ++i)
          for (long dy = 0; dy < kh; ++dy)
            for (long dx = 0; dx < kw; ++dx) {
              const long iy = y + dy - p, ix = x + dx - p;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += static_cast<double>(k[((o * ci + i) * kh + dy) * kw + dx]) *
                     in[(i * h + iy) * w + ix];
            }
        out[(o * oh + y) * ow + x] = static_cast<float>(acc);
      }
  return out;
}

inline Tensor linear(const Tensor& in, const Tensor& w, const Tensor& b) {
  const std::size_t m = w.dim(0), n = w.dim(1);
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < n; ++c) acc += static_cast<double>(w[r * n + c]) * in[c];
    out[r] = static_cast<float>(acc);
  }
  return out;
}

inline Tensor batch_norm(const Tensor& in, const Tensor& mean, const Tensor& var,
                         const Tensor& gain, const Tensor& bias, double eps) {
  Tensor out(in.shape());
  const std::size_t c = in.dim(0), hw = in.dim(1) * in.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) {
      const double x = in[ch * hw + i];
      out[ch * hw + i] =
          static_cast<float>(gain[ch] * (x - mean[ch]) / std::sqrt(var[ch] + eps) + bias[ch]);
    }
  return out;
}

inline Tensor upsample2x(const Tensor& in) {
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx)
            out[(ch * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx] = in[(ch * h + y) * w + x];
  return out;
}

// Position-by-position attention: for each query position i, form scores
// against every key position j, normalize, mix values, project, add residual.
inline Tensor attention(const Tensor& in, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                        const Tensor& wo, double gamma) {
  const std::size_t c = in.dim(0), n = in.dim(1) * in.dim(2);
  const std::size_t cq = wq.dim(0), cv = wv.dim(0);
  auto feature = [&](const Tensor& wt, std::size_t rows, std::size_t r, std::size_t pos) {
    (void)rows;
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) acc += static_cast<double>(wt[r * c + ch]) * in[ch * n + pos];
    return acc;
  };
  Tensor out(in.shape());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> score(n);
    double top = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < cq; ++r) s += feature(wq, cq, r, i) * feature(wk, cq, r, j);
      score[j] = s;
      top = std::max(top, s);
    }
    double z = 0.0;
    for (double& s : score) z += (s = std::exp(s - top));
    std::vector<double> mixed(cv, 0.0);
    for (std::size_t r = 0; r < cv; ++r)
      for (std::size_t j = 0; j < n; ++j) mixed[r] += score[j] / z * feature(wv, cv, r, j);
    for (std::size_t o = 0; o < c; ++o) {
      double acc = 0.0;
      for (std::size_t r = 0; r < cv; ++r) acc += static_cast<double>(wo[o * cv + r]) * mixed[r];
      out[o * n + i] = static_cast<float>(in[o * n + i] + gamma * acc);
    }
  }
  return out;
}

struct MeanStd {
  double mean;
  double std;
};

// Two-pass population statistics.
inline MeanStd two_pass(const std::vector<double>& xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

}  // namespace oracle
