#pragma once

// Per-tile bodies shared by the serial and OpenMP kernels, so the two differ
// only in how tiles are scheduled.

#include <algorithm>
#include <cstdint>

#include "hesscope/kernels.hpp"

namespace hesscope::kernels::detail {

inline constexpr int64_t kColumnBlock = 512;

template <typename T>
inline void gemm_tile(int64_t i, int64_t j0, int64_t j1, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  T* crow = c + i * n;
  std::fill(crow + j0, crow + j1, T{0});
  const T* arow = a + i * k;
  for (int64_t p = 0; p < k; ++p) {
    const T aip = arow[p];
    const T* brow = b + p * n;
    for (int64_t j = j0; j < j1; ++j) crow[j] += aip * brow[j];
  }
}

template <typename T>
inline void im2col_row(const ConvGeometry& g, int64_t row, const T* x, T* cols) {
  const int64_t k = g.kernel, oh = g.out_height(), ow = g.out_width();
  const int64_t ch = row / (k * k), ki = (row / k) % k, kj = row % k;
  T* out = cols + row * g.positions();
  for (int64_t bi = 0; bi < g.batch; ++bi) {
    const T* plane = x + (bi * g.channels + ch) * g.height * g.width;
    for (int64_t r = 0; r < oh; ++r) {
      const T* src = plane + (r + ki) * g.width + kj;
      std::copy(src, src + ow, out);
      out += ow;
    }
  }
}

template <typename T>
inline void col2im_plane(const ConvGeometry& g, int64_t bi, int64_t ch, const T* cols, T* x) {
  const int64_t k = g.kernel, oh = g.out_height(), ow = g.out_width();
  T* plane = x + (bi * g.channels + ch) * g.height * g.width;
  std::fill(plane, plane + g.height * g.width, T{0});
  for (int64_t ki = 0; ki < k; ++ki) {
    for (int64_t kj = 0; kj < k; ++kj) {
      const int64_t row = (ch * k + ki) * k + kj;
      const T* src = cols + row * g.positions() + bi * oh * ow;
      for (int64_t r = 0; r < oh; ++r) {
        T* dst = plane + (r + ki) * g.width + kj;
        for (int64_t c = 0; c < ow; ++c) dst[c] += src[r * ow + c];
      }
    }
  }
}

}  // namespace hesscope::kernels::detail
