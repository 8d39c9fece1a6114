#include <omp.h>

#include "kernel_impl.hpp"

namespace hesscope::kernels::omp {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr int64_t kParallelWork = 1 << 15;
}

template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  const int64_t blocks = (n + detail::kColumnBlock - 1) / detail::kColumnBlock;
  const int64_t tiles = m * blocks;
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (int64_t t = 0; t < tiles; ++t) {
    const int64_t i = t / blocks;
    const int64_t j0 = (t % blocks) * detail::kColumnBlock;
    detail::gemm_tile(i, j0, std::min(n, j0 + detail::kColumnBlock), n, k, a, b, c);
  }
}

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* in, T* out) {
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (int64_t c = 0; c < cols; ++c) {
    for (int64_t r = 0; r < rows; ++r) out[c * rows + r] = in[r * cols + c];
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
#pragma omp parallel for schedule(static) if (g.patch() * g.positions() >= kParallelWork)
  for (int64_t row = 0; row < g.patch(); ++row) detail::im2col_row(g, row, x, cols);
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* x) {
  const int64_t planes = g.batch * g.channels;
#pragma omp parallel for schedule(static) if (g.patch() * g.positions() >= kParallelWork)
  for (int64_t p = 0; p < planes; ++p) detail::col2im_plane(g, p / g.channels, p % g.channels, cols, x);
}

#define HESSCOPE_INSTANTIATE(T)                                              \
  template void gemm<T>(int64_t, int64_t, int64_t, const T*, const T*, T*); \
  template void transpose<T>(int64_t, int64_t, const T*, T*);              \
  template void im2col<T>(const ConvGeometry&, const T*, T*);              \
  template void col2im<T>(const ConvGeometry&, const T*, T*);
HESSCOPE_INSTANTIATE(float)
HESSCOPE_INSTANTIATE(double)
#undef HESSCOPE_INSTANTIATE

}  // namespace hesscope::kernels::omp
