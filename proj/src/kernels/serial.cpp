#include "kernel_impl.hpp"

namespace hesscope::kernels::serial {

template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j0 = 0; j0 < n; j0 += detail::kColumnBlock) {
      detail::gemm_tile(i, j0, std::min(n, j0 + detail::kColumnBlock), n, k, a, b, c);
    }
  }
}

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* in, T* out) {
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  for (int64_t row = 0; row < g.patch(); ++row) detail::im2col_row(g, row, x, cols);
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* x) {
  for (int64_t bi = 0; bi < g.batch; ++bi) {
    for (int64_t ch = 0; ch < g.channels; ++ch) detail::col2im_plane(g, bi, ch, cols, x);
  }
}

#define HESSCOPE_INSTANTIATE(T)                                              \
  template void gemm<T>(int64_t, int64_t, int64_t, const T*, const T*, T*); \
  template void transpose<T>(int64_t, int64_t, const T*, T*);              \
  template void im2col<T>(const ConvGeometry&, const T*, T*);              \
  template void col2im<T>(const ConvGeometry&, const T*, T*);
HESSCOPE_INSTANTIATE(float)
HESSCOPE_INSTANTIATE(double)
#undef HESSCOPE_INSTANTIATE

}  // namespace hesscope::kernels::serial
