#pragma once

#include <cstdint>

// Hot loops of the tensor engine. Every kernel has a serial reference and an
// OpenMP version; the parallel versions split only independent output
// elements, so both produce bitwise-identical results.

namespace hesscope::kernels {

struct ConvGeometry {
  int64_t batch, channels, height, width, kernel;
  int64_t out_height() const { return height - kernel + 1; }
  int64_t out_width() const { return width - kernel + 1; }
  int64_t patch() const { return channels * kernel * kernel; }
  int64_t positions() const { return batch * out_height() * out_width(); }
};

namespace serial {

/// C[m×n] = A[m×k] · B[k×n], all row-major. C is overwritten.
template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* in, T* out);

/// Unfolds x [B,C,H,W] into cols [C·k·k, B·OH·OW] (valid convolution, stride 1).
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols);

/// Adjoint of im2col: x is overwritten with the folded sum.
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* x);

}  // namespace serial

namespace omp {

template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* in, T* out);

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols);

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* x);

}  // namespace omp

// Default dispatch used by the engine.
using omp::col2im;
using omp::gemm;
using omp::im2col;
using omp::transpose;

}  // namespace hesscope::kernels
