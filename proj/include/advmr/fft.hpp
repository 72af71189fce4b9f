#pragma once

#include "advmr/tensor.hpp"

namespace advmr {

// Centered orthonormal 2-D Fourier transforms on rank-2 tensors:
//   fft2c  = fftshift ∘ DFT2 ∘ ifftshift, scaled by 1/sqrt(H*W)
//   ifft2c = fftshift ∘ IDFT2 ∘ ifftshift, scaled by 1/sqrt(H*W)
// Zero frequency sits at (H/2, W/2). The pair is unitary: mutual inverses
// and norm-preserving. Power-of-two lengths use an iterative radix-2
// transform; any other length goes through a Bluestein chirp-z fallback.
Tensor fft2c(const Tensor& x);
Tensor ifft2c(const Tensor& x);

// Unnormalized, uncentered 1-D transform used internally and by tests.
void fft_1d(cplx* x, int n, bool inverse);

} // namespace advmr
