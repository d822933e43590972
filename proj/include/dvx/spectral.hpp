// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <vector>

#include "dvx/tensor.hpp"

namespace dvx {

/// Per-channel 2D complex frequency grid aligned with a (N,C,H,W) tensor.
struct ComplexGrid {
    std::array<int, 4> shape{1, 1, 1, 1};
    std::vector<double> re;
    std::vector<double> im;

    ComplexGrid() = default;
    ComplexGrid(int n, int c, int h, int w);

    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    std::int64_t numel() const { return re.size(); }

    std::int64_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w;
    }
};

struct InverseFftResult {
    Tensor real;
    double max_imag_residue = 0.0;
};

/// Forward 2D DFT per (n,c) slice, sign convention e^{-2pi i (uh/H + vw/W)},
/// unnormalized. Radix-2 for power-of-two axes, Bluestein otherwise.
ComplexGrid fft2(const Tensor& input);

/// Inverse 2D DFT with 1/(H*W) normalization. Returns the real part and the
/// largest |imaginary residue| seen. Throws if the residue exceeds 1e-6,
/// which signals a non-conjugate-symmetric spectrum upstream.
InverseFftResult ifft2(const ComplexGrid& input);

/// Direct O(H^2 W^2) double-sum DFT, same conventions as fft2. Test oracle;
/// guarded to H*W <= 4096.
ComplexGrid naive_dft2(const Tensor& input);

/// Scales every frequency bin of channel c in sample n by weights(n,c,0,0)
/// (real scalar times complex bin), i.e. fft2 -> per-channel scale -> ifft2.
InverseFftResult frequency_filter(const Tensor& x, const Tensor& weights);

/// 1D FFT building block shared by fft2/ifft2 (exposed for tests).
void fft_1d(std::vector<std::complex<double>>& v, bool inverse);

}  // namespace dvx
