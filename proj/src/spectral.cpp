// SPDX-License-Identifier: Apache-2.0
#include "dvx/spectral.hpp"

#include <cmath>
#include <stdexcept>

namespace dvx {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, in place, size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& v, bool inverse) {
    const std::size_t n = v.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(v[i], v[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = v[i + k];
                const auto t = v[i + k + len / 2] * w;
                v[i + k] = u + t;
                v[i + k + len / 2] = u - t;
                w *= wlen;
            }
        }
    }
}

// Bluestein chirp-z: expresses an arbitrary-length DFT as a cyclic
// convolution carried out with a power-of-two FFT of size >= 2n-1.
void fft_bluestein(std::vector<std::complex<double>>& v, bool inverse) {
    const std::size_t n = v.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;

    const double sign = inverse ? 1.0 : -1.0;
    std::vector<std::complex<double>> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the chirp angle exact for large k
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = sign * kPi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = {std::cos(ang), std::sin(ang)};
    }

    std::vector<std::complex<double>> a(m, {0.0, 0.0}), b(m, {0.0, 0.0});
    for (std::size_t k = 0; k < n; ++k) a[k] = v[k] * chirp[k];
    b[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);

    fft_radix2(a, false);
    fft_radix2(b, false);
    for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
    fft_radix2(a, true);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) v[k] = a[k] * scale * chirp[k];
}

}  // namespace

void fft_1d(std::vector<std::complex<double>>& v, bool inverse) {
    if (v.size() <= 1) return;
    if (is_pow2(v.size())) {
        fft_radix2(v, inverse);
    } else {
        fft_bluestein(v, inverse);
    }
}

ComplexGrid::ComplexGrid(int n, int c, int h, int w) {
    if (n < 1 || c < 1 || h < 1 || w < 1) {
        throw std::invalid_argument("ComplexGrid: every axis must be >= 1");
    }
    shape = {n, c, h, w};
    re.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
    im.assign(re.size(), 0.0);
}

namespace {

// Row transforms then column transforms over one (n,c) slice.
void transform_slice(std::vector<std::complex<double>>& slice, int H, int W, bool inverse) {
    std::vector<std::complex<double>> line;
    line.resize(W);
    for (int h = 0; h < H; ++h) {
        std::copy_n(slice.begin() + static_cast<std::size_t>(h) * W, W, line.begin());
        fft_1d(line, inverse);
        std::copy_n(line.begin(), W, slice.begin() + static_cast<std::size_t>(h) * W);
    }
    line.resize(H);
    for (int w = 0; w < W; ++w) {
        for (int h = 0; h < H; ++h) line[h] = slice[static_cast<std::size_t>(h) * W + w];
        fft_1d(line, inverse);
        for (int h = 0; h < H; ++h) slice[static_cast<std::size_t>(h) * W + w] = line[h];
    }
}

}  // namespace

ComplexGrid fft2(const Tensor& input) {
    const int N = input.n(), C = input.c(), H = input.h(), W = input.w();
    ComplexGrid out(N, C, H, W);
    std::vector<std::complex<double>> slice(static_cast<std::size_t>(H) * W);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const double* src = &input.at(n, c, 0, 0);
            for (std::size_t i = 0; i < slice.size(); ++i) slice[i] = {src[i], 0.0};
            transform_slice(slice, H, W, false);
            const std::int64_t base = out.index(n, c, 0, 0);
            for (std::size_t i = 0; i < slice.size(); ++i) {
                out.re[base + i] = slice[i].real();
                out.im[base + i] = slice[i].imag();
            }
        }
    }
    return out;
}

InverseFftResult ifft2(const ComplexGrid& input) {
    const int N = input.n(), C = input.c(), H = input.h(), W = input.w();
    InverseFftResult result;
    result.real = Tensor(N, C, H, W, 0.0);
    const double norm = 1.0 / (static_cast<double>(H) * W);
    std::vector<std::complex<double>> slice(static_cast<std::size_t>(H) * W);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::int64_t base = input.index(n, c, 0, 0);
            for (std::size_t i = 0; i < slice.size(); ++i) {
                slice[i] = {input.re[base + i], input.im[base + i]};
            }
            transform_slice(slice, H, W, true);
            double* dst = &result.real.at(n, c, 0, 0);
            for (std::size_t i = 0; i < slice.size(); ++i) {
                dst[i] = slice[i].real() * norm;
                result.max_imag_residue =
                    std::max(result.max_imag_residue, std::abs(slice[i].imag() * norm));
            }
        }
    }
    if (result.max_imag_residue > 1e-6) {
        throw std::runtime_error("ifft2: imaginary residue " +
                                 std::to_string(result.max_imag_residue) +
                                 " exceeds 1e-6; spectrum is not conjugate-symmetric");
    }
    return result;
}

ComplexGrid naive_dft2(const Tensor& input) {
    const int N = input.n(), C = input.c(), H = input.h(), W = input.w();
    if (static_cast<std::int64_t>(H) * W > 4096) {
        throw std::invalid_argument("naive_dft2: H*W exceeds the 4096 size guard");
    }
    ComplexGrid out(N, C, H, W);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int u = 0; u < H; ++u) {
                for (int v = 0; v < W; ++v) {
                    double sr = 0.0, si = 0.0;
                    for (int h = 0; h < H; ++h) {
                        for (int w = 0; w < W; ++w) {
                            const double ang = -2.0 * kPi *
                                               (static_cast<double>(u) * h / H +
                                                static_cast<double>(v) * w / W);
                            const double x = input.at(n, c, h, w);
                            sr += x * std::cos(ang);
                            si += x * std::sin(ang);
                        }
                    }
                    const std::int64_t idx = out.index(n, c, u, v);
                    out.re[idx] = sr;
                    out.im[idx] = si;
                }
            }
        }
    }
    return out;
}

InverseFftResult frequency_filter(const Tensor& x, const Tensor& weights) {
    if (weights.n() != x.n() || weights.c() != x.c() || weights.h() != 1 || weights.w() != 1) {
        throw std::invalid_argument("frequency_filter: weights must be (N,C,1,1) matching input");
    }
    ComplexGrid spec = fft2(x);
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const double wv = weights.at(n, c, 0, 0);
            const std::int64_t base = spec.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                spec.re[base + i] *= wv;
                spec.im[base + i] *= wv;
            }
        }
    }
    return ifft2(spec);
}

}  // namespace dvx
