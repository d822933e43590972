// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "dvx/fdim.hpp"
#include "dvx/spectral.hpp"
#include "test_support.hpp"

using namespace dvx;
using dvxtest::max_abs_diff;
using dvxtest::random_tensor;

namespace {

FdimBranch zero_branch(int c, int r) {
    FdimBranch b;
    b.w1 = Tensor(1, 1, c, c / r, 0.0);
    b.b1 = Tensor(1, 1, 1, c / r, 0.0);
    b.w2 = Tensor(1, 1, c / r, c, 0.0);
    b.b2 = Tensor(1, 1, 1, c, 0.0);
    return b;
}

}  // namespace

TEST_CASE("zero MLP produces uniform softmax filter weights") {
    const int c = 4;
    Tensor x = random_tensor(2, c, 6, 6, 31);
    Tensor w = fdim_filter_weights(x, zero_branch(c, 2));
    CHECK(w.shape == std::array<int, 4>{2, c, 1, 1});
    for (double v : w.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("filter weights are nonnegative and sum to one per sample") {
    const int c = 8;
    FdimParams p = fdim_init(c, 4, 99);
    Tensor x = random_tensor(3, c, 5, 5, 32);
    Tensor w = fdim_filter_weights(x, p.ol);
    for (int n = 0; n < 3; ++n) {
        double sum = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            CHECK(w.at(n, ch, 0, 0) >= 0.0);
            sum += w.at(n, ch, 0, 0);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("forced two-channel logits match the direct softmax oracle") {
    // bias-only MLP forcing logits [+10, -10]; expected weights computed by
    // exp-normalize, not quoted from memory
    const int c = 2;
    FdimBranch b = zero_branch(c, 1);
    b.b2.data = {10.0, -10.0};
    Tensor x = random_tensor(1, c, 4, 4, 33);
    Tensor w = fdim_filter_weights(x, b);
    const double z = std::exp(10.0) + std::exp(-10.0);
    CHECK(w.at(0, 0, 0, 0) == doctest::Approx(std::exp(10.0) / z).epsilon(1e-12));
    CHECK(w.at(0, 1, 0, 0) == doctest::Approx(std::exp(-10.0) / z).epsilon(1e-12));
    CHECK(w.at(0, 0, 0, 0) > 0.9999);
    CHECK(w.at(0, 1, 0, 0) < 1e-8);
}

TEST_CASE("permuting channels together with MLP rows and columns permutes weights") {
    const int c = 4;
    FdimParams p = fdim_init(c, 2, 123);
    Tensor x = random_tensor(1, c, 5, 5, 34);
    Tensor w = fdim_filter_weights(x, p.ol);

    const int perm[c] = {2, 0, 3, 1};  // maps old channel -> new position
    Tensor xp(1, c, 5, 5);
    for (int ch = 0; ch < c; ++ch)
        for (int h = 0; h < 5; ++h)
            for (int ww = 0; ww < 5; ++ww) xp.at(0, perm[ch], h, ww) = x.at(0, ch, h, ww);
    FdimBranch bp = p.ol;
    for (int ch = 0; ch < c; ++ch) {
        for (int k = 0; k < c / 2; ++k) bp.w1.at(0, 0, perm[ch], k) = p.ol.w1.at(0, 0, ch, k);
        for (int k = 0; k < c / 2; ++k) bp.w2.at(0, 0, k, perm[ch]) = p.ol.w2.at(0, 0, k, ch);
        bp.b2.at(0, 0, 0, perm[ch]) = p.ol.b2.at(0, 0, 0, ch);
    }
    Tensor wp = fdim_filter_weights(xp, bp);
    for (int ch = 0; ch < c; ++ch) {
        CHECK(wp.at(0, perm[ch], 0, 0) == doctest::Approx(w.at(0, ch, 0, 0)).epsilon(1e-12));
    }
}

TEST_CASE("uniform filter weights yield the (1 + 1/C) closed form") {
    const int c = 4;
    FdimParams p;
    p.channels = c;
    p.reduction = 2;
    p.ol = zero_branch(c, 2);
    p.sd = zero_branch(c, 2);
    Tensor x = random_tensor(1, c, 8, 8, 35);
    Tensor y = random_tensor(1, c, 8, 8, 36);
    FdimOutput out = fdim_forward(x, y, p);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        CHECK(out.x.data[i] == doctest::Approx((1.0 + 1.0 / c) * x.data[i]).epsilon(1e-9));
        CHECK(out.y.data[i] == doctest::Approx((1.0 + 1.0 / c) * y.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("zero input stays zero through the block") {
    const int c = 4;
    FdimParams p = fdim_init(c, 2, 321);
    Tensor zero(1, c, 6, 6, 0.0);
    Tensor y = random_tensor(1, c, 6, 6, 37);
    FdimOutput out = fdim_forward(zero, y, p);
    for (double v : out.x.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("block matches a step-by-step naive-DFT oracle") {
    const int c = 4;
    FdimParams p = fdim_init(c, 2, 555);
    Tensor x = random_tensor(1, c, 8, 8, 38);
    Tensor y = random_tensor(1, c, 8, 8, 39);
    FdimOutput out = fdim_forward(x, y, p);

    auto oracle_branch = [&](const Tensor& in, const FdimBranch& br) {
        Tensor w = fdim_filter_weights(in, br);
        ComplexGrid spec = naive_dft2(in);
        for (int ch = 0; ch < c; ++ch) {
            const double wv = w.at(0, ch, 0, 0);
            const std::int64_t base = spec.index(0, ch, 0, 0);
            for (int i = 0; i < 64; ++i) {
                spec.re[base + i] *= wv;
                spec.im[base + i] *= wv;
            }
        }
        // naive inverse: conjugate trick through the forward naive transform
        Tensor result(1, c, 8, 8, 0.0);
        for (int ch = 0; ch < c; ++ch) {
            for (int h = 0; h < 8; ++h)
                for (int ww = 0; ww < 8; ++ww) {
                    double acc = 0.0;
                    for (int u = 0; u < 8; ++u)
                        for (int v = 0; v < 8; ++v) {
                            const double ang =
                                2.0 * 3.14159265358979323846 * (u * h / 8.0 + v * ww / 8.0);
                            const std::int64_t idx = spec.index(0, ch, u, v);
                            acc += spec.re[idx] * std::cos(ang) - spec.im[idx] * std::sin(ang);
                        }
                    result.at(0, ch, h, ww) = acc / 64.0 + in.at(0, ch, h, ww);
                }
        }
        return result;
    };
    CHECK(max_abs_diff(out.x, oracle_branch(x, p.ol)) < 1e-9);
    CHECK(max_abs_diff(out.y, oracle_branch(y, p.sd)) < 1e-9);
}

TEST_CASE("shapes are preserved even for non-square, non-pow2 inputs") {
    const int c = 4;
    FdimParams p = fdim_init(c, 2, 777);
    Tensor x = random_tensor(2, c, 6, 10, 40);
    Tensor y = random_tensor(2, c, 7, 5, 41);
    FdimOutput out = fdim_forward(x, y, p);
    CHECK(out.x.shape == x.shape);
    CHECK(out.y.shape == y.shape);
    CHECK(out.imag_residue < 1e-8);
}

TEST_CASE("filtering commutes with circular shifts of the input") {
    const int c = 4;
    FdimParams p = fdim_init(c, 2, 888);
    // disable the descriptor's dependence on the input so both runs share W:
    // a circular shift leaves the global average unchanged anyway
    Tensor x = random_tensor(1, c, 8, 8, 42);
    const int dy = 3, dx = 5;
    Tensor xs(1, c, 8, 8);
    for (int ch = 0; ch < c; ++ch)
        for (int h = 0; h < 8; ++h)
            for (int w = 0; w < 8; ++w)
                xs.at(0, ch, (h + dy) % 8, (w + dx) % 8) = x.at(0, ch, h, w);

    FdimOutput a = fdim_forward(x, x, p);
    FdimOutput b = fdim_forward(xs, xs, p);
    Tensor shifted_out(1, c, 8, 8);
    for (int ch = 0; ch < c; ++ch)
        for (int h = 0; h < 8; ++h)
            for (int w = 0; w < 8; ++w)
                shifted_out.at(0, ch, (h + dy) % 8, (w + dx) % 8) = a.x.at(0, ch, h, w);
    CHECK(max_abs_diff(b.x, shifted_out) < 1e-9);
}

TEST_CASE("cross conditioning swaps which view drives which filter") {
    const int c = 4;
    FdimParams p = fdim_init(c, 2, 999);
    Tensor x = random_tensor(1, c, 6, 6, 43);
    Tensor y = random_tensor(1, c, 6, 6, 44);

    FdimParams crossed = p;
    crossed.cross_conditioning = true;
    FdimOutput direct = fdim_forward(x, y, p);
    FdimOutput cross = fdim_forward(x, y, crossed);

    // with cross conditioning the OL filter is computed from y
    Tensor w_direct = fdim_filter_weights(x, p.ol);
    Tensor w_cross = fdim_filter_weights(y, p.ol);
    CHECK(max_abs_diff(w_direct, w_cross) > 1e-6);  // genuinely different drivers
    // and the outputs differ accordingly
    CHECK(max_abs_diff(direct.x, cross.x) > 1e-9);
}
