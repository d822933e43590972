// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "dvx/cafm.hpp"
#include "test_support.hpp"

using namespace dvx;
using dvxtest::max_abs_diff;
using dvxtest::random_tensor;

namespace {

CbamParams bias_only_cbam(int c, double bias) {
    CbamParams p;
    p.mlp_w1 = Tensor(1, 1, c, 1, 0.0);
    p.mlp_b1 = Tensor(1, 1, 1, 1, 0.0);
    p.mlp_w2 = Tensor(1, 1, 1, c, 0.0);
    p.mlp_b2 = Tensor(1, 1, 1, c, bias / 2.0);  // avg and max descriptors sum
    p.conv7_w = Tensor(1, 2, 7, 7, 0.0);
    p.conv7_b = Tensor(1, 1, 1, 1, bias);
    return p;
}

}  // namespace

TEST_CASE("saturated CBAM gates pass the input through unchanged") {
    const int c = 4;
    Tensor x = random_tensor(1, c, 5, 5, 81);
    Tensor open = cbam_forward(x, bias_only_cbam(c, 50.0));
    CHECK(max_abs_diff(open, x) < 1e-12);
}

TEST_CASE("closed CBAM gates suppress the input to near zero") {
    const int c = 4;
    Tensor x = random_tensor(1, c, 5, 5, 82);
    Tensor closed = cbam_forward(x, bias_only_cbam(c, -50.0));
    for (double v : closed.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("CBAM matches a straight-line composition oracle") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 83);
    Tensor x = random_tensor(1, c, 5, 5, 84);
    Tensor got = cbam_forward(x, p.cbam_ol);

    const CbamParams& cb = p.cbam_ol;
    auto mlp = [&](const Tensor& pooled) {
        Tensor row = reshape(pooled, 1, 1, 1, c);
        Tensor hidden = activation(add(matmul(row, cb.mlp_w1), cb.mlp_b1), Activation::ReLU);
        return add(matmul(hidden, cb.mlp_w2), cb.mlp_b2);
    };
    Tensor mc_logits = add(mlp(pool2d(x, {PoolOp::Avg, true}, 1, 1, 1, 1)),
                           mlp(pool2d(x, {PoolOp::Max, true}, 1, 1, 1, 1)));
    Tensor mc = reshape(activation(mc_logits, Activation::Sigmoid), 1, c, 1, 1);
    Tensor gated = mul(x, mc);
    Tensor cat = concat_channels(reduce_channels(gated, PoolOp::Avg),
                                 reduce_channels(gated, PoolOp::Max));
    ConvSpec c7{2, 1, 7, 7, 1, 1, 3, 3, 1};
    Tensor ms = activation(
        conv2d(cat, cb.conv7_w, std::vector<double>(cb.conv7_b.data.begin(), cb.conv7_b.data.end()),
               c7),
        Activation::Sigmoid);
    Tensor expect = mul(gated, ms);
    CHECK(max_abs_diff(got, expect) < 1e-12);
}

TEST_CASE("dwcsplayer with a dead depthwise branch equals the pointwise branch") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 85);
    std::fill(p.dwcsp.dw_depth_w.data.begin(), p.dwcsp.dw_depth_w.data.end(), 0.0);
    std::fill(p.dwcsp.dw_depth_b.data.begin(), p.dwcsp.dw_depth_b.data.end(), 0.0);
    std::fill(p.dwcsp.dw_point_w.data.begin(), p.dwcsp.dw_point_w.data.end(), 0.0);
    std::fill(p.dwcsp.dw_point_b.data.begin(), p.dwcsp.dw_point_b.data.end(), 0.0);
    Tensor f = random_tensor(1, 2 * c, 4, 4, 86);
    Tensor got = dwcsplayer_forward(f, p.dwcsp);
    ConvSpec point{2 * c, c, 1, 1, 1, 1, 0, 0, 1};
    Tensor expect =
        conv2d(f, p.dwcsp.conv1_w,
               std::vector<double>(p.dwcsp.conv1_b.data.begin(), p.dwcsp.conv1_b.data.end()),
               point);
    CHECK(max_abs_diff(got, expect) == 0.0);
}

TEST_CASE("dwcsplayer with all weights and biases zero annihilates") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 87);
    for (Tensor* t : {&p.dwcsp.conv1_w, &p.dwcsp.conv1_b, &p.dwcsp.dw_depth_w, &p.dwcsp.dw_depth_b,
                      &p.dwcsp.dw_point_w, &p.dwcsp.dw_point_b}) {
        std::fill(t->data.begin(), t->data.end(), 0.0);
    }
    Tensor f = random_tensor(1, 2 * c, 4, 4, 88);
    for (double v : dwcsplayer_forward(f, p.dwcsp).data) CHECK(v == 0.0);
}

TEST_CASE("dwcsplayer matches the two-branch composition oracle") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 89);
    Tensor f = random_tensor(1, 2 * c, 4, 4, 90);
    Tensor got = dwcsplayer_forward(f, p.dwcsp);

    ConvSpec point1{2 * c, c, 1, 1, 1, 1, 0, 0, 1};
    ConvSpec depth{2 * c, 2 * c, 3, 3, 1, 1, 1, 1, 2 * c};
    ConvSpec point2{2 * c, c, 1, 1, 1, 1, 0, 0, 1};
    Tensor fx2 =
        conv2d(f, p.dwcsp.conv1_w,
               std::vector<double>(p.dwcsp.conv1_b.data.begin(), p.dwcsp.conv1_b.data.end()),
               point1);
    Tensor mid =
        conv2d(f, p.dwcsp.dw_depth_w,
               std::vector<double>(p.dwcsp.dw_depth_b.data.begin(), p.dwcsp.dw_depth_b.data.end()),
               depth);
    Tensor fx1 =
        conv2d(mid, p.dwcsp.dw_point_w,
               std::vector<double>(p.dwcsp.dw_point_b.data.begin(), p.dwcsp.dw_point_b.data.end()),
               point2);
    CHECK(max_abs_diff(got, add(fx1, fx2)) < 1e-12);
}

TEST_CASE("dwcsplayer rejects inputs whose channel count is not 2C") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 91);
    Tensor bad = random_tensor(1, c, 4, 4, 92);
    CHECK_THROWS_AS(dwcsplayer_forward(bad, p.dwcsp), std::invalid_argument);
}

TEST_CASE("cafm output is nonnegative and keeps C channels") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 93);
    Tensor x = random_tensor(2, c, 4, 4, 94);
    Tensor y = random_tensor(2, c, 4, 4, 95);
    Tensor out = cafm_forward(x, y, p, BnMode::Train);
    CHECK(out.shape == std::array<int, 4>{2, c, 4, 4});
    for (double v : out.data) CHECK(v >= 0.0);
}

TEST_CASE("zero inputs with zero biases collapse to zero output") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 96);
    // zero every bias-like parameter; weights may stay arbitrary
    for (Tensor* t : {&p.cbam_ol.mlp_b1, &p.cbam_ol.mlp_b2, &p.cbam_ol.conv7_b, &p.cbam_sd.mlp_b1,
                      &p.cbam_sd.mlp_b2, &p.cbam_sd.conv7_b, &p.bn_beta, &p.dwcsp.conv1_b,
                      &p.dwcsp.dw_depth_b, &p.dwcsp.dw_point_b}) {
        std::fill(t->data.begin(), t->data.end(), 0.0);
    }
    Tensor zero(1, c, 4, 4, 0.0);
    Tensor out = cafm_forward(zero, zero, p, BnMode::Train);
    for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("cafm matches the full straight-line composition oracle") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 97);
    Tensor x = random_tensor(1, c, 4, 4, 98);
    Tensor y = random_tensor(1, c, 4, 4, 99);

    CafmParams fresh = p;
    Tensor got = cafm_forward(x, y, p, BnMode::Train);

    Tensor ol = cbam_forward(x, fresh.cbam_ol);
    Tensor sd = cbam_forward(y, fresh.cbam_sd);
    Tensor cat = concat_channels(ol, sd);
    BatchNormState st = fresh.bn_state;
    Tensor bn = batchnorm2d(cat, fresh.bn_gamma, fresh.bn_beta, &st, BnMode::Train);
    Tensor csp = dwcsplayer_forward(bn, fresh.dwcsp);
    Tensor expect = activation(csp, Activation::ReLU);
    CHECK(max_abs_diff(got, expect) < 1e-12);
}

TEST_CASE("cafm rejects views with mismatched spatial sizes") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 100);
    Tensor x = random_tensor(1, c, 4, 4, 101);
    Tensor y = random_tensor(1, c, 6, 6, 102);
    CHECK_THROWS_WITH_AS(cafm_forward(x, y, p, BnMode::Train), doctest::Contains("resize"),
                         std::invalid_argument);
}

TEST_CASE("CBAM gates equal to one are reachable, enabling the no-CBAM ablation") {
    const int c = 4;
    CafmParams p = cafm_init(c, 4, 103);
    p.cbam_ol = bias_only_cbam(c, 50.0);
    p.cbam_sd = bias_only_cbam(c, 50.0);
    Tensor x = random_tensor(1, c, 4, 4, 104);
    Tensor y = random_tensor(1, c, 4, 4, 105);

    CafmParams fresh = p;
    Tensor with_gates = cafm_forward(x, y, p, BnMode::Train);
    // oracle with CBAM removed entirely
    Tensor cat = concat_channels(x, y);
    BatchNormState st = fresh.bn_state;
    Tensor bn = batchnorm2d(cat, fresh.bn_gamma, fresh.bn_beta, &st, BnMode::Train);
    Tensor expect = activation(dwcsplayer_forward(bn, fresh.dwcsp), Activation::ReLU);
    CHECK(max_abs_diff(with_gates, expect) < 1e-9);
}
