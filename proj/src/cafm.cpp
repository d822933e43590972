// SPDX-License-Identifier: Apache-2.0
#include "dvx/cafm.hpp"

#include <algorithm>
#include <stdexcept>

#include "dvx/init.hpp"

namespace dvx {

namespace {

CbamParams init_cbam(int c, int r, std::mt19937_64& rng) {
    const int hidden = std::max(1, c / r);
    CbamParams p;
    p.mlp_w1 = Tensor(1, 1, c, hidden);
    p.mlp_b1 = Tensor(1, 1, 1, hidden, 0.0);
    p.mlp_w2 = Tensor(1, 1, hidden, c);
    p.mlp_b2 = Tensor(1, 1, 1, c, 0.0);
    fill_xavier(p.mlp_w1, c, hidden, rng);
    fill_xavier(p.mlp_w2, hidden, c, rng);
    p.conv7_w = Tensor(1, 2, 7, 7);
    p.conv7_b = Tensor(1, 1, 1, 1, 0.0);
    fill_kaiming(p.conv7_w, 2 * 49, rng);
    return p;
}

}  // namespace

CafmParams cafm_init(int channels, int cbam_reduction, std::uint64_t seed) {
    std::mt19937_64 rng(substream(seed, 0xcaf));
    CafmParams p;
    p.channels = channels;
    p.cbam_reduction = cbam_reduction;
    p.cbam_ol = init_cbam(channels, cbam_reduction, rng);
    p.cbam_sd = init_cbam(channels, cbam_reduction, rng);
    const int c2 = 2 * channels;
    p.bn_gamma = Tensor(1, c2, 1, 1, 1.0);
    p.bn_beta = Tensor(1, c2, 1, 1, 0.0);
    p.bn_state = {Tensor(1, c2, 1, 1, 0.0), Tensor(1, c2, 1, 1, 1.0)};
    p.dwcsp.conv1_w = Tensor(channels, c2, 1, 1);
    p.dwcsp.conv1_b = Tensor(1, channels, 1, 1, 0.0);
    p.dwcsp.dw_depth_w = Tensor(c2, 1, 3, 3);
    p.dwcsp.dw_depth_b = Tensor(1, c2, 1, 1, 0.0);
    p.dwcsp.dw_point_w = Tensor(channels, c2, 1, 1);
    p.dwcsp.dw_point_b = Tensor(1, channels, 1, 1, 0.0);
    fill_kaiming(p.dwcsp.conv1_w, c2, rng);
    fill_kaiming(p.dwcsp.dw_depth_w, 9, rng);
    fill_kaiming(p.dwcsp.dw_point_w, c2, rng);
    return p;
}

namespace {

CbamVals lift_cbam(ad::Tape& t, const CbamParams& p, const std::string& prefix,
                   bool requires_grad) {
    CbamVals v;
    v.mlp_w1 = t.leaf(prefix + ".mlp.fc1.w", p.mlp_w1, requires_grad);
    v.mlp_b1 = t.leaf(prefix + ".mlp.fc1.b", p.mlp_b1, requires_grad);
    v.mlp_w2 = t.leaf(prefix + ".mlp.fc2.w", p.mlp_w2, requires_grad);
    v.mlp_b2 = t.leaf(prefix + ".mlp.fc2.b", p.mlp_b2, requires_grad);
    v.conv7_w = t.leaf(prefix + ".conv7.w", p.conv7_w, requires_grad);
    v.conv7_b = t.leaf(prefix + ".conv7.b", p.conv7_b, requires_grad);
    return v;
}

}  // namespace

CafmVals cafm_lift(ad::Tape& t, const CafmParams& p, const std::string& prefix,
                   bool requires_grad) {
    CafmVals v;
    v.cbam_ol = lift_cbam(t, p.cbam_ol, prefix + ".cbam.ol", requires_grad);
    v.cbam_sd = lift_cbam(t, p.cbam_sd, prefix + ".cbam.sd", requires_grad);
    v.bn_gamma = t.leaf(prefix + ".bn.gamma", p.bn_gamma, requires_grad);
    v.bn_beta = t.leaf(prefix + ".bn.beta", p.bn_beta, requires_grad);
    v.dwcsp.conv1_w = t.leaf(prefix + ".dwcsp.conv1.w", p.dwcsp.conv1_w, requires_grad);
    v.dwcsp.conv1_b = t.leaf(prefix + ".dwcsp.conv1.b", p.dwcsp.conv1_b, requires_grad);
    v.dwcsp.dw_depth_w = t.leaf(prefix + ".dwcsp.dw.depth.w", p.dwcsp.dw_depth_w, requires_grad);
    v.dwcsp.dw_depth_b = t.leaf(prefix + ".dwcsp.dw.depth.b", p.dwcsp.dw_depth_b, requires_grad);
    v.dwcsp.dw_point_w = t.leaf(prefix + ".dwcsp.dw.point.w", p.dwcsp.dw_point_w, requires_grad);
    v.dwcsp.dw_point_b = t.leaf(prefix + ".dwcsp.dw.point.b", p.dwcsp.dw_point_b, requires_grad);
    return v;
}

ad::Value cbam_forward(ad::Tape& t, ad::Value f, const CbamVals& vals) {
    const Tensor& x = t.val(f);
    const int n = x.n(), c = x.c();
    if (t.val(vals.mlp_w1).h() != c) {
        throw std::invalid_argument("cbam_forward: channel axis does not match parameters");
    }
    auto mlp = [&](ad::Value pooled) {
        ad::Value row = t.reshape(pooled, n, 1, 1, c);
        ad::Value hidden = t.relu(t.add(t.matmul(row, vals.mlp_w1), vals.mlp_b1));
        return t.add(t.matmul(hidden, vals.mlp_w2), vals.mlp_b2);
    };
    ad::Value avg_desc = mlp(t.pool2d(f, {PoolOp::Avg, true}));
    ad::Value max_desc = mlp(t.pool2d(f, {PoolOp::Max, true}));
    ad::Value mc = t.reshape(t.sigmoid(t.add(avg_desc, max_desc)), n, c, 1, 1);
    ad::Value gated = t.mul(f, mc);

    ad::Value cat = t.concat_channels(t.reduce_channels(gated, PoolOp::Avg),
                                      t.reduce_channels(gated, PoolOp::Max));
    ConvSpec conv7{2, 1, 7, 7, 1, 1, 3, 3, 1};
    ad::Value ms = t.sigmoid(t.conv2d(cat, vals.conv7_w, vals.conv7_b, conv7));
    return t.mul(gated, ms);
}

ad::Value dwcsplayer_forward(ad::Tape& t, ad::Value f_bn, const DwcspVals& vals) {
    const Tensor& x = t.val(f_bn);
    const int c2 = x.c();
    const int c = t.val(vals.conv1_w).n();
    if (t.val(vals.conv1_w).c() != c2) {
        throw std::invalid_argument("dwcsplayer_forward: input must have 2C channels, got " +
                                    std::to_string(c2));
    }
    ConvSpec point1{c2, c, 1, 1, 1, 1, 0, 0, 1};
    ad::Value branch_pw = t.conv2d(f_bn, vals.conv1_w, vals.conv1_b, point1);

    ConvSpec depth{c2, c2, 3, 3, 1, 1, 1, 1, c2};
    ConvSpec point2{c2, c, 1, 1, 1, 1, 0, 0, 1};
    ad::Value mid = t.conv2d(f_bn, vals.dw_depth_w, vals.dw_depth_b, depth);
    ad::Value branch_dw = t.conv2d(mid, vals.dw_point_w, vals.dw_point_b, point2);

    return t.add(branch_dw, branch_pw);
}

ad::Value cafm_forward(ad::Tape& t, ad::Value f_ol, ad::Value f_sd, const CafmVals& vals,
                       CafmParams* state, BnMode mode) {
    const Tensor& a = t.val(f_ol);
    const Tensor& b = t.val(f_sd);
    if (a.h() != b.h() || a.w() != b.w()) {
        throw std::invalid_argument(
            "cafm_forward: views have different spatial sizes (" + a.shape_str() + " vs " +
            b.shape_str() + "); the model layer must resize before fusion");
    }
    ad::Value ol = cbam_forward(t, f_ol, vals.cbam_ol);
    ad::Value sd = cbam_forward(t, f_sd, vals.cbam_sd);
    ad::Value cat = t.concat_channels(ol, sd);
    BatchNormState* st = state ? &state->bn_state : nullptr;
    ad::Value bn = t.batchnorm(cat, vals.bn_gamma, vals.bn_beta, st, mode);
    ad::Value csp = dwcsplayer_forward(t, bn, vals.dwcsp);
    return t.relu(csp);
}

Tensor cbam_forward(const Tensor& f, const CbamParams& params) {
    ad::Tape t;
    CbamVals v;
    v.mlp_w1 = t.input(params.mlp_w1);
    v.mlp_b1 = t.input(params.mlp_b1);
    v.mlp_w2 = t.input(params.mlp_w2);
    v.mlp_b2 = t.input(params.mlp_b2);
    v.conv7_w = t.input(params.conv7_w);
    v.conv7_b = t.input(params.conv7_b);
    return t.val(cbam_forward(t, t.input(f), v));
}

Tensor dwcsplayer_forward(const Tensor& f_bn, const DwcspParams& params) {
    ad::Tape t;
    DwcspVals v;
    v.conv1_w = t.input(params.conv1_w);
    v.conv1_b = t.input(params.conv1_b);
    v.dw_depth_w = t.input(params.dw_depth_w);
    v.dw_depth_b = t.input(params.dw_depth_b);
    v.dw_point_w = t.input(params.dw_point_w);
    v.dw_point_b = t.input(params.dw_point_b);
    return t.val(dwcsplayer_forward(t, t.input(f_bn), v));
}

Tensor cafm_forward(const Tensor& f_ol, const Tensor& f_sd, CafmParams& params, BnMode mode) {
    ad::Tape t;
    CafmVals vals = cafm_lift(t, params, "cafm", false);
    return t.val(cafm_forward(t, t.input(f_ol), t.input(f_sd), vals, &params, mode));
}

}  // namespace dvx
