// SPDX-License-Identifier: Apache-2.0
#include "dvx/mscfe.hpp"

#include <cmath>
#include <stdexcept>

#include "dvx/init.hpp"

namespace dvx {

Tensor positional_encoding_2d(int c, int h, int w) {
    if (c % 4 != 0) {
        throw std::invalid_argument("positional_encoding_2d: channels must be divisible by 4");
    }
    Tensor out(1, c, h, w, 0.0);
    const int half = c / 2;
    const int pairs = half / 2;
    for (int i = 0; i < pairs; ++i) {
        const double freq = std::pow(10000.0, -4.0 * i / c);
        for (int y = 0; y < h; ++y) {
            const double sv = std::sin(y * freq), cv = std::cos(y * freq);
            for (int x = 0; x < w; ++x) {
                out.at(0, 2 * i, y, x) = sv;
                out.at(0, 2 * i + 1, y, x) = cv;
            }
        }
        for (int x = 0; x < w; ++x) {
            const double sv = std::sin(x * freq), cv = std::cos(x * freq);
            for (int y = 0; y < h; ++y) {
                out.at(0, half + 2 * i, y, x) = sv;
                out.at(0, half + 2 * i + 1, y, x) = cv;
            }
        }
    }
    return out;
}

namespace {

MscfeView init_view(int c, std::mt19937_64& rng) {
    MscfeView v;
    v.wq = Tensor(1, 1, c, c);
    v.wk = Tensor(1, 1, c, c);
    v.wv = Tensor(1, 1, c, c);
    v.wo = Tensor(1, 1, c, c);
    v.bo = Tensor(1, c, 1, 1, 0.0);
    fill_xavier(v.wq, c, c, rng);
    fill_xavier(v.wk, c, c, rng);
    fill_xavier(v.wv, c, c, rng);
    fill_xavier(v.wo, c, c, rng);
    v.bn_gamma = Tensor(1, c, 1, 1, 1.0);
    v.bn_beta = Tensor(1, c, 1, 1, 0.0);
    v.bn_state = {Tensor(1, c, 1, 1, 0.0), Tensor(1, c, 1, 1, 1.0)};
    v.dw_depth_w = Tensor(c, 1, 3, 3);
    v.dw_depth_b = Tensor(1, c, 1, 1, 0.0);
    v.dw_point_w = Tensor(c, c, 1, 1);
    v.dw_point_b = Tensor(1, c, 1, 1, 0.0);
    fill_kaiming(v.dw_depth_w, 9, rng);
    fill_kaiming(v.dw_point_w, c, rng);
    v.conv7_w = Tensor(1, 2, 7, 7);
    v.conv7_b = Tensor(1, 1, 1, 1, 0.0);
    fill_kaiming(v.conv7_w, 2 * 49, rng);
    return v;
}

}  // namespace

MscfeParams mscfe_init(int channels, int heads, bool is_last_stage, std::uint64_t seed) {
    if (channels % heads != 0) {
        throw std::invalid_argument("mscfe: channels must be divisible by heads");
    }
    std::mt19937_64 rng(substream(seed, 0x35c));
    MscfeParams p;
    p.channels = channels;
    p.heads = heads;
    p.is_last_stage = is_last_stage;
    p.ol = init_view(channels, rng);
    p.sd = init_view(channels, rng);
    return p;
}

namespace {

MscfeViewVals lift_view(ad::Tape& t, const MscfeView& v, const std::string& prefix,
                        bool requires_grad) {
    MscfeViewVals o;
    o.wq = t.leaf(prefix + ".q.w", v.wq, requires_grad);
    o.wk = t.leaf(prefix + ".k.w", v.wk, requires_grad);
    o.wv = t.leaf(prefix + ".v.w", v.wv, requires_grad);
    o.wo = t.leaf(prefix + ".out.w", v.wo, requires_grad);
    o.bo = t.leaf(prefix + ".out.b", v.bo, requires_grad);
    o.bn_gamma = t.leaf(prefix + ".bn.gamma", v.bn_gamma, requires_grad);
    o.bn_beta = t.leaf(prefix + ".bn.beta", v.bn_beta, requires_grad);
    o.dw_depth_w = t.leaf(prefix + ".dw.depth.w", v.dw_depth_w, requires_grad);
    o.dw_depth_b = t.leaf(prefix + ".dw.depth.b", v.dw_depth_b, requires_grad);
    o.dw_point_w = t.leaf(prefix + ".dw.point.w", v.dw_point_w, requires_grad);
    o.dw_point_b = t.leaf(prefix + ".dw.point.b", v.dw_point_b, requires_grad);
    o.conv7_w = t.leaf(prefix + ".conv7.w", v.conv7_w, requires_grad);
    o.conv7_b = t.leaf(prefix + ".conv7.b", v.conv7_b, requires_grad);
    return o;
}

}  // namespace

MscfeVals mscfe_lift(ad::Tape& t, const MscfeParams& p, const std::string& prefix,
                     bool requires_grad) {
    MscfeVals v;
    v.ol = lift_view(t, p.ol, prefix + ".ol", requires_grad);
    v.sd = lift_view(t, p.sd, prefix + ".sd", requires_grad);
    v.heads = p.heads;
    v.is_last_stage = p.is_last_stage;
    return v;
}

ad::Value cross_attention(ad::Tape& t, ad::Value query_feats, ad::Value context_feats,
                          ad::Value wq, const MscfeViewVals& ctx_side, int heads) {
    const Tensor& qf = t.val(query_feats);
    const Tensor& cf = t.val(context_feats);
    if (qf.c() != cf.c()) {
        throw std::invalid_argument("cross_attention: views must share the channel count");
    }
    if (qf.c() != t.val(wq).h()) {
        throw std::invalid_argument("cross_attention: projection size does not match channels");
    }
    const int c = qf.c(), hq = qf.h(), wq_sp = qf.w();
    const int d = c / heads;

    ad::Value q_seq = t.to_sequence(query_feats);
    ad::Value c_seq = t.to_sequence(context_feats);
    ad::Value q = t.split_heads(t.matmul(q_seq, wq), heads);
    ad::Value k = t.split_heads(t.matmul(c_seq, ctx_side.wk), heads);
    ad::Value v = t.split_heads(t.matmul(c_seq, ctx_side.wv), heads);
    ad::Value scores = t.scale(t.matmul(q, k, false, true), 1.0 / std::sqrt(double(d)));
    ad::Value attn = t.softmax_lastaxis(scores);
    ad::Value ctx = t.merge_heads(t.matmul(attn, v));
    ad::Value projected = t.from_sequence(t.matmul(ctx, ctx_side.wo), hq, wq_sp);
    return t.add(projected, ctx_side.bo);
}

namespace {

ad::Value dwconv(ad::Tape& t, ad::Value x, const MscfeViewVals& v, int c) {
    ConvSpec depth{c, c, 3, 3, 1, 1, 1, 1, c};
    ConvSpec point{c, c, 1, 1, 1, 1, 0, 0, 1};
    ad::Value mid = t.conv2d(x, v.dw_depth_w, v.dw_depth_b, depth);
    return t.conv2d(mid, v.dw_point_w, v.dw_point_b, point);
}

ad::Value spatial_map(ad::Tape& t, ad::Value feats, const MscfeViewVals& v, bool downsample) {
    ad::Value cat = t.concat_channels(t.reduce_channels(feats, PoolOp::Max),
                                      t.reduce_channels(feats, PoolOp::Avg));
    ConvSpec conv7{2, 1, 7, 7, 1, 1, 3, 3, 1};
    ad::Value s = t.sigmoid(t.conv2d(cat, v.conv7_w, v.conv7_b, conv7));
    if (downsample) {
        s = t.pool2d(s, {PoolOp::Max, false}, 2, 2, 2, 2);
    }
    return s;
}

}  // namespace

MscfeTapeOutput mscfe_forward(ad::Tape& t, ad::Value f_ol, ad::Value f_sd, const MscfeVals& vals,
                              MscfeParams* state, BnMode mode) {
    const Tensor& ol = t.val(f_ol);
    const Tensor& sd = t.val(f_sd);
    if (ol.c() != sd.c()) {
        throw std::invalid_argument("mscfe_forward: views must share the channel count");
    }
    if (ol.h() != sd.h() || ol.w() != sd.w()) {
        throw std::invalid_argument(
            "mscfe_forward: the attention residual requires equal spatial sizes across views");
    }
    const int c = ol.c();
    ad::Value pe_ol = t.constant(positional_encoding_2d(c, ol.h(), ol.w()));
    ad::Value pe_sd = t.constant(positional_encoding_2d(c, sd.h(), sd.w()));
    ad::Value p_ol = t.add(f_ol, pe_ol);
    ad::Value p_sd = t.add(f_sd, pe_sd);

    // OL queries enhance the SD branch and vice versa
    ad::Value att_sd = cross_attention(t, p_ol, p_sd, vals.ol.wq, vals.sd, vals.heads);
    ad::Value att_ol = cross_attention(t, p_sd, p_ol, vals.sd.wq, vals.ol, vals.heads);

    BatchNormState* st_ol = state ? &state->ol.bn_state : nullptr;
    BatchNormState* st_sd = state ? &state->sd.bn_state : nullptr;
    ad::Value e_ol = t.add(t.batchnorm(att_ol, vals.ol.bn_gamma, vals.ol.bn_beta, st_ol, mode),
                           f_ol);
    ad::Value e_sd = t.add(t.batchnorm(att_sd, vals.sd.bn_gamma, vals.sd.bn_beta, st_sd, mode),
                           f_sd);

    MscfeTapeOutput out;
    out.ol = dwconv(t, e_ol, vals.ol, c);
    out.sd = dwconv(t, e_sd, vals.sd, c);
    if (!vals.is_last_stage) {
        out.map_ol = spatial_map(t, out.ol, vals.ol, /*downsample=*/true);
        out.map_sd = spatial_map(t, out.sd, vals.sd, /*downsample=*/true);
    }
    return out;
}

MscfeOutput mscfe_forward(const Tensor& f_ol, const Tensor& f_sd, MscfeParams& params,
                          BnMode mode) {
    ad::Tape t;
    MscfeVals vals = mscfe_lift(t, params, "mscfe", false);
    MscfeTapeOutput o = mscfe_forward(t, t.input(f_ol), t.input(f_sd), vals, &params, mode);
    MscfeOutput result;
    result.ol = t.val(o.ol);
    result.sd = t.val(o.sd);
    if (o.map_ol) {
        result.maps = AttentionMaps{t.val(*o.map_ol), t.val(*o.map_sd)};
    }
    return result;
}

}  // namespace dvx
