// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "dvx/autodiff.hpp"

namespace dvx {

/// 2D sinusoidal positional embedding: first C/2 channels encode the row
/// index, the rest the column index, sin/cos interleaved at geometric
/// frequencies 10000^(-4i/C). Requires C divisible by 4.
Tensor positional_encoding_2d(int c, int h, int w);

/// Parameters owned by one view branch of the cross-view enhancement block.
/// The key/value/output projections of a view are the ones applied when that
/// view acts as the attention context (its branch receives the output).
struct MscfeView {
    Tensor wq, wk, wv;  // (1,1,C,C), no bias
    Tensor wo, bo;      // (1,1,C,C), bias (1,C,1,1) applied after reshaping back
    Tensor bn_gamma, bn_beta;  // (1,C,1,1)
    BatchNormState bn_state;
    Tensor dw_depth_w, dw_depth_b;  // depthwise 3x3: (C,1,3,3), (1,C,1,1)
    Tensor dw_point_w, dw_point_b;  // pointwise: (C,C,1,1), (1,C,1,1)
    Tensor conv7_w, conv7_b;        // spatial attention 7x7: (1,2,7,7), (1,1,1,1)
};

struct MscfeParams {
    MscfeView ol;
    MscfeView sd;
    int channels = 0;
    int heads = 4;
    bool is_last_stage = false;
};

MscfeParams mscfe_init(int channels, int heads, bool is_last_stage, std::uint64_t seed);

struct MscfeViewVals {
    ad::Value wq, wk, wv, wo, bo;
    ad::Value bn_gamma, bn_beta;
    ad::Value dw_depth_w, dw_depth_b, dw_point_w, dw_point_b;
    ad::Value conv7_w, conv7_b;
};

struct MscfeVals {
    MscfeViewVals ol, sd;
    int heads = 4;
    bool is_last_stage = false;
};

MscfeVals mscfe_lift(ad::Tape& t, const MscfeParams& p, const std::string& prefix,
                     bool requires_grad = true);

/// Multi-head scaled dot-product attention (scale 1/sqrt(C/h)). The query and
/// context may have different spatial sizes; the output takes the query's.
/// Projections: wq on the query side; wk/wv/wo+bo from `ctx_side`.
ad::Value cross_attention(ad::Tape& t, ad::Value query_feats, ad::Value context_feats,
                          ad::Value wq, const MscfeViewVals& ctx_side, int heads);

struct MscfeTapeOutput {
    ad::Value ol, sd;
    std::optional<ad::Value> map_ol, map_sd;
};

/// Full block in the order: positional encoding, bidirectional cross
/// attention, BatchNorm + residual, depthwise-separable refinement, and (when
/// not the last stage) pooled 7x7 spatial attention maps downsampled to the
/// next stage's resolution.
MscfeTapeOutput mscfe_forward(ad::Tape& t, ad::Value f_ol, ad::Value f_sd, const MscfeVals& vals,
                              MscfeParams* state, BnMode mode);

// ---- standalone (untaped) convenience ----------------------------------------

struct AttentionMaps {
    Tensor s_ol;  // (N,1,H',W'), values in (0,1)
    Tensor s_sd;
};

struct MscfeOutput {
    Tensor ol, sd;
    std::optional<AttentionMaps> maps;
};

MscfeOutput mscfe_forward(const Tensor& f_ol, const Tensor& f_sd, MscfeParams& params,
                          BnMode mode = BnMode::Train);

}  // namespace dvx
