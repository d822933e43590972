// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "dvx/autodiff.hpp"

namespace dvx {

/// CBAM: channel attention (shared MLP over avg/max descriptors) followed by
/// spatial attention (7x7 conv over channel statistics).
struct CbamParams {
    Tensor mlp_w1;  // (1,1,C,C/r)
    Tensor mlp_b1;  // (1,1,1,C/r)
    Tensor mlp_w2;  // (1,1,C/r,C)
    Tensor mlp_b2;  // (1,1,1,C)
    Tensor conv7_w;  // (1,2,7,7)
    Tensor conv7_b;  // (1,1,1,1)
};

/// dwcsplayer: pointwise branch plus depthwise-separable branch, summed.
/// The depthwise stage runs over 2C channels; both branches emit C channels
/// so the merge is shape-valid.
struct DwcspParams {
    Tensor conv1_w;    // (C,2C,1,1)
    Tensor conv1_b;    // (1,C,1,1)
    Tensor dw_depth_w;  // (2C,1,3,3)
    Tensor dw_depth_b;  // (1,2C,1,1)
    Tensor dw_point_w;  // (C,2C,1,1)
    Tensor dw_point_b;  // (1,C,1,1)
};

struct CafmParams {
    CbamParams cbam_ol, cbam_sd;
    Tensor bn_gamma, bn_beta;  // (1,2C,1,1)
    BatchNormState bn_state;
    DwcspParams dwcsp;
    int channels = 0;
    int cbam_reduction = 16;
};

CafmParams cafm_init(int channels, int cbam_reduction, std::uint64_t seed);

struct CbamVals {
    ad::Value mlp_w1, mlp_b1, mlp_w2, mlp_b2, conv7_w, conv7_b;
};
struct DwcspVals {
    ad::Value conv1_w, conv1_b, dw_depth_w, dw_depth_b, dw_point_w, dw_point_b;
};
struct CafmVals {
    CbamVals cbam_ol, cbam_sd;
    ad::Value bn_gamma, bn_beta;
    DwcspVals dwcsp;
};

CafmVals cafm_lift(ad::Tape& t, const CafmParams& p, const std::string& prefix,
                   bool requires_grad = true);

ad::Value cbam_forward(ad::Tape& t, ad::Value f, const CbamVals& vals);
ad::Value dwcsplayer_forward(ad::Tape& t, ad::Value f_bn, const DwcspVals& vals);

/// CBAM per view, channel concat, BatchNorm, dwcsplayer, ReLU.
ad::Value cafm_forward(ad::Tape& t, ad::Value f_ol, ad::Value f_sd, const CafmVals& vals,
                       CafmParams* state, BnMode mode);

// ---- standalone (untaped) conveniences ---------------------------------------

Tensor cbam_forward(const Tensor& f, const CbamParams& params);
Tensor dwcsplayer_forward(const Tensor& f_bn, const DwcspParams& params);
Tensor cafm_forward(const Tensor& f_ol, const Tensor& f_sd, CafmParams& params,
                    BnMode mode = BnMode::Train);

}  // namespace dvx
