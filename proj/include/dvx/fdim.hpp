// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "dvx/autodiff.hpp"

namespace dvx {

/// One branch of the frequency-domain interaction block: the MLP that turns a
/// pooled channel descriptor into softmax filter weights.
struct FdimBranch {
    Tensor w1;  // (1,1,C,C/r)
    Tensor b1;  // (1,1,1,C/r)
    Tensor w2;  // (1,1,C/r,C)
    Tensor b2;  // (1,1,1,C)
};

struct FdimParams {
    FdimBranch ol;
    FdimBranch sd;
    int channels = 0;
    int reduction = 4;
    /// Swaps the pooled descriptors between branches (weights for the OL
    /// filter computed from the SD features and vice versa). Off by default.
    bool cross_conditioning = false;
};

FdimParams fdim_init(int channels, int reduction, std::uint64_t seed);

struct FdimBranchVals {
    ad::Value w1, b1, w2, b2;
};
struct FdimVals {
    FdimBranchVals ol, sd;
    bool cross_conditioning = false;
};

/// Registers the block's parameters as named tape leaves.
FdimVals fdim_lift(ad::Tape& t, const FdimParams& p, const std::string& prefix,
                   bool requires_grad = true);

/// Softmax(MLP(global average pool)) -> per-sample (N,C,1,1) filter weights.
ad::Value fdim_filter_weights(ad::Tape& t, ad::Value features, const FdimBranchVals& branch);

/// Full block: per-view spectral filtering plus residual merge. Returns the
/// filtered (x', y') pair; spapes are preserved.
std::pair<ad::Value, ad::Value> fdim_forward(ad::Tape& t, ad::Value x, ad::Value y,
                                             const FdimVals& vals);

// ---- standalone (untaped) conveniences --------------------------------------

Tensor fdim_filter_weights(const Tensor& features, const FdimBranch& branch);

struct FdimOutput {
    Tensor x;
    Tensor y;
    double imag_residue = 0.0;
};

FdimOutput fdim_forward(const Tensor& x, const Tensor& y, const FdimParams& params);

}  // namespace dvx
