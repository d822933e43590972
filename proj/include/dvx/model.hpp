// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "dvx/autodiff.hpp"
#include "dvx/cafm.hpp"
#include "dvx/fdim.hpp"
#include "dvx/mscfe.hpp"

namespace dvx {

struct ModelConfig {
    std::vector<int> widths{16, 32, 64, 128};
    std::vector<int> depths{2, 2, 2, 2};
    int input_h = 64;
    int input_w = 64;
    int in_channels = 1;
    int num_classes = 15;
    int heads = 4;
    int fdim_reduction = 4;
    int cbam_reduction = 16;
    bool use_fdim = true;
    bool use_mscfe = true;
    bool use_cafm = true;
    bool fdim_cross_conditioning = false;
    bool mscfe_after_stage1 = false;
    std::uint64_t seed = 1;

    void validate() const;
};

/// conv-BN-ReLU unit; the entry block of each stage strides by 2.
struct ConvBnBlock {
    ConvSpec spec;
    Tensor conv_w, conv_b;
    Tensor bn_gamma, bn_beta;
    BatchNormState bn_state;
};

/// Shared-weight staged backbone with FDIM after stage 1, MSCFE between
/// stages, CAFM fusion and a Conv1 + pooled linear classification head.
class Model {
public:
    explicit Model(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    /// Builds the full dual-view graph on the tape and returns the logits
    /// node (N, num_classes, 1, 1). `overrides` substitutes parameter values
    /// by name (used for EMA evaluation) without touching the stored ones.
    ad::Value forward_pair(ad::Tape& t, ad::Value ol, ad::Value sd, BnMode mode,
                           const std::map<std::string, Tensor>* overrides = nullptr);

    /// Untaped convenience; Eval mode is deterministic and mutation-free.
    Tensor forward_pair(const Tensor& ol, const Tensor& sd, BnMode mode,
                        const std::map<std::string, Tensor>* overrides = nullptr);

    /// Visits every learnable parameter in checkpoint order. `decay` marks
    /// parameters subject to weight decay (conv/linear weights only).
    void for_each_param(const std::function<void(const std::string&, Tensor&, bool decay)>& fn);
    /// Visits non-learnable state (BatchNorm running statistics).
    void for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn);

    std::int64_t param_count();

    struct Cost {
        std::int64_t params = 0;
        std::uint64_t flops = 0;
    };
    /// Exact learnable scalar count plus FLOPs of one single-sample forward
    /// (2 x multiply-adds for conv/matmul/attention, element counts for
    /// normalization/activations).
    Cost count_params_flops();

private:
    struct LiftedBlock {
        ad::Value w, b, gamma, beta;
    };

    ad::Value run_block(ad::Tape& t, ad::Value x, ConvBnBlock& blk, const LiftedBlock& lifted,
                        BnMode mode);

    ModelConfig cfg_;
    ConvBnBlock stem_;
    std::vector<std::vector<ConvBnBlock>> stages_;
    std::optional<FdimParams> fdim_;
    std::map<int, MscfeParams> mscfe_;  // keyed by stage index (0-based)
    std::optional<CafmParams> cafm_;
    Tensor head_conv_w_, head_conv_b_;
    Tensor fc_w_, fc_b_;
};

}  // namespace dvx
