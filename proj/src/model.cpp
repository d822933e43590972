// SPDX-License-Identifier: Apache-2.0
#include "dvx/model.hpp"

#include <stdexcept>

#include "dvx/init.hpp"

namespace dvx {

void ModelConfig::validate() const {
    if (widths.size() != 4 || depths.size() != 4) {
        throw std::invalid_argument("config: exactly four stage widths and depths are required");
    }
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] < 4 || widths[i] % 4 != 0) {
            throw std::invalid_argument("config: stage widths must be >= 4 and divisible by 4");
        }
        if (widths[i] % heads != 0) {
            throw std::invalid_argument("config: stage widths must be divisible by heads");
        }
        if (depths[i] < 1) {
            throw std::invalid_argument("config: stage depths must be >= 1");
        }
    }
    if (input_h < 32 || input_w < 32) {
        throw std::invalid_argument("config: input size must be at least 32x32");
    }
    if (num_classes < 1) {
        throw std::invalid_argument("config: num_classes must be positive");
    }
    if (fdim_reduction < 1 || widths[0] / fdim_reduction < 1) {
        throw std::invalid_argument("config: fdim_reduction incompatible with stage-1 width");
    }
}

namespace {

ConvBnBlock make_block(int in_c, int out_c, int stride, std::mt19937_64& rng) {
    ConvBnBlock b;
    b.spec = ConvSpec{in_c, out_c, 3, 3, stride, stride, 1, 1, 1};
    b.conv_w = Tensor(out_c, in_c, 3, 3);
    fill_kaiming(b.conv_w, in_c * 9, rng);
    b.conv_b = Tensor(1, out_c, 1, 1, 0.0);
    b.bn_gamma = Tensor(1, out_c, 1, 1, 1.0);
    b.bn_beta = Tensor(1, out_c, 1, 1, 0.0);
    b.bn_state = {Tensor(1, out_c, 1, 1, 0.0), Tensor(1, out_c, 1, 1, 1.0)};
    return b;
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 stem_rng(substream(cfg.seed, 1));
    stem_ = make_block(cfg.in_channels, cfg.widths[0], 2, stem_rng);

    for (int s = 0; s < 4; ++s) {
        std::mt19937_64 rng(substream(cfg.seed, 100 + s));
        std::vector<ConvBnBlock> blocks;
        const int in_c = s == 0 ? cfg.widths[0] : cfg.widths[s - 1];
        blocks.push_back(make_block(in_c, cfg.widths[s], 2, rng));
        for (int d = 1; d < cfg.depths[s]; ++d) {
            blocks.push_back(make_block(cfg.widths[s], cfg.widths[s], 1, rng));
        }
        stages_.push_back(std::move(blocks));
    }

    if (cfg.use_fdim) {
        fdim_ = fdim_init(cfg.widths[0], cfg.fdim_reduction, substream(cfg.seed, 200));
        fdim_->cross_conditioning = cfg.fdim_cross_conditioning;
    }
    if (cfg.use_mscfe) {
        const int first = cfg.mscfe_after_stage1 ? 0 : 1;
        for (int s = first; s < 4; ++s) {
            mscfe_.emplace(s, mscfe_init(cfg.widths[s], cfg.heads, s == 3,
                                         substream(cfg.seed, 300 + s)));
        }
    }
    if (cfg.use_cafm) {
        cafm_ = cafm_init(cfg.widths[3], cfg.cbam_reduction, substream(cfg.seed, 400));
    }

    std::mt19937_64 head_rng(substream(cfg.seed, 500));
    const int c_last = cfg.widths[3];
    const int head_in = cfg.use_cafm ? c_last : 2 * c_last;
    head_conv_w_ = Tensor(c_last, head_in, 1, 1);
    fill_kaiming(head_conv_w_, head_in, head_rng);
    head_conv_b_ = Tensor(1, c_last, 1, 1, 0.0);
    fc_w_ = Tensor(1, 1, c_last, cfg.num_classes);
    fill_xavier(fc_w_, c_last, cfg.num_classes, head_rng);
    fc_b_ = Tensor(1, cfg.num_classes, 1, 1, 0.0);
}

void Model::for_each_param(
    const std::function<void(const std::string&, Tensor&, bool decay)>& fn) {
    auto block = [&](const std::string& prefix, ConvBnBlock& b) {
        fn(prefix + ".conv.w", b.conv_w, true);
        fn(prefix + ".conv.b", b.conv_b, false);
        fn(prefix + ".bn.gamma", b.bn_gamma, false);
        fn(prefix + ".bn.beta", b.bn_beta, false);
    };
    block("stem", stem_);
    for (int s = 0; s < 4; ++s) {
        for (std::size_t d = 0; d < stages_[s].size(); ++d) {
            block("stage" + std::to_string(s + 1) + ".block" + std::to_string(d), stages_[s][d]);
        }
    }
    if (fdim_) {
        auto branch = [&](const std::string& prefix, FdimBranch& br) {
            fn(prefix + ".fc1.w", br.w1, true);
            fn(prefix + ".fc1.b", br.b1, false);
            fn(prefix + ".fc2.w", br.w2, true);
            fn(prefix + ".fc2.b", br.b2, false);
        };
        branch("fdim.ol", fdim_->ol);
        branch("fdim.sd", fdim_->sd);
    }
    for (auto& [s, p] : mscfe_) {
        auto view = [&](const std::string& prefix, MscfeView& v) {
            fn(prefix + ".q.w", v.wq, true);
            fn(prefix + ".k.w", v.wk, true);
            fn(prefix + ".v.w", v.wv, true);
            fn(prefix + ".out.w", v.wo, true);
            fn(prefix + ".out.b", v.bo, false);
            fn(prefix + ".bn.gamma", v.bn_gamma, false);
            fn(prefix + ".bn.beta", v.bn_beta, false);
            fn(prefix + ".dw.depth.w", v.dw_depth_w, true);
            fn(prefix + ".dw.depth.b", v.dw_depth_b, false);
            fn(prefix + ".dw.point.w", v.dw_point_w, true);
            fn(prefix + ".dw.point.b", v.dw_point_b, false);
            fn(prefix + ".conv7.w", v.conv7_w, true);
            fn(prefix + ".conv7.b", v.conv7_b, false);
        };
        const std::string base = "mscfe" + std::to_string(s + 1);
        view(base + ".ol", p.ol);
        view(base + ".sd", p.sd);
    }
    if (cafm_) {
        auto cbam = [&](const std::string& prefix, CbamParams& cb) {
            fn(prefix + ".mlp.fc1.w", cb.mlp_w1, true);
            fn(prefix + ".mlp.fc1.b", cb.mlp_b1, false);
            fn(prefix + ".mlp.fc2.w", cb.mlp_w2, true);
            fn(prefix + ".mlp.fc2.b", cb.mlp_b2, false);
            fn(prefix + ".conv7.w", cb.conv7_w, true);
            fn(prefix + ".conv7.b", cb.conv7_b, false);
        };
        cbam("cafm.cbam.ol", cafm_->cbam_ol);
        cbam("cafm.cbam.sd", cafm_->cbam_sd);
        fn("cafm.bn.gamma", cafm_->bn_gamma, false);
        fn("cafm.bn.beta", cafm_->bn_beta, false);
        fn("cafm.dwcsp.conv1.w", cafm_->dwcsp.conv1_w, true);
        fn("cafm.dwcsp.conv1.b", cafm_->dwcsp.conv1_b, false);
        fn("cafm.dwcsp.dw.depth.w", cafm_->dwcsp.dw_depth_w, true);
        fn("cafm.dwcsp.dw.depth.b", cafm_->dwcsp.dw_depth_b, false);
        fn("cafm.dwcsp.dw.point.w", cafm_->dwcsp.dw_point_w, true);
        fn("cafm.dwcsp.dw.point.b", cafm_->dwcsp.dw_point_b, false);
    }
    fn("head.conv1.w", head_conv_w_, true);
    fn("head.conv1.b", head_conv_b_, false);
    fn("head.fc.w", fc_w_, true);
    fn("head.fc.b", fc_b_, false);
}

void Model::for_each_buffer(const std::function<void(const std::string&, Tensor&)>& fn) {
    auto block = [&](const std::string& prefix, ConvBnBlock& b) {
        fn(prefix + ".bn.running_mean", b.bn_state.running_mean);
        fn(prefix + ".bn.running_var", b.bn_state.running_var);
    };
    block("stem", stem_);
    for (int s = 0; s < 4; ++s) {
        for (std::size_t d = 0; d < stages_[s].size(); ++d) {
            block("stage" + std::to_string(s + 1) + ".block" + std::to_string(d), stages_[s][d]);
        }
    }
    for (auto& [s, p] : mscfe_) {
        const std::string base = "mscfe" + std::to_string(s + 1);
        fn(base + ".ol.bn.running_mean", p.ol.bn_state.running_mean);
        fn(base + ".ol.bn.running_var", p.ol.bn_state.running_var);
        fn(base + ".sd.bn.running_mean", p.sd.bn_state.running_mean);
        fn(base + ".sd.bn.running_var", p.sd.bn_state.running_var);
    }
    if (cafm_) {
        fn("cafm.bn.running_mean", cafm_->bn_state.running_mean);
        fn("cafm.bn.running_var", cafm_->bn_state.running_var);
    }
}

std::int64_t Model::param_count() {
    std::int64_t total = 0;
    for_each_param([&](const std::string&, Tensor& t, bool) { total += t.numel(); });
    return total;
}

ad::Value Model::run_block(ad::Tape& t, ad::Value x, ConvBnBlock& blk, const LiftedBlock& lifted,
                           BnMode mode) {
    ad::Value y = t.conv2d(x, lifted.w, lifted.b, blk.spec);
    y = t.batchnorm(y, lifted.gamma, lifted.beta, &blk.bn_state, mode);
    return t.relu(y);
}

ad::Value Model::forward_pair(ad::Tape& t, ad::Value ol, ad::Value sd, BnMode mode,
                              const std::map<std::string, Tensor>* overrides) {
    const Tensor& a = t.val(ol);
    const Tensor& b = t.val(sd);
    if (a.c() != cfg_.in_channels || b.c() != cfg_.in_channels) {
        throw std::invalid_argument("forward_pair: inputs must have " +
                                    std::to_string(cfg_.in_channels) + " channels");
    }
    if (a.h() != cfg_.input_h || a.w() != cfg_.input_w || b.h() != cfg_.input_h ||
        b.w() != cfg_.input_w) {
        throw std::invalid_argument("forward_pair: inputs must be " +
                                    std::to_string(cfg_.input_h) + "x" +
                                    std::to_string(cfg_.input_w));
    }

    auto lift = [&](const std::string& name, Tensor& value) {
        if (overrides != nullptr) {
            auto it = overrides->find(name);
            if (it != overrides->end()) return t.leaf(name, it->second, true);
        }
        return t.leaf(name, value, true);
    };
    auto lift_block = [&](const std::string& prefix, ConvBnBlock& blk) {
        return LiftedBlock{lift(prefix + ".conv.w", blk.conv_w), lift(prefix + ".conv.b", blk.conv_b),
                           lift(prefix + ".bn.gamma", blk.bn_gamma),
                           lift(prefix + ".bn.beta", blk.bn_beta)};
    };

    // one parameter set, applied to both views
    LiftedBlock stem = lift_block("stem", stem_);
    std::vector<std::vector<LiftedBlock>> stages;
    for (int s = 0; s < 4; ++s) {
        std::vector<LiftedBlock> blocks;
        for (std::size_t d = 0; d < stages_[s].size(); ++d) {
            blocks.push_back(lift_block(
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(d), stages_[s][d]));
        }
        stages.push_back(std::move(blocks));
    }

    ad::Value x = run_block(t, ol, stem_, stem, mode);
    ad::Value y = run_block(t, sd, stem_, stem, mode);
    for (std::size_t d = 0; d < stages_[0].size(); ++d) {
        x = run_block(t, x, stages_[0][d], stages[0][d], mode);
        y = run_block(t, y, stages_[0][d], stages[0][d], mode);
    }

    if (fdim_) {
        ad::Tape& tape = t;
        FdimVals fv;
        auto lift_branch = [&](const std::string& prefix, FdimBranch& br) {
            return FdimBranchVals{lift(prefix + ".fc1.w", br.w1), lift(prefix + ".fc1.b", br.b1),
                                  lift(prefix + ".fc2.w", br.w2), lift(prefix + ".fc2.b", br.b2)};
        };
        fv.ol = lift_branch("fdim.ol", fdim_->ol);
        fv.sd = lift_branch("fdim.sd", fdim_->sd);
        fv.cross_conditioning = fdim_->cross_conditioning;
        auto [xf, yf] = fdim_forward(tape, x, y, fv);
        x = xf;
        y = yf;
    }

    auto lift_mscfe = [&](int s, MscfeParams& p) {
        const std::string base = "mscfe" + std::to_string(s + 1);
        auto view = [&](const std::string& prefix, MscfeView& v) {
            MscfeViewVals o;
            o.wq = lift(prefix + ".q.w", v.wq);
            o.wk = lift(prefix + ".k.w", v.wk);
            o.wv = lift(prefix + ".v.w", v.wv);
            o.wo = lift(prefix + ".out.w", v.wo);
            o.bo = lift(prefix + ".out.b", v.bo);
            o.bn_gamma = lift(prefix + ".bn.gamma", v.bn_gamma);
            o.bn_beta = lift(prefix + ".bn.beta", v.bn_beta);
            o.dw_depth_w = lift(prefix + ".dw.depth.w", v.dw_depth_w);
            o.dw_depth_b = lift(prefix + ".dw.depth.b", v.dw_depth_b);
            o.dw_point_w = lift(prefix + ".dw.point.w", v.dw_point_w);
            o.dw_point_b = lift(prefix + ".dw.point.b", v.dw_point_b);
            o.conv7_w = lift(prefix + ".conv7.w", v.conv7_w);
            o.conv7_b = lift(prefix + ".conv7.b", v.conv7_b);
            return o;
        };
        MscfeVals vals;
        vals.ol = view(base + ".ol", p.ol);
        vals.sd = view(base + ".sd", p.sd);
        vals.heads = p.heads;
        vals.is_last_stage = p.is_last_stage;
        return vals;
    };

    // attention maps produced by stage k gate the next stage after its
    // stride-2 entry block, where resolutions line up
    std::optional<std::pair<ad::Value, ad::Value>> pending_maps;
    auto run_mscfe_if_enabled = [&](int s) {
        auto it = mscfe_.find(s);
        if (it == mscfe_.end()) return;
        MscfeVals vals = lift_mscfe(s, it->second);
        MscfeTapeOutput out = mscfe_forward(t, x, y, vals, &it->second, mode);
        x = out.ol;
        y = out.sd;
        if (out.map_ol) {
            pending_maps = std::make_pair(*out.map_ol, *out.map_sd);
        }
    };

    run_mscfe_if_enabled(0);

    for (int s = 1; s < 4; ++s) {
        x = run_block(t, x, stages_[s][0], stages[s][0], mode);
        y = run_block(t, y, stages_[s][0], stages[s][0], mode);
        // toggled-off runs gate with all-ones maps so every variant shares
        // one code path
        ad::Value gx, gy;
        if (pending_maps) {
            gx = pending_maps->first;
            gy = pending_maps->second;
            pending_maps.reset();
        } else {
            const Tensor& cur = t.val(x);
            Tensor ones(cur.n(), 1, cur.h(), cur.w(), 1.0);
            gx = t.constant(ones);
            gy = gx;
        }
        x = t.mul(x, gx);
        y = t.mul(y, gy);
        for (std::size_t d = 1; d < stages_[s].size(); ++d) {
            x = run_block(t, x, stages_[s][d], stages[s][d], mode);
            y = run_block(t, y, stages_[s][d], stages[s][d], mode);
        }
        run_mscfe_if_enabled(s);
    }

    ad::Value fused;
    const int c_last = cfg_.widths[3];
    if (cafm_) {
        if (t.val(x).h() != t.val(y).h() || t.val(x).w() != t.val(y).w()) {
            y = t.bilinear_resize(y, t.val(x).h(), t.val(x).w());
        }
        CafmVals cv;
        auto cbam = [&](const std::string& prefix, CbamParams& cb) {
            CbamVals v;
            v.mlp_w1 = lift(prefix + ".mlp.fc1.w", cb.mlp_w1);
            v.mlp_b1 = lift(prefix + ".mlp.fc1.b", cb.mlp_b1);
            v.mlp_w2 = lift(prefix + ".mlp.fc2.w", cb.mlp_w2);
            v.mlp_b2 = lift(prefix + ".mlp.fc2.b", cb.mlp_b2);
            v.conv7_w = lift(prefix + ".conv7.w", cb.conv7_w);
            v.conv7_b = lift(prefix + ".conv7.b", cb.conv7_b);
            return v;
        };
        cv.cbam_ol = cbam("cafm.cbam.ol", cafm_->cbam_ol);
        cv.cbam_sd = cbam("cafm.cbam.sd", cafm_->cbam_sd);
        cv.bn_gamma = lift("cafm.bn.gamma", cafm_->bn_gamma);
        cv.bn_beta = lift("cafm.bn.beta", cafm_->bn_beta);
        cv.dwcsp.conv1_w = lift("cafm.dwcsp.conv1.w", cafm_->dwcsp.conv1_w);
        cv.dwcsp.conv1_b = lift("cafm.dwcsp.conv1.b", cafm_->dwcsp.conv1_b);
        cv.dwcsp.dw_depth_w = lift("cafm.dwcsp.dw.depth.w", cafm_->dwcsp.dw_depth_w);
        cv.dwcsp.dw_depth_b = lift("cafm.dwcsp.dw.depth.b", cafm_->dwcsp.dw_depth_b);
        cv.dwcsp.dw_point_w = lift("cafm.dwcsp.dw.point.w", cafm_->dwcsp.dw_point_w);
        cv.dwcsp.dw_point_b = lift("cafm.dwcsp.dw.point.b", cafm_->dwcsp.dw_point_b);
        fused = cafm_forward(t, x, y, cv, &*cafm_, mode);
    } else {
        // dual baseline: shared backbone per view, channel concat, Conv1
        fused = t.concat_channels(x, y);
    }

    const int head_in = cafm_ ? c_last : 2 * c_last;
    ConvSpec head_spec{head_in, c_last, 1, 1, 1, 1, 0, 0, 1};
    ad::Value hconv_w = lift("head.conv1.w", head_conv_w_);
    ad::Value hconv_b = lift("head.conv1.b", head_conv_b_);
    ad::Value h = t.conv2d(fused, hconv_w, hconv_b, head_spec);
    ad::Value pooled = t.pool2d(h, {PoolOp::Avg, true});
    const int n = t.val(pooled).n();
    ad::Value row = t.reshape(pooled, n, 1, 1, c_last);
    ad::Value fcw = lift("head.fc.w", fc_w_);
    ad::Value fcb = lift("head.fc.b", fc_b_);
    ad::Value logits_row = t.matmul(row, fcw);
    ad::Value logits = t.reshape(logits_row, n, cfg_.num_classes, 1, 1);
    return t.add(logits, fcb);
}

Tensor Model::forward_pair(const Tensor& ol, const Tensor& sd, BnMode mode,
                           const std::map<std::string, Tensor>* overrides) {
    ad::Tape t;
    ad::Value out = forward_pair(t, t.input(ol), t.input(sd), mode, overrides);
    return t.val(out);
}

Model::Cost Model::count_params_flops() {
    Cost cost;
    cost.params = param_count();
    ad::Tape t;
    Tensor ol(1, cfg_.in_channels, cfg_.input_h, cfg_.input_w, 0.0);
    forward_pair(t, t.input(ol), t.input(ol), BnMode::Eval);
    cost.flops = t.flops();
    return cost;
}

}  // namespace dvx
