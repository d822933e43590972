// SPDX-License-Identifier: Apache-2.0
#include "dvx/gradsuite.hpp"

#include <cmath>
#include <memory>
#include <random>

#include "dvx/cafm.hpp"
#include "dvx/fdim.hpp"
#include "dvx/init.hpp"
#include "dvx/mscfe.hpp"

namespace dvx {

namespace {

using ad::GradCheckParam;
using ad::GraphFn;
using ad::Tape;
using ad::Value;

Tensor rand_t(std::mt19937_64& rng, int n, int c, int h, int w, double lo = -1.0,
              double hi = 1.0) {
    Tensor t(n, c, h, w);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

// keeps ReLU/max-style kinks at a safe distance from the FD step
Tensor rand_nudged(std::mt19937_64& rng, int n, int c, int h, int w) {
    Tensor t = rand_t(rng, n, c, h, w);
    for (double& v : t.data) {
        if (std::abs(v) < 1e-3) v = v < 0.0 ? v - 1e-3 : v + 1e-3;
    }
    return t;
}

struct Instance {
    std::vector<GradCheckParam> params;
    GraphFn fn;
};

using InstanceGen = Instance (*)(std::mt19937_64&, int);

Instance make_conv(std::mt19937_64& rng, int i) {
    Instance inst;
    ConvSpec spec;
    switch (i % 4) {
        case 0: spec = {2, 3, 3, 3, 1, 1, 1, 1, 1}; break;
        case 1: spec = {3, 2, 3, 3, 2, 2, 1, 1, 1}; break;          // strided
        case 2: spec = {4, 4, 3, 3, 1, 1, 1, 1, 4}; break;          // depthwise
        default: spec = {4, 6, 2, 2, 1, 1, 0, 0, 2}; break;         // grouped
    }
    const int n = 1 + (i % 2);
    inst.params.push_back({"x", rand_t(rng, n, spec.in_channels, 5, 4)});
    inst.params.push_back(
        {"w", rand_t(rng, spec.out_channels, spec.in_channels / spec.groups, spec.kh, spec.kw)});
    inst.params.push_back({"b", rand_t(rng, 1, spec.out_channels, 1, 1)});
    inst.fn = [spec](Tape& t, const std::vector<Value>& l) {
        return t.conv2d(l[0], l[1], l[2], spec);
    };
    return inst;
}

Instance make_pool(std::mt19937_64& rng, int i) {
    Instance inst;
    inst.params.push_back({"x", rand_nudged(rng, 1 + (i % 2), 2, 6, 6)});
    const PoolKind kind{i % 2 == 0 ? PoolOp::Max : PoolOp::Avg, (i / 2) % 2 == 1};
    inst.fn = [kind](Tape& t, const std::vector<Value>& l) {
        return t.pool2d(l[0], kind, 2, 2, 2, 2);
    };
    return inst;
}

Instance make_relu(std::mt19937_64& rng, int) {
    Instance inst;
    inst.params.push_back({"x", rand_nudged(rng, 2, 3, 4, 4)});
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.relu(l[0]); };
    return inst;
}

Instance make_sigmoid(std::mt19937_64& rng, int) {
    Instance inst;
    inst.params.push_back({"x", rand_t(rng, 2, 3, 3, 3, -3.0, 3.0)});
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.sigmoid(l[0]); };
    return inst;
}

Instance make_softmax_channels(std::mt19937_64& rng, int) {
    Instance inst;
    inst.params.push_back({"x", rand_t(rng, 2, 4, 3, 3, -2.0, 2.0)});
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.softmax_channels(l[0]); };
    return inst;
}

Instance make_softmax_last(std::mt19937_64& rng, int) {
    Instance inst;
    inst.params.push_back({"x", rand_t(rng, 1, 2, 4, 5, -2.0, 2.0)});
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.softmax_lastaxis(l[0]); };
    return inst;
}

Instance make_batchnorm(std::mt19937_64& rng, int i) {
    Instance inst;
    const int c = 3;
    inst.params.push_back({"x", rand_t(rng, 3, c, 4, 4)});
    inst.params.push_back({"gamma", rand_t(rng, 1, c, 1, 1, 0.5, 1.5)});
    inst.params.push_back({"beta", rand_t(rng, 1, c, 1, 1)});
    const BnMode mode = i % 3 == 0 ? BnMode::Eval : BnMode::Train;
    const Tensor rmean = rand_t(rng, 1, c, 1, 1);
    const Tensor rvar = rand_t(rng, 1, c, 1, 1, 0.5, 2.0);
    inst.fn = [mode, rmean, rvar](Tape& t, const std::vector<Value>& l) {
        BatchNormState st{rmean, rvar};
        return t.batchnorm(l[0], l[1], l[2], &st, mode);
    };
    return inst;
}

Instance make_matmul(std::mt19937_64& rng, int i) {
    Instance inst;
    const bool ta = (i / 2) % 2 == 1, tb = i % 2 == 1;
    const bool broadcast = (i / 4) % 2 == 1;
    const int R = 3, K = 4, S = 2;
    inst.params.push_back({"a", ta ? rand_t(rng, 2, 2, K, R) : rand_t(rng, 2, 2, R, K)});
    if (broadcast) {
        inst.params.push_back({"b", tb ? rand_t(rng, 1, 1, S, K) : rand_t(rng, 1, 1, K, S)});
    } else {
        inst.params.push_back({"b", tb ? rand_t(rng, 2, 2, S, K) : rand_t(rng, 2, 2, K, S)});
    }
    inst.fn = [ta, tb](Tape& t, const std::vector<Value>& l) {
        return t.matmul(l[0], l[1], ta, tb);
    };
    return inst;
}

Instance make_concat(std::mt19937_64& rng, int) {
    Instance inst;
    inst.params.push_back({"a", rand_t(rng, 2, 2, 3, 3)});
    inst.params.push_back({"b", rand_t(rng, 2, 3, 3, 3)});
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.concat_channels(l[0], l[1]); };
    return inst;
}

Instance make_add(std::mt19937_64& rng, int i) {
    Instance inst;
    inst.params.push_back({"a", rand_t(rng, 2, 3, 4, 4)});
    switch (i % 3) {
        case 0: inst.params.push_back({"b", rand_t(rng, 2, 3, 4, 4)}); break;
        case 1: inst.params.push_back({"b", rand_t(rng, 1, 3, 1, 1)}); break;
        default: inst.params.push_back({"b", rand_t(rng, 2, 1, 4, 4)}); break;
    }
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.add(l[0], l[1]); };
    return inst;
}

Instance make_mul(std::mt19937_64& rng, int i) {
    Instance inst;
    inst.params.push_back({"a", rand_t(rng, 2, 3, 4, 4)});
    switch (i % 3) {
        case 0: inst.params.push_back({"b", rand_t(rng, 2, 3, 4, 4)}); break;
        case 1: inst.params.push_back({"b", rand_t(rng, 2, 3, 1, 1)}); break;
        default: inst.params.push_back({"b", rand_t(rng, 1, 1, 4, 4)}); break;
    }
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.mul(l[0], l[1]); };
    return inst;
}

Instance make_scale(std::mt19937_64& rng, int i) {
    Instance inst;
    inst.params.push_back({"x", rand_t(rng, 1, 2, 3, 4)});
    const double alpha = 0.3 + 0.77 * (i % 5);
    inst.fn = [alpha](Tape& t, const std::vector<Value>& l) { return t.scale(l[0], alpha); };
    return inst;
}

Instance make_freq_filter(std::mt19937_64& rng, int i) {
    Instance inst;
    const int h = i % 2 == 0 ? 8 : 6, w = i % 3 == 0 ? 8 : 5;
    inst.params.push_back({"x", rand_t(rng, 1, 3, h, w)});
    inst.params.push_back({"w", rand_t(rng, 1, 3, 1, 1, 0.1, 1.5)});
    inst.fn = [](Tape& t, const std::vector<Value>& l) { return t.freq_filter(l[0], l[1]); };
    return inst;
}

Instance make_layout(std::mt19937_64& rng, int i) {
    Instance inst;
    inst.params.push_back({"x", rand_t(rng, 2, 4, 3, 2)});
    const int mode = i % 3;
    inst.fn = [mode](Tape& t, const std::vector<Value>& l) {
        if (mode == 0) {
            return t.from_sequence(t.to_sequence(l[0]), 3, 2);
        }
        if (mode == 1) {
            return t.merge_heads(t.split_heads(t.to_sequence(l[0]), 2));
        }
        return t.reshape(l[0], 2, 2, 6, 2);
    };
    return inst;
}

Instance make_reduce_channels(std::mt19937_64& rng, int i) {
    Instance inst;
    inst.params.push_back({"x", rand_nudged(rng, 2, 4, 3, 3)});
    const PoolOp op = i % 2 == 0 ? PoolOp::Max : PoolOp::Avg;
    inst.fn = [op](Tape& t, const std::vector<Value>& l) { return t.reduce_channels(l[0], op); };
    return inst;
}

Instance make_resize(std::mt19937_64& rng, int i) {
    Instance inst;
    inst.params.push_back({"x", rand_t(rng, 1, 2, 4, 5)});
    const int oh = i % 2 == 0 ? 7 : 3, ow = i % 3 == 0 ? 2 : 8;
    inst.fn = [oh, ow](Tape& t, const std::vector<Value>& l) {
        return t.bilinear_resize(l[0], oh, ow);
    };
    return inst;
}

Instance make_loss(std::mt19937_64& rng, int) {
    Instance inst;
    inst.params.push_back({"logits", rand_t(rng, 3, 4, 1, 1, -2.0, 2.0)});
    Tensor targets(3, 4, 1, 1);
    std::uniform_int_distribution<int> coin(0, 1);
    for (double& v : targets.data) v = coin(rng);
    inst.fn = [targets](Tape& t, const std::vector<Value>& l) {
        return t.multilabel_soft_margin_loss(l[0], targets);
    };
    return inst;
}

Instance make_fdim_block(std::mt19937_64& rng, int i) {
    Instance inst;
    const int c = 4, r = 2;
    FdimParams p = fdim_init(c, r, rng());
    inst.params.push_back({"x", rand_t(rng, 1, c, 6, 5)});
    inst.params.push_back({"y", rand_t(rng, 1, c, 6, 5)});
    inst.params.push_back({"ol.w1", p.ol.w1});
    inst.params.push_back({"ol.b1", p.ol.b1});
    inst.params.push_back({"ol.w2", p.ol.w2});
    inst.params.push_back({"ol.b2", p.ol.b2});
    inst.params.push_back({"sd.w1", p.sd.w1});
    inst.params.push_back({"sd.b1", p.sd.b1});
    inst.params.push_back({"sd.w2", p.sd.w2});
    inst.params.push_back({"sd.b2", p.sd.b2});
    const bool cross = i % 2 == 1;
    inst.fn = [cross](Tape& t, const std::vector<Value>& l) {
        FdimVals v;
        v.ol = {l[2], l[3], l[4], l[5]};
        v.sd = {l[6], l[7], l[8], l[9]};
        v.cross_conditioning = cross;
        auto [xf, yf] = fdim_forward(t, l[0], l[1], v);
        return t.concat_channels(xf, yf);
    };
    return inst;
}

Instance make_mscfe_block(std::mt19937_64& rng, int) {
    Instance inst;
    const int c = 4, heads = 2;
    MscfeParams p = mscfe_init(c, heads, false, rng());
    // Eval-mode BN with randomized running stats: in Train mode the attention
    // output bias is absorbed by batch normalization, so its true gradient is
    // structurally zero and the FD quotient is pure rounding noise. Train-mode
    // BN gradients are covered by the per-op batchnorm2d suite.
    for (MscfeView* v : {&p.ol, &p.sd}) {
        v->bn_state.running_mean = rand_t(rng, 1, c, 1, 1, -0.5, 0.5);
        v->bn_state.running_var = rand_t(rng, 1, c, 1, 1, 0.5, 2.0);
    }
    auto bn_state = std::make_shared<MscfeParams>(p);
    inst.params.push_back({"x", rand_t(rng, 1, c, 4, 4)});
    inst.params.push_back({"y", rand_t(rng, 1, c, 4, 4)});
    auto push_view = [&](const MscfeView& v, const std::string& pre) {
        inst.params.push_back({pre + ".q.w", v.wq});
        inst.params.push_back({pre + ".k.w", v.wk});
        inst.params.push_back({pre + ".v.w", v.wv});
        inst.params.push_back({pre + ".out.w", v.wo});
        inst.params.push_back({pre + ".out.b", v.bo});
        inst.params.push_back({pre + ".bn.gamma", v.bn_gamma});
        inst.params.push_back({pre + ".bn.beta", v.bn_beta});
        inst.params.push_back({pre + ".dw.depth.w", v.dw_depth_w});
        inst.params.push_back({pre + ".dw.depth.b", v.dw_depth_b});
        inst.params.push_back({pre + ".dw.point.w", v.dw_point_w});
        inst.params.push_back({pre + ".dw.point.b", v.dw_point_b});
        inst.params.push_back({pre + ".conv7.w", v.conv7_w});
        inst.params.push_back({pre + ".conv7.b", v.conv7_b});
    };
    push_view(p.ol, "ol");
    push_view(p.sd, "sd");
    inst.fn = [heads, bn_state](Tape& t, const std::vector<Value>& l) {
        auto view = [&](int base) {
            MscfeViewVals v;
            v.wq = l[base];
            v.wk = l[base + 1];
            v.wv = l[base + 2];
            v.wo = l[base + 3];
            v.bo = l[base + 4];
            v.bn_gamma = l[base + 5];
            v.bn_beta = l[base + 6];
            v.dw_depth_w = l[base + 7];
            v.dw_depth_b = l[base + 8];
            v.dw_point_w = l[base + 9];
            v.dw_point_b = l[base + 10];
            v.conv7_w = l[base + 11];
            v.conv7_b = l[base + 12];
            return v;
        };
        MscfeVals vals;
        vals.ol = view(2);
        vals.sd = view(15);
        vals.heads = heads;
        vals.is_last_stage = false;
        auto out = mscfe_forward(t, l[0], l[1], vals, bn_state.get(), BnMode::Eval);
        ad::Value feats = t.concat_channels(out.ol, out.sd);
        // fold upsampled maps into the objective so their path is checked too
        ad::Value m1 = t.bilinear_resize(*out.map_ol, 4, 4);
        ad::Value m2 = t.bilinear_resize(*out.map_sd, 4, 4);
        return t.concat_channels(feats, t.concat_channels(m1, m2));
    };
    return inst;
}

Instance make_cafm_block(std::mt19937_64& rng, int) {
    Instance inst;
    const int c = 4;
    CafmParams p = cafm_init(c, 4, rng());
    inst.params.push_back({"x", rand_t(rng, 1, c, 3, 3)});
    inst.params.push_back({"y", rand_t(rng, 1, c, 3, 3)});
    auto push_cbam = [&](const CbamParams& cb, const std::string& pre) {
        inst.params.push_back({pre + ".mlp.fc1.w", cb.mlp_w1});
        inst.params.push_back({pre + ".mlp.fc1.b", cb.mlp_b1});
        inst.params.push_back({pre + ".mlp.fc2.w", cb.mlp_w2});
        inst.params.push_back({pre + ".mlp.fc2.b", cb.mlp_b2});
        inst.params.push_back({pre + ".conv7.w", cb.conv7_w});
        inst.params.push_back({pre + ".conv7.b", cb.conv7_b});
    };
    push_cbam(p.cbam_ol, "cbam.ol");
    push_cbam(p.cbam_sd, "cbam.sd");
    inst.params.push_back({"bn.gamma", p.bn_gamma});
    inst.params.push_back({"bn.beta", p.bn_beta});
    inst.params.push_back({"dwcsp.conv1.w", p.dwcsp.conv1_w});
    inst.params.push_back({"dwcsp.conv1.b", p.dwcsp.conv1_b});
    inst.params.push_back({"dwcsp.dw.depth.w", p.dwcsp.dw_depth_w});
    inst.params.push_back({"dwcsp.dw.depth.b", p.dwcsp.dw_depth_b});
    inst.params.push_back({"dwcsp.dw.point.w", p.dwcsp.dw_point_w});
    inst.params.push_back({"dwcsp.dw.point.b", p.dwcsp.dw_point_b});
    inst.fn = [](Tape& t, const std::vector<Value>& l) {
        auto cbam = [&](int base) {
            CbamVals v;
            v.mlp_w1 = l[base];
            v.mlp_b1 = l[base + 1];
            v.mlp_w2 = l[base + 2];
            v.mlp_b2 = l[base + 3];
            v.conv7_w = l[base + 4];
            v.conv7_b = l[base + 5];
            return v;
        };
        CafmVals vals;
        vals.cbam_ol = cbam(2);
        vals.cbam_sd = cbam(8);
        vals.bn_gamma = l[14];
        vals.bn_beta = l[15];
        vals.dwcsp = {l[16], l[17], l[18], l[19], l[20], l[21]};
        return cafm_forward(t, l[0], l[1], vals, nullptr, BnMode::Train);
    };
    return inst;
}

OpGradReport run_many(const char* name, InstanceGen gen, int instances, double h, double tol,
                      std::uint64_t seed) {
    OpGradReport report;
    report.op = name;
    for (int i = 0; i < instances; ++i) {
        std::mt19937_64 rng(substream(seed, static_cast<std::uint64_t>(i) * 977 + 7));
        Instance inst = gen(rng, i);
        auto r = ad::grad_check(inst.fn, inst.params, h, tol, substream(seed, i + 5000));
        report.max_rel_err = std::max(report.max_rel_err, r.max_rel_err);
        report.pass = report.pass && r.pass;
        ++report.instances;
    }
    return report;
}

}  // namespace

std::vector<OpGradReport> run_gradient_suite(int instances, double h, double primitive_tol,
                                             double block_tol, std::uint64_t seed) {
    std::vector<OpGradReport> reports;
    const struct {
        const char* name;
        InstanceGen gen;
    } ops[] = {
        {"conv2d", make_conv},
        {"pool2d", make_pool},
        {"relu", make_relu},
        {"sigmoid", make_sigmoid},
        {"softmax_channels", make_softmax_channels},
        {"softmax_lastaxis", make_softmax_last},
        {"batchnorm2d", make_batchnorm},
        {"matmul", make_matmul},
        {"concat_channels", make_concat},
        {"add", make_add},
        {"mul", make_mul},
        {"scale", make_scale},
        {"freq_filter", make_freq_filter},
        {"layout", make_layout},
        {"reduce_channels", make_reduce_channels},
        {"bilinear_resize", make_resize},
        {"soft_margin_loss", make_loss},
    };
    std::uint64_t salt = 1;
    for (const auto& op : ops) {
        reports.push_back(run_many(op.name, op.gen, instances, h, primitive_tol,
                                   substream(seed, salt++)));
    }
    const int block_instances = std::max(3, instances / 5);
    reports.push_back(run_many("fdim_block", make_fdim_block, block_instances, h, block_tol,
                               substream(seed, salt++)));
    reports.push_back(run_many("mscfe_block", make_mscfe_block, block_instances, h, block_tol,
                               substream(seed, salt++)));
    reports.push_back(run_many("cafm_block", make_cafm_block, block_instances, h, block_tol,
                               substream(seed, salt++)));
    return reports;
}

bool gradient_suite_passed(const std::vector<OpGradReport>& reports) {
    for (const auto& r : reports) {
        if (!r.pass) return false;
    }
    return true;
}

}  // namespace dvx
