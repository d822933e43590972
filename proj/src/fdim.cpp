// SPDX-License-Identifier: Apache-2.0
#include "dvx/fdim.hpp"

#include <stdexcept>

#include "dvx/init.hpp"

namespace dvx {

namespace {

FdimBranch init_branch(int c, int r, std::mt19937_64& rng) {
    const int hidden = c / r;
    if (hidden < 1) {
        throw std::invalid_argument("fdim: channels/reduction must be >= 1");
    }
    FdimBranch b;
    b.w1 = Tensor(1, 1, c, hidden);
    b.b1 = Tensor(1, 1, 1, hidden, 0.0);
    b.w2 = Tensor(1, 1, hidden, c);
    b.b2 = Tensor(1, 1, 1, c, 0.0);
    fill_xavier(b.w1, c, hidden, rng);
    fill_xavier(b.w2, hidden, c, rng);
    return b;
}

}  // namespace

FdimParams fdim_init(int channels, int reduction, std::uint64_t seed) {
    std::mt19937_64 rng(substream(seed, 0xfd1));
    FdimParams p;
    p.channels = channels;
    p.reduction = reduction;
    p.ol = init_branch(channels, reduction, rng);
    p.sd = init_branch(channels, reduction, rng);
    return p;
}

FdimVals fdim_lift(ad::Tape& t, const FdimParams& p, const std::string& prefix,
                   bool requires_grad) {
    auto lift_branch = [&](const FdimBranch& b, const std::string& view) {
        FdimBranchVals v;
        v.w1 = t.leaf(prefix + "." + view + ".fc1.w", b.w1, requires_grad);
        v.b1 = t.leaf(prefix + "." + view + ".fc1.b", b.b1, requires_grad);
        v.w2 = t.leaf(prefix + "." + view + ".fc2.w", b.w2, requires_grad);
        v.b2 = t.leaf(prefix + "." + view + ".fc2.b", b.b2, requires_grad);
        return v;
    };
    FdimVals v;
    v.ol = lift_branch(p.ol, "ol");
    v.sd = lift_branch(p.sd, "sd");
    v.cross_conditioning = p.cross_conditioning;
    return v;
}

ad::Value fdim_filter_weights(ad::Tape& t, ad::Value features, const FdimBranchVals& branch) {
    const Tensor& f = t.val(features);
    const int n = f.n(), c = f.c();
    ad::Value pooled = t.pool2d(features, {PoolOp::Avg, true});
    ad::Value row = t.reshape(pooled, n, 1, 1, c);
    ad::Value hidden = t.relu(t.add(t.matmul(row, branch.w1), branch.b1));
    ad::Value logits = t.add(t.matmul(hidden, branch.w2), branch.b2);
    ad::Value weights = t.softmax_lastaxis(logits);
    return t.reshape(weights, n, c, 1, 1);
}

std::pair<ad::Value, ad::Value> fdim_forward(ad::Tape& t, ad::Value x, ad::Value y,
                                             const FdimVals& vals) {
    ad::Value wx = fdim_filter_weights(t, vals.cross_conditioning ? y : x, vals.ol);
    ad::Value wy = fdim_filter_weights(t, vals.cross_conditioning ? x : y, vals.sd);
    ad::Value xf = t.add(t.freq_filter(x, wx), x);
    ad::Value yf = t.add(t.freq_filter(y, wy), y);
    return {xf, yf};
}

Tensor fdim_filter_weights(const Tensor& features, const FdimBranch& branch) {
    ad::Tape t;
    FdimBranchVals v;
    v.w1 = t.input(branch.w1);
    v.b1 = t.input(branch.b1);
    v.w2 = t.input(branch.w2);
    v.b2 = t.input(branch.b2);
    return t.val(fdim_filter_weights(t, t.input(features), v));
}

FdimOutput fdim_forward(const Tensor& x, const Tensor& y, const FdimParams& params) {
    if (x.c() != params.channels || y.c() != params.channels) {
        throw std::invalid_argument("fdim_forward: channel axis must equal " +
                                    std::to_string(params.channels));
    }
    ad::Tape t;
    FdimVals vals = fdim_lift(t, params, "fdim", false);
    auto [xf, yf] = fdim_forward(t, t.input(x), t.input(y), vals);
    return {t.val(xf), t.val(yf), t.imag_residue()};
}

}  // namespace dvx
