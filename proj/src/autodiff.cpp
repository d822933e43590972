// SPDX-License-Identifier: Apache-2.0
#include "dvx/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dvx::ad {

namespace {

// Adjoint of the forward convolution with respect to its input.
Tensor conv2d_backward_input(const Tensor& gout, const Tensor& weights, const ConvSpec& spec,
                             int in_h, int in_w) {
    const int cig = spec.in_channels / spec.groups;
    const int cog = spec.out_channels / spec.groups;
    Tensor gin(gout.n(), spec.in_channels, in_h, in_w, 0.0);
    const int OH = gout.h(), OW = gout.w();
    for (int n = 0; n < gout.n(); ++n) {
        for (int g = 0; g < spec.groups; ++g) {
            for (int oc = 0; oc < cog; ++oc) {
                const int co = g * cog + oc;
                const double* gp = &gout.at(n, co, 0, 0);
                for (int ic = 0; ic < cig; ++ic) {
                    const int ci = g * cig + ic;
                    double* ip = &gin.at(n, ci, 0, 0);
                    const double* wrow = &weights.at(co, ic, 0, 0);
                    for (int kh = 0; kh < spec.kh; ++kh) {
                        for (int kw = 0; kw < spec.kw; ++kw) {
                            const double wv = wrow[kh * spec.kw + kw];
                            if (wv == 0.0) continue;
                            for (int oh = 0; oh < OH; ++oh) {
                                const int ih = oh * spec.sh - spec.ph + kh;
                                if (ih < 0 || ih >= in_h) continue;
                                double* irow = ip + static_cast<std::size_t>(ih) * in_w;
                                const double* grow = gp + static_cast<std::size_t>(oh) * OW;
                                for (int ow = 0; ow < OW; ++ow) {
                                    const int iw = ow * spec.sw - spec.pw + kw;
                                    if (iw < 0 || iw >= in_w) continue;
                                    irow[iw] += wv * grow[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return gin;
}

Tensor conv2d_backward_weights(const Tensor& input, const Tensor& gout, const ConvSpec& spec) {
    const int cig = spec.in_channels / spec.groups;
    const int cog = spec.out_channels / spec.groups;
    Tensor gw(spec.out_channels, cig, spec.kh, spec.kw, 0.0);
    const int H = input.h(), W = input.w();
    const int OH = gout.h(), OW = gout.w();
    for (int n = 0; n < input.n(); ++n) {
        for (int g = 0; g < spec.groups; ++g) {
            for (int oc = 0; oc < cog; ++oc) {
                const int co = g * cog + oc;
                const double* gp = &gout.at(n, co, 0, 0);
                for (int ic = 0; ic < cig; ++ic) {
                    const int ci = g * cig + ic;
                    const double* ip = &input.at(n, ci, 0, 0);
                    for (int kh = 0; kh < spec.kh; ++kh) {
                        for (int kw = 0; kw < spec.kw; ++kw) {
                            double acc = 0.0;
                            for (int oh = 0; oh < OH; ++oh) {
                                const int ih = oh * spec.sh - spec.ph + kh;
                                if (ih < 0 || ih >= H) continue;
                                const double* irow = ip + static_cast<std::size_t>(ih) * W;
                                const double* grow = gp + static_cast<std::size_t>(oh) * OW;
                                for (int ow = 0; ow < OW; ++ow) {
                                    const int iw = ow * spec.sw - spec.pw + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += irow[iw] * grow[ow];
                                }
                            }
                            gw.at(co, ic, kh, kw) += acc;
                        }
                    }
                }
            }
        }
    }
    return gw;
}

// Sum g over axes where the broadcast operand had extent 1.
Tensor reduce_to_broadcast_shape(const Tensor& g, const std::array<int, 4>& bshape) {
    Tensor out(bshape[0], bshape[1], bshape[2], bshape[3], 0.0);
    for (int n = 0; n < g.n(); ++n) {
        const int bn = bshape[0] == 1 ? 0 : n;
        for (int c = 0; c < g.c(); ++c) {
            const int bc = bshape[1] == 1 ? 0 : c;
            for (int h = 0; h < g.h(); ++h) {
                const int bh = bshape[2] == 1 ? 0 : h;
                for (int w = 0; w < g.w(); ++w) {
                    const int bw = bshape[3] == 1 ? 0 : w;
                    out.at(bn, bc, bh, bw) += g.at(n, c, h, w);
                }
            }
        }
    }
    return out;
}

Tensor elementwise_add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

std::uint64_t ceil_log2(std::uint64_t n) {
    std::uint64_t l = 0;
    while ((1ull << l) < n) ++l;
    return l;
}

}  // namespace

Value Tape::push(Tensor value, std::initializer_list<Value> parents,
                 std::function<void(Tape&, const Tensor&)> bw) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = any_needs_grad(parents);
    if (node.needs_grad) node.backward = std::move(bw);
    nodes_.push_back(std::move(node));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_needs_grad(std::initializer_list<Value> vs) const {
    for (Value v : vs) {
        if (v.valid() && nodes_[v.id].needs_grad) return true;
    }
    return false;
}

void Tape::accum(Value v, const Tensor& g) {
    if (!v.valid() || !nodes_[v.id].needs_grad) return;
    auto& slot = grads_[v.id];
    if (!slot.has_value()) {
        slot = g;
    } else {
        if (!slot->same_shape(g)) {
            throw std::runtime_error("backward: gradient shape mismatch at node accumulate");
        }
        *slot = elementwise_add(*slot, g);
    }
}

Value Tape::leaf(const std::string& name, const Tensor& v, bool requires_grad) {
    Node node;
    node.value = v;
    node.name = name;
    node.requires_grad = requires_grad;
    node.needs_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::conv2d(Value x, Value w, std::optional<Value> bias, const ConvSpec& spec) {
    std::vector<double> bvec;
    if (bias) {
        const Tensor& bt = val(*bias);
        if (bt.c() != spec.out_channels || bt.n() != 1 || bt.h() != 1 || bt.w() != 1) {
            throw std::invalid_argument("conv2d: bias must be (1,out_channels,1,1)");
        }
        bvec.assign(bt.data.begin(), bt.data.end());
    }
    Tensor out = dvx::conv2d(val(x), val(w), bvec, spec);
    flops_ += 2ull * out.n() * out.c() * out.h() * out.w() * (spec.in_channels / spec.groups) *
                  spec.kh * spec.kw +
              (bias ? static_cast<std::uint64_t>(out.numel()) : 0ull);
    const int in_h = val(x).h(), in_w = val(x).w();
    Value b = bias.value_or(Value{});
    return push(std::move(out), {x, w, b}, [x, w, b, spec, in_h, in_w](Tape& t, const Tensor& g) {
        t.accum(x, conv2d_backward_input(g, t.val(w), spec, in_h, in_w));
        t.accum(w, conv2d_backward_weights(t.val(x), g, spec));
        if (b.valid()) {
            t.accum(b, reduce_to_broadcast_shape(g, {1, g.c(), 1, 1}));
        }
    });
}

Value Tape::pool2d(Value x, PoolKind kind, int kh, int kw, int sh, int sw) {
    Tensor out = dvx::pool2d(val(x), kind, kh, kw, sh, sw);
    if (kind.global) {
        kh = val(x).h();
        kw = val(x).w();
        sh = sw = 1;
    }
    flops_ += static_cast<std::uint64_t>(out.numel()) * kh * kw;
    return push(std::move(out), {x}, [x, kind, kh, kw, sh, sw](Tape& t, const Tensor& g) {
        const Tensor& in = t.val(x);
        Tensor gin(in.n(), in.c(), in.h(), in.w(), 0.0);
        const double inv = 1.0 / (static_cast<double>(kh) * kw);
        for (int n = 0; n < g.n(); ++n) {
            for (int c = 0; c < g.c(); ++c) {
                for (int oh = 0; oh < g.h(); ++oh) {
                    for (int ow = 0; ow < g.w(); ++ow) {
                        const int h0 = oh * sh, w0 = ow * sw;
                        if (kind.op == PoolOp::Max) {
                            // ties broken by first position in row-major order
                            int bh = h0, bw = w0;
                            double best = in.at(n, c, h0, w0);
                            for (int i = 0; i < kh; ++i) {
                                for (int j = 0; j < kw; ++j) {
                                    const double v = in.at(n, c, h0 + i, w0 + j);
                                    if (v > best) {
                                        best = v;
                                        bh = h0 + i;
                                        bw = w0 + j;
                                    }
                                }
                            }
                            gin.at(n, c, bh, bw) += g.at(n, c, oh, ow);
                        } else {
                            const double share = g.at(n, c, oh, ow) * inv;
                            for (int i = 0; i < kh; ++i) {
                                for (int j = 0; j < kw; ++j) {
                                    gin.at(n, c, h0 + i, w0 + j) += share;
                                }
                            }
                        }
                    }
                }
            }
        }
        t.accum(x, gin);
    });
}

Value Tape::relu(Value x) {
    Tensor out = activation(val(x), Activation::ReLU);
    flops_ += out.numel();
    return push(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        const Tensor& in = t.val(x);
        Tensor gin = g;
        for (std::size_t i = 0; i < gin.data.size(); ++i) {
            if (in.data[i] <= 0.0) gin.data[i] = 0.0;  // ReLU'(0) = 0
        }
        t.accum(x, gin);
    });
}

Value Tape::sigmoid(Value x) {
    Tensor out = activation(val(x), Activation::Sigmoid);
    flops_ += out.numel();
    Value self{static_cast<int>(nodes_.size())};
    return push(std::move(out), {x}, [x, self](Tape& t, const Tensor& g) {
        const Tensor& s = t.val(self);
        Tensor gin = g;
        for (std::size_t i = 0; i < gin.data.size(); ++i) {
            gin.data[i] *= s.data[i] * (1.0 - s.data[i]);
        }
        t.accum(x, gin);
    });
}

namespace {

// dL/dz_i = s_i * (g_i - sum_j g_j s_j) along the softmax axis.
Tensor softmax_backward_channels(const Tensor& s, const Tensor& g) {
    Tensor gin = g;
    const int N = s.n(), C = s.c(), H = s.h(), W = s.w();
    for (int n = 0; n < N; ++n) {
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += g.at(n, c, h, w) * s.at(n, c, h, w);
                for (int c = 0; c < C; ++c) {
                    gin.at(n, c, h, w) = s.at(n, c, h, w) * (g.at(n, c, h, w) - dot);
                }
            }
        }
    }
    return gin;
}

Tensor softmax_backward_lastaxis(const Tensor& s, const Tensor& g) {
    Tensor gin = g;
    const std::int64_t rows = s.numel() / s.w();
    const int W = s.w();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* sp = &s.data[r * W];
        const double* gp = &g.data[r * W];
        double dot = 0.0;
        for (int j = 0; j < W; ++j) dot += gp[j] * sp[j];
        double* out = &gin.data[r * W];
        for (int j = 0; j < W; ++j) out[j] = sp[j] * (gp[j] - dot);
    }
    return gin;
}

}  // namespace

Value Tape::softmax_channels(Value x) {
    Tensor out = activation(val(x), Activation::SoftmaxOverChannels);
    flops_ += out.numel();
    Value self{static_cast<int>(nodes_.size())};
    return push(std::move(out), {x}, [x, self](Tape& t, const Tensor& g) {
        t.accum(x, softmax_backward_channels(t.val(self), g));
    });
}

Value Tape::softmax_lastaxis(Value x) {
    Tensor out = dvx::softmax_lastaxis(val(x));
    flops_ += out.numel();
    Value self{static_cast<int>(nodes_.size())};
    return push(std::move(out), {x}, [x, self](Tape& t, const Tensor& g) {
        t.accum(x, softmax_backward_lastaxis(t.val(self), g));
    });
}

Value Tape::batchnorm(Value x, Value gamma, Value beta, BatchNormState* state, BnMode mode,
                      double momentum, double eps) {
    const Tensor& in = val(x);
    const int C = in.c();
    // cache per-channel statistics used by normalization before the running
    // stats are updated
    std::vector<double> mean(C), invstd(C);
    if (mode == BnMode::Train) {
        const std::int64_t M = static_cast<std::int64_t>(in.n()) * in.h() * in.w();
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < in.n(); ++n)
                for (int h = 0; h < in.h(); ++h)
                    for (int w = 0; w < in.w(); ++w) s += in.at(n, c, h, w);
            mean[c] = s / static_cast<double>(M);
            double v = 0.0;
            for (int n = 0; n < in.n(); ++n)
                for (int h = 0; h < in.h(); ++h)
                    for (int w = 0; w < in.w(); ++w) {
                        const double d = in.at(n, c, h, w) - mean[c];
                        v += d * d;
                    }
            invstd[c] = 1.0 / std::sqrt(v / static_cast<double>(M) + eps);
        }
    } else {
        if (state == nullptr) {
            throw std::invalid_argument("batchnorm: Eval mode requires running stats");
        }
        for (int c = 0; c < C; ++c) {
            mean[c] = state->running_mean.data[c];
            invstd[c] = 1.0 / std::sqrt(state->running_var.data[c] + eps);
        }
    }
    Tensor out = batchnorm2d(in, val(gamma), val(beta), state, mode, momentum, eps);
    flops_ += out.numel();
    return push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, mode, mean, invstd](Tape& t, const Tensor& g) {
                    const Tensor& in = t.val(x);
                    const Tensor& gm = t.val(gamma);
                    const int N = in.n(), C = in.c(), H = in.h(), W = in.w();
                    const double M = static_cast<double>(N) * H * W;
                    Tensor gx(N, C, H, W, 0.0);
                    Tensor ggamma(1, C, 1, 1, 0.0), gbeta(1, C, 1, 1, 0.0);
                    for (int c = 0; c < C; ++c) {
                        double s1 = 0.0, s2 = 0.0;
                        for (int n = 0; n < N; ++n)
                            for (int h = 0; h < H; ++h)
                                for (int w = 0; w < W; ++w) {
                                    const double gv = g.at(n, c, h, w);
                                    const double xh = (in.at(n, c, h, w) - mean[c]) * invstd[c];
                                    s1 += gv;
                                    s2 += gv * xh;
                                }
                        ggamma.data[c] = s2;
                        gbeta.data[c] = s1;
                        const double k = gm.data[c] * invstd[c];
                        if (mode == BnMode::Train) {
                            // batch statistics are functions of the input
                            for (int n = 0; n < N; ++n)
                                for (int h = 0; h < H; ++h)
                                    for (int w = 0; w < W; ++w) {
                                        const double xh =
                                            (in.at(n, c, h, w) - mean[c]) * invstd[c];
                                        gx.at(n, c, h, w) =
                                            k * (g.at(n, c, h, w) - s1 / M - xh * s2 / M);
                                    }
                        } else {
                            for (int n = 0; n < N; ++n)
                                for (int h = 0; h < H; ++h)
                                    for (int w = 0; w < W; ++w)
                                        gx.at(n, c, h, w) = k * g.at(n, c, h, w);
                        }
                    }
                    t.accum(x, gx);
                    t.accum(gamma, ggamma);
                    t.accum(beta, gbeta);
                });
}

Value Tape::matmul(Value a, Value b, bool ta, bool tb) {
    Tensor out = dvx::matmul(val(a), val(b), ta, tb);
    const std::int64_t K = ta ? val(a).h() : val(a).w();
    flops_ += 2ull * out.n() * out.c() * out.h() * out.w() * K;
    return push(std::move(out), {a, b}, [a, b, ta, tb](Tape& t, const Tensor& g) {
        const Tensor& A = t.val(a);
        const Tensor& B = t.val(b);
        Tensor ga = ta ? dvx::matmul(B, g, tb, true) : dvx::matmul(g, B, false, !tb);
        Tensor gb = tb ? dvx::matmul(g, A, true, ta) : dvx::matmul(A, g, !ta, false);
        if (ga.n() != A.n() || ga.c() != A.c()) {
            ga = reduce_to_broadcast_shape(ga, {A.n(), A.c(), ga.h(), ga.w()});
        }
        if (gb.n() != B.n() || gb.c() != B.c()) {
            gb = reduce_to_broadcast_shape(gb, {B.n(), B.c(), gb.h(), gb.w()});
        }
        t.accum(a, ga);
        t.accum(b, gb);
    });
}

Value Tape::concat_channels(Value a, Value b) {
    Tensor out = dvx::concat_channels(val(a), val(b));
    const int ca = val(a).c();
    return push(std::move(out), {a, b}, [a, b, ca](Tape& t, const Tensor& g) {
        const Tensor& ta = t.val(a);
        const Tensor& tb = t.val(b);
        Tensor ga(ta.n(), ta.c(), ta.h(), ta.w(), 0.0);
        Tensor gb(tb.n(), tb.c(), tb.h(), tb.w(), 0.0);
        const std::size_t plane = static_cast<std::size_t>(g.h()) * g.w();
        for (int n = 0; n < g.n(); ++n) {
            std::copy_n(&g.at(n, 0, 0, 0), plane * ca, &ga.at(n, 0, 0, 0));
            std::copy_n(&g.at(n, ca, 0, 0), plane * tb.c(), &gb.at(n, 0, 0, 0));
        }
        t.accum(a, ga);
        t.accum(b, gb);
    });
}

Value Tape::add(Value a, Value b) {
    Tensor out = dvx::add(val(a), val(b));
    flops_ += out.numel();
    return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accum(a, g);
        t.accum(b, reduce_to_broadcast_shape(g, t.val(b).shape));
    });
}

Value Tape::mul(Value a, Value b) {
    Tensor out = dvx::mul(val(a), val(b));
    flops_ += out.numel();
    return push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accum(a, dvx::mul(g, t.val(b)));
        // g * a, reduced over the axes b broadcast along
        Tensor gb_full = g;
        const Tensor& A = t.val(a);
        for (std::size_t i = 0; i < gb_full.data.size(); ++i) gb_full.data[i] *= A.data[i];
        t.accum(b, reduce_to_broadcast_shape(gb_full, t.val(b).shape));
    });
}

Value Tape::scale(Value x, double alpha) {
    Tensor out = dvx::scale(val(x), alpha);
    flops_ += out.numel();
    return push(std::move(out), {x}, [x, alpha](Tape& t, const Tensor& g) {
        t.accum(x, dvx::scale(g, alpha));
    });
}

Value Tape::freq_filter(Value x, Value w) {
    InverseFftResult r = frequency_filter(val(x), val(w));
    imag_residue_ = std::max(imag_residue_, r.max_imag_residue);
    const Tensor& in = val(x);
    const std::uint64_t hw = static_cast<std::uint64_t>(in.h()) * in.w();
    flops_ += static_cast<std::uint64_t>(in.n()) * in.c() * (10 * hw * ceil_log2(hw) + 6 * hw);
    return push(std::move(r.real), {x, w}, [x, w](Tape& t, const Tensor& g) {
        // adjoint of the linear map z -> ifft2(fft2(z) * w) is itself (w real)
        InverseFftResult adj = frequency_filter(g, t.val(w));
        t.accum(x, adj.real);
        // d/dw_{nc} <g, ifft2(fft2(x)*w)> = <g_{nc}, x_{nc}> since the filter
        // scales channel (n,c) uniformly across bins
        const Tensor& in = t.val(x);
        Tensor gw(in.n(), in.c(), 1, 1, 0.0);
        const std::size_t plane = static_cast<std::size_t>(in.h()) * in.w();
        for (int n = 0; n < in.n(); ++n) {
            for (int c = 0; c < in.c(); ++c) {
                const double* gp = &g.at(n, c, 0, 0);
                const double* ip = &in.at(n, c, 0, 0);
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += gp[i] * ip[i];
                gw.at(n, c, 0, 0) = acc;
            }
        }
        t.accum(w, gw);
    });
}

Value Tape::to_sequence(Value x) {
    const int H = val(x).h(), W = val(x).w();
    return push(dvx::to_sequence(val(x)), {x}, [x, H, W](Tape& t, const Tensor& g) {
        t.accum(x, dvx::from_sequence(g, H, W));
    });
}

Value Tape::from_sequence(Value x, int h, int w) {
    return push(dvx::from_sequence(val(x), h, w), {x}, [x](Tape& t, const Tensor& g) {
        t.accum(x, dvx::to_sequence(g));
    });
}

Value Tape::split_heads(Value x, int heads) {
    return push(dvx::split_heads(val(x), heads), {x}, [x](Tape& t, const Tensor& g) {
        t.accum(x, dvx::merge_heads(g));
    });
}

Value Tape::merge_heads(Value x) {
    const int heads = val(x).c();
    return push(dvx::merge_heads(val(x)), {x}, [x, heads](Tape& t, const Tensor& g) {
        t.accum(x, dvx::split_heads(g, heads));
    });
}

Value Tape::reshape(Value x, int n, int c, int h, int w) {
    return push(dvx::reshape(val(x), n, c, h, w), {x}, [x](Tape& t, const Tensor& g) {
        const auto& s = t.val(x).shape;
        t.accum(x, dvx::reshape(g, s[0], s[1], s[2], s[3]));
    });
}

Value Tape::reduce_channels(Value x, PoolOp op) {
    Tensor out = dvx::reduce_channels(val(x), op);
    flops_ += val(x).numel();
    return push(std::move(out), {x}, [x, op](Tape& t, const Tensor& g) {
        const Tensor& in = t.val(x);
        const int N = in.n(), C = in.c(), H = in.h(), W = in.w();
        Tensor gin(N, C, H, W, 0.0);
        for (int n = 0; n < N; ++n) {
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    const double gv = g.at(n, 0, h, w);
                    if (op == PoolOp::Max) {
                        int bc = 0;
                        double best = in.at(n, 0, h, w);
                        for (int c = 1; c < C; ++c) {
                            if (in.at(n, c, h, w) > best) {
                                best = in.at(n, c, h, w);
                                bc = c;
                            }
                        }
                        gin.at(n, bc, h, w) += gv;
                    } else {
                        const double share = gv / C;
                        for (int c = 0; c < C; ++c) gin.at(n, c, h, w) += share;
                    }
                }
            }
        }
        t.accum(x, gin);
    });
}

Value Tape::bilinear_resize(Value x, int out_h, int out_w) {
    Tensor out = dvx::bilinear_resize(val(x), out_h, out_w);
    flops_ += 8ull * out.numel();
    return push(std::move(out), {x}, [x, out_h, out_w](Tape& t, const Tensor& g) {
        const Tensor& in = t.val(x);
        const int src_h = in.h(), src_w = in.w();
        Tensor gin(in.n(), in.c(), src_h, src_w, 0.0);
        const double sy = static_cast<double>(src_h) / out_h;
        const double sx = static_cast<double>(src_w) / out_w;
        for (int n = 0; n < g.n(); ++n) {
            for (int c = 0; c < g.c(); ++c) {
                for (int i = 0; i < out_h; ++i) {
                    double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0,
                                           static_cast<double>(src_h - 1));
                    const int y0 = static_cast<int>(fy);
                    const int y1 = std::min(y0 + 1, src_h - 1);
                    const double wy = fy - y0;
                    for (int j = 0; j < out_w; ++j) {
                        double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0,
                                               static_cast<double>(src_w - 1));
                        const int x0 = static_cast<int>(fx);
                        const int x1 = std::min(x0 + 1, src_w - 1);
                        const double wx = fx - x0;
                        const double gv = g.at(n, c, i, j);
                        gin.at(n, c, y0, x0) += gv * (1 - wy) * (1 - wx);
                        gin.at(n, c, y0, x1) += gv * (1 - wy) * wx;
                        gin.at(n, c, y1, x0) += gv * wy * (1 - wx);
                        gin.at(n, c, y1, x1) += gv * wy * wx;
                    }
                }
            }
        }
        t.accum(x, gin);
    });
}

Value Tape::multilabel_soft_margin_loss(Value logits, const Tensor& targets) {
    const Tensor& x = val(logits);
    if (!x.same_shape(targets)) {
        throw std::invalid_argument("loss: logits " + x.shape_str() + " vs targets " +
                                    Tensor(targets).shape_str() + " shape mismatch");
    }
    for (double y : targets.data) {
        if (y != 0.0 && y != 1.0) {
            throw std::invalid_argument("loss: targets must be binary 0/1");
        }
    }
    // softplus(z) = log(1 + e^z), computed without overflow
    auto softplus = [](double z) {
        return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    };
    double total = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double xi = x.data[i];
        total += targets.data[i] == 1.0 ? softplus(-xi) : softplus(xi);
    }
    const double inv = 1.0 / static_cast<double>(x.numel());
    Tensor out(1, 1, 1, 1, total * inv);
    flops_ += 4ull * x.numel();
    return push(std::move(out), {logits}, [logits, targets, inv](Tape& t, const Tensor& g) {
        const double seed = g.data[0];
        const Tensor& x = t.val(logits);
        Tensor gx = x;
        for (std::size_t i = 0; i < gx.data.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-x.data[i]));
            gx.data[i] = seed * (sig - targets.data[i]) * inv;
        }
        t.accum(logits, gx);
    });
}

GradientMap Tape::backward(Value output, const Tensor& seed) {
    if (!output.valid() || output.id >= size()) {
        throw std::invalid_argument("backward: invalid output node");
    }
    if (!nodes_[output.id].value.same_shape(seed)) {
        throw std::invalid_argument("backward: seed shape " + Tensor(seed).shape_str() +
                                    " does not match output " +
                                    nodes_[output.id].value.shape_str());
    }
    grads_.assign(nodes_.size(), std::nullopt);
    if (nodes_[output.id].needs_grad) {
        grads_[output.id] = seed;
    }
    for (int i = output.id; i >= 0; --i) {
        if (!grads_[i].has_value() || !nodes_[i].backward) continue;
        nodes_[i].backward(*this, *grads_[i]);
    }
    GradientMap result;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& node = nodes_[i];
        if (!node.requires_grad || node.name.empty()) continue;
        if (grads_[i].has_value()) {
            result[node.name] = *grads_[i];
        } else {
            Tensor zero = node.value;
            std::fill(zero.data.begin(), zero.data.end(), 0.0);
            result[node.name] = std::move(zero);
        }
    }
    grads_.clear();
    return result;
}

GradCheckReport grad_check(const GraphFn& f, const std::vector<GradCheckParam>& params, double h,
                           double tol, std::uint64_t seed, int coords_per_param) {
    if (h <= 0.0) {
        throw std::invalid_argument("grad_check: step must be positive");
    }
    auto run = [&](const std::vector<GradCheckParam>& ps, Tape& tape) {
        std::vector<Value> leaves;
        leaves.reserve(ps.size());
        for (const auto& p : ps) leaves.push_back(tape.leaf(p.name, p.value, true));
        return f(tape, leaves);
    };

    Tape tape;
    Value out = run(params, tape);
    tape.val(out).check_finite("grad_check loss");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor seed_t = tape.val(out);
    for (double& v : seed_t.data) v = normal(rng);

    GradientMap analytic = tape.backward(out, seed_t);

    auto objective = [&](const std::vector<GradCheckParam>& ps) {
        Tape t2;
        Value o = run(ps, t2);
        const Tensor& v = t2.val(o);
        if (!v.same_shape(seed_t)) {
            throw std::runtime_error("grad_check: output shape changed under perturbation");
        }
        double s = 0.0;
        for (std::size_t i = 0; i < v.data.size(); ++i) s += v.data[i] * seed_t.data[i];
        if (!std::isfinite(s)) {
            throw std::runtime_error("grad_check: non-finite loss");
        }
        return s;
    };

    GradCheckReport report;
    std::vector<GradCheckParam> work = params;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto it = analytic.find(params[pi].name);
        if (it == analytic.end()) {
            throw std::runtime_error("grad_check: missing gradient for " + params[pi].name);
        }
        GradCheckReport::Entry entry;
        entry.param = params[pi].name;
        const std::int64_t numel = params[pi].value.numel();
        std::vector<std::int64_t> coords;
        if (numel <= coords_per_param) {
            for (std::int64_t i = 0; i < numel; ++i) coords.push_back(i);
        } else {
            std::mt19937_64 crng(seed ^ (0x9e3779b97f4a7c15ull * (pi + 1)));
            std::uniform_int_distribution<std::int64_t> pick(0, numel - 1);
            while (static_cast<int>(coords.size()) < coords_per_param) {
                const std::int64_t c = pick(crng);
                if (std::find(coords.begin(), coords.end(), c) == coords.end()) {
                    coords.push_back(c);
                }
            }
        }
        for (std::int64_t c : coords) {
            const double orig = work[pi].value.data[c];
            work[pi].value.data[c] = orig + h;
            const double sp = objective(work);
            work[pi].value.data[c] = orig - h;
            const double sm = objective(work);
            work[pi].value.data[c] = orig;
            const double fd = (sp - sm) / (2.0 * h);
            const double an = it->second.data[c];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.coords_checked;
        }
        entry.pass = entry.max_rel_err < tol;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.pass = report.pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace dvx::ad
