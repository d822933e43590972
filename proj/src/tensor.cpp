// SPDX-License-Identifier: Apache-2.0
#include "dvx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dvx {

Tensor::Tensor(int n, int c, int h, int w, double fill) {
    if (n < 1 || c < 1 || h < 1 || w < 1) {
        throw std::invalid_argument("Tensor: every axis must be >= 1, got " + std::to_string(n) +
                                    "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
                                    std::to_string(w));
    }
    shape = {n, c, h, w};
    data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(" << shape[0] << "," << shape[1] << "," << shape[2] << "," << shape[3] << ")";
    return os.str();
}

void Tensor::check_finite(const char* what) const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(what) + ": non-finite value in output");
        }
    }
}

void ConvSpec::validate() const {
    if (in_channels < 1 || out_channels < 1) {
        throw std::invalid_argument("conv2d: channel counts must be positive");
    }
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1 || ph < 0 || pw < 0) {
        throw std::invalid_argument("conv2d: bad kernel/stride/padding");
    }
    if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
        throw std::invalid_argument("conv2d: groups must divide in_channels and out_channels");
    }
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const std::vector<double>& bias,
              const ConvSpec& spec) {
    spec.validate();
    if (input.c() != spec.in_channels) {
        throw std::invalid_argument("conv2d: input channel axis is " + std::to_string(input.c()) +
                                    ", spec expects " + std::to_string(spec.in_channels));
    }
    const int cig = spec.in_channels / spec.groups;
    const int cog = spec.out_channels / spec.groups;
    if (weights.n() != spec.out_channels || weights.c() != cig || weights.h() != spec.kh ||
        weights.w() != spec.kw) {
        throw std::invalid_argument("conv2d: weight shape " + weights.shape_str() +
                                    " inconsistent with spec (expects (" +
                                    std::to_string(spec.out_channels) + "," + std::to_string(cig) +
                                    "," + std::to_string(spec.kh) + "," + std::to_string(spec.kw) +
                                    "))");
    }
    if (!bias.empty() && static_cast<int>(bias.size()) != spec.out_channels) {
        throw std::invalid_argument("conv2d: bias length must equal out_channels");
    }
    const int H = input.h(), W = input.w();
    const int OH = spec.out_h(H), OW = spec.out_w(W);
    if (OH < 1 || OW < 1) {
        throw std::invalid_argument("conv2d: kernel does not fit padded input on spatial axes");
    }
    Tensor out(input.n(), spec.out_channels, OH, OW, 0.0);

    for (int n = 0; n < input.n(); ++n) {
        for (int g = 0; g < spec.groups; ++g) {
            for (int oc = 0; oc < cog; ++oc) {
                const int co = g * cog + oc;
                double* outp = &out.at(n, co, 0, 0);
                if (!bias.empty()) {
                    std::fill(outp, outp + static_cast<std::size_t>(OH) * OW, bias[co]);
                }
                for (int ic = 0; ic < cig; ++ic) {
                    const int ci = g * cig + ic;
                    const double* inp = &input.at(n, ci, 0, 0);
                    const double* wrow = &weights.at(co, ic, 0, 0);
                    for (int kh = 0; kh < spec.kh; ++kh) {
                        for (int kw = 0; kw < spec.kw; ++kw) {
                            const double wv = wrow[kh * spec.kw + kw];
                            if (wv == 0.0) continue;
                            for (int oh = 0; oh < OH; ++oh) {
                                const int ih = oh * spec.sh - spec.ph + kh;
                                if (ih < 0 || ih >= H) continue;
                                const double* irow = inp + static_cast<std::size_t>(ih) * W;
                                double* orow = outp + static_cast<std::size_t>(oh) * OW;
                                if (spec.sw == 1) {
                                    int ow0 = std::max(0, spec.pw - kw);
                                    int ow1 = std::min(OW, W + spec.pw - kw);
                                    const double* ip = irow + (ow0 - spec.pw + kw);
                                    for (int ow = ow0; ow < ow1; ++ow, ++ip) {
                                        orow[ow] += wv * *ip;
                                    }
                                } else {
                                    for (int ow = 0; ow < OW; ++ow) {
                                        const int iw = ow * spec.sw - spec.pw + kw;
                                        if (iw < 0 || iw >= W) continue;
                                        orow[ow] += wv * irow[iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor pool2d(const Tensor& input, PoolKind kind, int kh, int kw, int sh, int sw) {
    const int H = input.h(), W = input.w();
    if (kind.global) {
        kh = H;
        kw = W;
        sh = sw = 1;
    }
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1) {
        throw std::invalid_argument("pool2d: bad kernel/stride");
    }
    if (kh > H || kw > W) {
        throw std::invalid_argument("pool2d: kernel " + std::to_string(kh) + "x" +
                                    std::to_string(kw) + " larger than input " + std::to_string(H) +
                                    "x" + std::to_string(W));
    }
    const int OH = (H - kh) / sh + 1;
    const int OW = (W - kw) / sw + 1;
    Tensor out(input.n(), input.c(), OH, OW, 0.0);
    const double inv = 1.0 / (static_cast<double>(kh) * kw);
    for (int n = 0; n < input.n(); ++n) {
        for (int c = 0; c < input.c(); ++c) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    const int h0 = oh * sh, w0 = ow * sw;
                    if (kind.op == PoolOp::Max) {
                        double best = -std::numeric_limits<double>::infinity();
                        for (int i = 0; i < kh; ++i) {
                            for (int j = 0; j < kw; ++j) {
                                best = std::max(best, input.at(n, c, h0 + i, w0 + j));
                            }
                        }
                        out.at(n, c, oh, ow) = best;
                    } else {
                        double acc = 0.0;
                        for (int i = 0; i < kh; ++i) {
                            for (int j = 0; j < kw; ++j) {
                                acc += input.at(n, c, h0 + i, w0 + j);
                            }
                        }
                        out.at(n, c, oh, ow) = acc * inv;
                    }
                }
            }
        }
    }
    return out;
}

Tensor activation(const Tensor& input, Activation kind) {
    Tensor out = input;
    switch (kind) {
        case Activation::ReLU:
            for (double& v : out.data) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::Sigmoid:
            for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
            break;
        case Activation::SoftmaxOverChannels: {
            const int N = input.n(), C = input.c(), H = input.h(), W = input.w();
            for (int n = 0; n < N; ++n) {
                for (int h = 0; h < H; ++h) {
                    for (int w = 0; w < W; ++w) {
                        double mx = -std::numeric_limits<double>::infinity();
                        for (int c = 0; c < C; ++c) mx = std::max(mx, input.at(n, c, h, w));
                        double sum = 0.0;
                        for (int c = 0; c < C; ++c) {
                            const double e = std::exp(input.at(n, c, h, w) - mx);
                            out.at(n, c, h, w) = e;
                            sum += e;
                        }
                        for (int c = 0; c < C; ++c) out.at(n, c, h, w) /= sum;
                    }
                }
            }
            break;
        }
    }
    return out;
}

Tensor softmax_lastaxis(const Tensor& input) {
    Tensor out = input;
    const std::int64_t rows = input.numel() / input.w();
    const int W = input.w();
    for (std::int64_t r = 0; r < rows; ++r) {
        double* p = &out.data[r * W];
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < W; ++j) mx = std::max(mx, p[j]);
        double sum = 0.0;
        for (int j = 0; j < W; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (int j = 0; j < W; ++j) p[j] /= sum;
    }
    return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState* state, BnMode mode, double momentum, double eps) {
    const int N = input.n(), C = input.c(), H = input.h(), W = input.w();
    if (gamma.c() != C || beta.c() != C) {
        throw std::invalid_argument("batchnorm2d: gamma/beta channel axis must equal " +
                                    std::to_string(C));
    }
    Tensor out(N, C, H, W, 0.0);
    const std::int64_t M = static_cast<std::int64_t>(N) * H * W;
    for (int c = 0; c < C; ++c) {
        double mean, var;
        if (mode == BnMode::Train) {
            double s = 0.0;
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) s += input.at(n, c, h, w);
            mean = s / static_cast<double>(M);
            double v = 0.0;
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        const double d = input.at(n, c, h, w) - mean;
                        v += d * d;
                    }
            var = v / static_cast<double>(M);
            if (state != nullptr) {
                const double unbiased = M > 1 ? v / static_cast<double>(M - 1) : var;
                state->running_mean.data[c] = (1.0 - momentum) * state->running_mean.data[c] +
                                              momentum * mean;
                state->running_var.data[c] = (1.0 - momentum) * state->running_var.data[c] +
                                             momentum * unbiased;
            }
        } else {
            if (state == nullptr) {
                throw std::invalid_argument("batchnorm2d: Eval mode requires running stats");
            }
            mean = state->running_mean.data[c];
            var = state->running_var.data[c];
        }
        const double invstd = 1.0 / std::sqrt(var + eps);
        const double g = gamma.data[c], b = beta.data[c];
        for (int n = 0; n < N; ++n)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    out.at(n, c, h, w) = (input.at(n, c, h, w) - mean) * invstd * g + b;
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    const int R = ta ? a.w() : a.h();
    const int K = ta ? a.h() : a.w();
    const int Kb = tb ? b.w() : b.h();
    const int S = tb ? b.h() : b.w();
    if (K != Kb) {
        throw std::invalid_argument("matmul: inner dimensions disagree (" + std::to_string(K) +
                                    " vs " + std::to_string(Kb) + ")");
    }
    if ((b.n() != a.n() && b.n() != 1 && a.n() != 1) ||
        (b.c() != a.c() && b.c() != 1 && a.c() != 1)) {
        throw std::invalid_argument("matmul: leading axes must match or be 1");
    }
    const int N = std::max(a.n(), b.n());
    const int G = std::max(a.c(), b.c());
    Tensor out(N, G, R, S, 0.0);
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < G; ++g) {
            const double* ap = &a.at(a.n() == 1 ? 0 : n, a.c() == 1 ? 0 : g, 0, 0);
            const double* bp = &b.at(b.n() == 1 ? 0 : n, b.c() == 1 ? 0 : g, 0, 0);
            double* op = &out.at(n, g, 0, 0);
            const int lda = a.w(), ldb = b.w();
            for (int r = 0; r < R; ++r) {
                double* orow = op + static_cast<std::size_t>(r) * S;
                for (int k = 0; k < K; ++k) {
                    const double av = ta ? ap[k * lda + r] : ap[r * lda + k];
                    if (av == 0.0) continue;
                    if (!tb) {
                        const double* brow = bp + static_cast<std::size_t>(k) * ldb;
                        for (int s = 0; s < S; ++s) orow[s] += av * brow[s];
                    } else {
                        for (int s = 0; s < S; ++s) orow[s] += av * bp[s * ldb + k];
                    }
                }
            }
        }
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw std::invalid_argument("concat_channels: batch/spatial axes must match, got " +
                                    a.shape_str() + " and " + b.shape_str());
    }
    Tensor out(a.n(), a.c() + b.c(), a.h(), a.w(), 0.0);
    const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
    for (int n = 0; n < a.n(); ++n) {
        std::copy_n(&a.at(n, 0, 0, 0), plane * a.c(), &out.at(n, 0, 0, 0));
        std::copy_n(&b.at(n, 0, 0, 0), plane * b.c(), &out.at(n, a.c(), 0, 0));
    }
    return out;
}

namespace {

enum class Broadcast { None, ChannelVec, SpatialMap };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b) {
    if (b.n() != a.n() && b.n() != 1) {
        throw std::invalid_argument("broadcast: batch axis of " + b.shape_str() +
                                    " incompatible with " + a.shape_str());
    }
    if (b.c() == a.c() && b.h() == a.h() && b.w() == a.w()) return Broadcast::None;
    if (b.c() == a.c() && b.h() == 1 && b.w() == 1) return Broadcast::ChannelVec;
    if (b.c() == 1 && b.h() == a.h() && b.w() == a.w()) return Broadcast::SpatialMap;
    throw std::invalid_argument("broadcast: " + b.shape_str() + " does not match " + a.shape_str() +
                                " as a channel vector (N,C,1,1) or spatial map (N,1,H,W)");
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& f) {
    const Broadcast kind = broadcast_kind(a, b);
    Tensor out = a;
    const int N = a.n(), C = a.c(), H = a.h(), W = a.w();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        const int bn = b.n() == 1 ? 0 : n;
        for (int c = 0; c < C; ++c) {
            double* op = &out.at(n, c, 0, 0);
            if (kind == Broadcast::None) {
                const double* bp = &b.at(bn, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) op[i] = f(op[i], bp[i]);
            } else if (kind == Broadcast::ChannelVec) {
                const double bv = b.at(bn, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) op[i] = f(op[i], bv);
            } else {
                const double* bp = &b.at(bn, 0, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) op[i] = f(op[i], bp[i]);
            }
        }
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x + y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(a, b, [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double alpha) {
    Tensor out = a;
    for (double& v : out.data) v *= alpha;
    return out;
}

Tensor to_sequence(const Tensor& x) {
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    Tensor out(N, 1, H * W, C, 0.0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) out.at(n, 0, h * W + w, c) = x.at(n, c, h, w);
    return out;
}

Tensor from_sequence(const Tensor& x, int h, int w) {
    const int N = x.n(), L = x.h(), C = x.w();
    if (x.c() != 1 || L != h * w) {
        throw std::invalid_argument("from_sequence: expected (N,1," + std::to_string(h * w) +
                                    ",C), got " + x.shape_str());
    }
    Tensor out(N, C, h, w, 0.0);
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int c = 0; c < C; ++c) out.at(n, c, i, j) = x.at(n, 0, i * w + j, c);
    return out;
}

Tensor split_heads(const Tensor& x, int heads) {
    const int N = x.n(), L = x.h(), C = x.w();
    if (x.c() != 1 || C % heads != 0) {
        throw std::invalid_argument("split_heads: need (N,1,L,C) with C divisible by heads");
    }
    const int d = C / heads;
    Tensor out(N, heads, L, d, 0.0);
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < heads; ++g)
            for (int l = 0; l < L; ++l)
                for (int k = 0; k < d; ++k) out.at(n, g, l, k) = x.at(n, 0, l, g * d + k);
    return out;
}

Tensor merge_heads(const Tensor& x) {
    const int N = x.n(), heads = x.c(), L = x.h(), d = x.w();
    Tensor out(N, 1, L, heads * d, 0.0);
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < heads; ++g)
            for (int l = 0; l < L; ++l)
                for (int k = 0; k < d; ++k) out.at(n, 0, l, g * d + k) = x.at(n, g, l, k);
    return out;
}

Tensor reshape(const Tensor& x, int n, int c, int h, int w) {
    if (static_cast<std::int64_t>(n) * c * h * w != x.numel()) {
        throw std::invalid_argument("reshape: element count mismatch");
    }
    Tensor out(n, c, h, w, 0.0);
    out.data = x.data;
    return out;
}

Tensor reduce_channels(const Tensor& x, PoolOp op) {
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    Tensor out(N, 1, H, W, 0.0);
    for (int n = 0; n < N; ++n) {
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                if (op == PoolOp::Max) {
                    double best = x.at(n, 0, h, w);
                    for (int c = 1; c < C; ++c) best = std::max(best, x.at(n, c, h, w));
                    out.at(n, 0, h, w) = best;
                } else {
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) s += x.at(n, c, h, w);
                    out.at(n, 0, h, w) = s / C;
                }
            }
        }
    }
    return out;
}

std::vector<double> bilinear_resize_grid(const std::vector<double>& src, int src_h, int src_w,
                                         int out_h, int out_w) {
    std::vector<double> dst(static_cast<std::size_t>(out_h) * out_w, 0.0);
    const double sy = static_cast<double>(src_h) / out_h;
    const double sx = static_cast<double>(src_w) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src_h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src_h - 1);
        const double wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src_w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src_w - 1);
            const double wx = fx - x0;
            const double top = src[static_cast<std::size_t>(y0) * src_w + x0] * (1 - wx) +
                               src[static_cast<std::size_t>(y0) * src_w + x1] * wx;
            const double bot = src[static_cast<std::size_t>(y1) * src_w + x0] * (1 - wx) +
                               src[static_cast<std::size_t>(y1) * src_w + x1] * wx;
            dst[static_cast<std::size_t>(i) * out_w + j] = top * (1 - wy) + bot * wy;
        }
    }
    return dst;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("bilinear_resize: target size must be positive");
    }
    Tensor out(x.n(), x.c(), out_h, out_w, 0.0);
    std::vector<double> plane(static_cast<std::size_t>(x.h()) * x.w());
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            std::copy_n(&x.at(n, c, 0, 0), plane.size(), plane.begin());
            const auto resized = bilinear_resize_grid(plane, x.h(), x.w(), out_h, out_w);
            std::copy(resized.begin(), resized.end(), &out.at(n, c, 0, 0));
        }
    }
    return out;
}

}  // namespace dvx
