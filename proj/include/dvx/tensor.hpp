// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dvx {

/// Dense 4-axis tensor (batch, channel, height, width), row-major doubles.
/// Tensors are immutable values once produced by an op; all ops below are
/// pure functions of their inputs.
struct Tensor {
    std::array<int, 4> shape{1, 1, 1, 1};  // N, C, H, W; each >= 1
    std::vector<double> data;

    Tensor() : data(1, 0.0) {}
    Tensor(int n, int c, int h, int w, double fill = 0.0);

    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    std::int64_t numel() const { return data.size(); }

    double& at(int n, int c, int h, int w) {
        return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const double& at(int n, int c, int h, int w) const {
        return data[((static_cast<std::int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;

    /// Throws if any element is NaN/Inf; `what` names the producing op.
    void check_finite(const char* what) const;
};

enum class PoolOp { Max, Avg };

/// Pooling descriptor. `global` pools over all of H x W regardless of kernel.
struct PoolKind {
    PoolOp op = PoolOp::Max;
    bool global = false;
};

/// Convolution descriptor. groups == in_channels == out_channels describes a
/// depthwise convolution; kernel (1,1) with groups 1 a pointwise one.
struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kh = 1, kw = 1;
    int sh = 1, sw = 1;
    int ph = 0, pw = 0;
    int groups = 1;

    void validate() const;
    int out_h(int in_h) const { return (in_h + 2 * ph - kh) / sh + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pw - kw) / sw + 1; }
};

enum class Activation { ReLU, Sigmoid, SoftmaxOverChannels };

// ---- primitive ops ---------------------------------------------------------

/// Zero-padded 2D convolution. weights shape: (out_channels, in_channels/groups, kh, kw),
/// bias length out_channels (empty vector = no bias).
Tensor conv2d(const Tensor& input, const Tensor& weights, const std::vector<double>& bias,
              const ConvSpec& spec);

Tensor pool2d(const Tensor& input, PoolKind kind, int kh = 1, int kw = 1, int sh = 1, int sw = 1);

Tensor activation(const Tensor& input, Activation kind);

/// Softmax along the last (W) axis; used for attention rows and channel-vector
/// weightings laid out as (N,1,1,C) sequences.
Tensor softmax_lastaxis(const Tensor& input);

struct BatchNormState {
    Tensor running_mean;  // (1,C,1,1)
    Tensor running_var;   // (1,C,1,1)
};

enum class BnMode { Train, Eval };

/// Per-channel batch normalization over (N,H,W). Train mode uses batch
/// statistics (biased variance) and updates running stats with `momentum`
/// (running <- (1-m)*running + m*batch, unbiased variance for the running
/// update); Eval mode uses running stats.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState* state, BnMode mode, double momentum = 0.1, double eps = 1e-5);

/// Batched matrix product. a: (N,G,R,K), b: (N,G,K,S); b's leading axes may be
/// 1 and broadcast. ta/tb transpose the trailing two axes of a/b first.
Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false);

Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Elementwise sum. b may equal a's shape or be one of the two broadcast
/// patterns: channel vector (N or 1, C, 1, 1) and spatial map (N or 1, 1, H, W).
Tensor add(const Tensor& a, const Tensor& b);

/// Elementwise product with the same broadcast patterns as add().
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double alpha);

// ---- layout ops ------------------------------------------------------------

/// (N,C,H,W) -> (N,1,H*W,C) token sequence (position-major).
Tensor to_sequence(const Tensor& x);
/// (N,1,H*W,C) -> (N,C,H,W); inverse of to_sequence.
Tensor from_sequence(const Tensor& x, int h, int w);
/// (N,1,L,C) -> (N,heads,L,C/heads).
Tensor split_heads(const Tensor& x, int heads);
/// (N,heads,L,d) -> (N,1,L,heads*d); inverse of split_heads.
Tensor merge_heads(const Tensor& x);
/// Reinterpret the row-major buffer under a new shape with equal numel.
Tensor reshape(const Tensor& x, int n, int c, int h, int w);

/// Per-position statistics over the channel axis -> (N,1,H,W).
Tensor reduce_channels(const Tensor& x, PoolOp op);

/// Bilinear resize to (out_h, out_w) with align_corners=false convention.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

// ---- raw helpers shared with non-tensor code -------------------------------

/// Bilinear resize of a raw row-major grid (used by the image loader).
std::vector<double> bilinear_resize_grid(const std::vector<double>& src, int src_h, int src_w,
                                         int out_h, int out_w);

}  // namespace dvx
