// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dvx/spectral.hpp"
#include "dvx/tensor.hpp"

namespace dvx::ad {

/// Handle to a node on a Tape.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Gradients keyed by leaf name; shapes match the parameter shapes.
using GradientMap = std::map<std::string, Tensor>;

/// Reverse-mode tape. Ops evaluate eagerly through the tensor-core primitives
/// (taped and untaped evaluation are bit-identical) and record what backward
/// needs. A tape is confined to one thread; distinct tapes are independent.
class Tape {
public:
    Value leaf(const std::string& name, const Tensor& v, bool requires_grad = true);
    Value input(const Tensor& v) { return leaf("", v, false); }
    Value constant(const Tensor& v) { return leaf("", v, false); }

    Value conv2d(Value x, Value w, std::optional<Value> bias, const ConvSpec& spec);
    Value pool2d(Value x, PoolKind kind, int kh = 1, int kw = 1, int sh = 1, int sw = 1);
    Value relu(Value x);
    Value sigmoid(Value x);
    Value softmax_channels(Value x);
    Value softmax_lastaxis(Value x);
    Value batchnorm(Value x, Value gamma, Value beta, BatchNormState* state, BnMode mode,
                    double momentum = 0.1, double eps = 1e-5);
    Value matmul(Value a, Value b, bool ta = false, bool tb = false);
    Value concat_channels(Value a, Value b);
    Value add(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value x, double alpha);
    /// FDIM spectral path: ifft2(fft2(x) * w) with per-channel real weights
    /// (N,C,1,1). Differentiated via the adjoint transform.
    Value freq_filter(Value x, Value w);
    Value to_sequence(Value x);
    Value from_sequence(Value x, int h, int w);
    Value split_heads(Value x, int heads);
    Value merge_heads(Value x);
    Value reshape(Value x, int n, int c, int h, int w);
    Value reduce_channels(Value x, PoolOp op);
    Value bilinear_resize(Value x, int out_h, int out_w);
    /// Mean binary cross-entropy over labels and batch from logits, computed
    /// in the stable softplus form. Output shape (1,1,1,1).
    Value multilabel_soft_margin_loss(Value logits, const Tensor& targets);

    const Tensor& val(Value v) const { return nodes_[v.id].value; }
    int size() const { return static_cast<int>(nodes_.size()); }

    /// Gradients of <seed, output> with respect to every grad-requiring leaf.
    GradientMap backward(Value output, const Tensor& seed);

    /// FLOPs accumulated by ops so far (2 x multiply-adds for conv/matmul,
    /// element counts for normalization/activations/elementwise ops).
    std::uint64_t flops() const { return flops_; }
    /// Largest |imaginary residue| recorded by freq_filter nodes.
    double imag_residue() const { return imag_residue_; }

private:
    struct Node {
        Tensor value;
        std::string name;
        bool requires_grad = false;
        bool needs_grad = false;
        std::function<void(Tape&, const Tensor&)> backward;
    };

    Value push(Tensor value, std::initializer_list<Value> parents,
               std::function<void(Tape&, const Tensor&)> bw);
    void accum(Value v, const Tensor& g);
    bool any_needs_grad(std::initializer_list<Value> vs) const;

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor>> grads_;
    std::uint64_t flops_ = 0;
    double imag_residue_ = 0.0;
};

// ---- finite-difference verification -----------------------------------------

struct GradCheckParam {
    std::string name;
    Tensor value;
};

/// Builds the graph from a tape and the leaves lifted from the parameter list,
/// in order. Returns the graph output.
using GraphFn = std::function<Value(Tape&, const std::vector<Value>&)>;

struct GradCheckReport {
    struct Entry {
        std::string param;
        double max_rel_err = 0.0;
        int coords_checked = 0;
        bool pass = true;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;
    bool pass = true;
};

/// Central-difference check of <seed, f(params)> against the tape gradients.
/// Samples up to coords_per_param coordinates per parameter; relative error
/// uses denominator max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const GraphFn& f, const std::vector<GradCheckParam>& params, double h,
                           double tol, std::uint64_t seed, int coords_per_param = 6);

}  // namespace dvx::ad
