// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dvx/tensor.hpp"

namespace dvx {

/// One dual-view example: grayscale image pair in [0,1] plus a multi-hot
/// label vector.
struct SamplePair {
    std::string id;
    Tensor ol;  // (1,1,H,W)
    Tensor sd;  // (1,1,H,W)
    std::vector<int> labels;
};

/// Generator-side ground truth: which class glyphs were stamped into which
/// view. A class is positive exactly when both bits are set.
struct GlyphTruth {
    std::vector<int> a_in_ol;
    std::vector<int> b_in_sd;
};

/// Difficulty knobs for the synthetic benchmark. Defaults are calibrated so
/// that a late-concat linear-head baseline is clearly better than chance but
/// far from saturated, leaving headroom for cross-view fusion to matter.
struct SyntheticOptions {
    double glyph_alpha_lo = 0.40;
    double glyph_alpha_hi = 0.65;
    double glyph_scale_lo = 1.4;  // stencil magnification range
    double glyph_scale_hi = 2.0;
    int clutter_lo = 6;
    int clutter_hi = 12;
    double clutter_alpha_lo = 0.15;
    double clutter_alpha_hi = 0.40;
    int decoys_per_view = 3;
    double lone_evidence_prob = 0.35;  // single-view class glyph on negatives
    int background_blobs = 3;
    double blob_alpha_hi = 0.22;
    int column_jitter = 2;  // positive pairs share a column up to this jitter
};

struct SyntheticDataset {
    std::vector<SamplePair> samples;
    std::vector<GlyphTruth> truth;
};

/// Deterministic per (seed, index); class c is positive iff glyph A_c appears
/// in the OL view and glyph B_c in the SD view. Requires classes <= 8 and
/// size >= 32.
SyntheticDataset generate_synthetic_pairs(int n, int classes, int h, int w, std::uint64_t seed,
                                          const SyntheticOptions& opts = {});

// ---- on-disk layout: images/<id>_OL.png, images/<id>_SD.png, labels.csv ------

void export_png_pair_dataset(const std::string& dir, const std::vector<SamplePair>& samples);

/// Loads the directory layout above; images are decoded to grayscale [0,1]
/// and bilinearly resized to (target_h, target_w). Missing views, malformed
/// CSV rows, and non-binary labels raise errors naming the sample id.
std::vector<SamplePair> load_png_pair_dataset(const std::string& dir, int target_h, int target_w);

struct SplitIndices {
    std::vector<int> train, val, test;
};

/// Deterministic 7:2:1 split by hash of the sample id.
SplitIndices split_by_id_hash(const std::vector<SamplePair>& samples);

void write_split_manifest(const std::string& path, const std::vector<SamplePair>& samples,
                          const SplitIndices& split);

// exposed for loader tests
void write_gray_png(const std::string& path, const Tensor& image);
Tensor read_gray_png(const std::string& path);

}  // namespace dvx
