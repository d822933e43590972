// SPDX-License-Identifier: Apache-2.0
#include "dvx/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dvx/init.hpp"

namespace fs = std::filesystem;

namespace dvx {

namespace {

constexpr int kGlyph = 11;  // stencil grid size

using Stencil = std::array<std::array<bool, kGlyph>, kGlyph>;

double dist_to_segment(double px, double py, double x0, double y0, double x1, double y1) {
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
}

// procedural glyph library; classes use pairs (2c, 2c+1), the tail shapes
// serve as decoys
Stencil make_stencil(int shape) {
    Stencil s{};
    for (int y = 0; y < kGlyph; ++y) {
        for (int x = 0; x < kGlyph; ++x) {
            const double cx = x - 5.0, cy = y - 5.0;
            const double r = std::hypot(cx, cy);
            bool on = false;
            switch (shape) {
                case 0: on = r >= 3.2 && r <= 4.8; break;                       // ring
                case 1: on = r <= 3.6; break;                                   // disk
                case 2: on = (std::abs(cx) <= 1 || std::abs(cy) <= 1) &&
                             std::abs(cx) <= 4 && std::abs(cy) <= 4; break;     // plus
                case 3: on = (std::abs(cx - cy) <= 1.2 || std::abs(cx + cy) <= 1.2) &&
                             std::abs(cx) <= 4.2 && std::abs(cy) <= 4.2; break; // X
                case 4: on = (y <= 2 && x >= 1 && x <= 9) ||
                             (std::abs(cx) <= 1 && y >= 1 && y <= 9); break;    // T
                case 5: on = (x <= 2 && y >= 1 && y <= 9) ||
                             (y >= 8 && x >= 1 && x <= 9); break;               // L
                case 6: on = std::max(std::abs(cx), std::abs(cy)) >= 3.0 &&
                             std::max(std::abs(cx), std::abs(cy)) <= 4.5; break;  // box
                case 7: on = std::max(std::abs(cx), std::abs(cy)) <= 2.5; break;  // block
                case 8: on = std::abs(cx) + std::abs(cy) >= 3.5 &&
                             std::abs(cx) + std::abs(cy) <= 5.2; break;         // diamond
                case 9: on = y >= 2 && y <= 9 && std::abs(cx) <= (y - 2) * 0.55; break;
                case 10: on = ((x <= 2 || x >= 8) && y >= 1 && y <= 9) ||
                              (std::abs(cy) <= 0.8 && x >= 2 && x <= 8); break;  // H
                case 11: on = ((y <= 1.5 || y >= 8.5) && x >= 1 && x <= 9) ||
                              std::abs(cx + cy) <= 1.1; break;                  // Z
                case 12: on = ((x <= 2 || x >= 8) && y >= 1 && y <= 8) ||
                              (y >= 8 && y <= 9.5 && x >= 1 && x <= 9); break;  // U
                case 13: on = ((x >= 2 && x <= 3) || (x >= 7 && x <= 8)) &&
                              y >= 1 && y <= 9; break;                          // two columns
                case 14: on = ((y >= 2 && y <= 3) || (y >= 7 && y <= 8)) &&
                              x >= 1 && x <= 9; break;                          // two rows
                case 15: on = std::hypot(std::abs(cx) - 2.5, std::abs(cy) - 2.5) <= 1.4; break;
                case 16: on = dist_to_segment(x, y, 1, 1, 5, 9) <= 0.9 ||
                              dist_to_segment(x, y, 9, 1, 5, 9) <= 0.9; break;  // V
                case 17: on = ((y <= 1.5 || y >= 8.5 || std::abs(cy) <= 0.7) && x >= 1 && x <= 9) ||
                              (x <= 2 && y < 5 && y > 1) ||
                              (x >= 8 && y > 5 && y < 9); break;                // S
                case 18: on = r >= 1.8 && r <= 3.0; break;                      // small ring
                case 19: on = std::abs(cx) + std::abs(cy) >= 4.4 &&
                              std::abs(cx) + std::abs(cy) <= 5.8; break;
                case 20: on = (y <= 6 && std::abs(cx) <= (y - 1) * 0.5 && y >= 1) ||
                              (std::abs(cx) <= 1 && y >= 5 && y <= 9); break;   // arrow
                default: on = (x <= 2 && y >= 1 && y <= 9) ||
                              ((y <= 2 || y >= 8 || std::abs(cy) <= 0.7) && x >= 1 && x <= 8);
            }
            s[y][x] = on;
        }
    }
    return s;
}

constexpr int kShapeCount = 22;

const std::vector<Stencil>& stencils() {
    static const std::vector<Stencil> all = [] {
        std::vector<Stencil> v;
        for (int i = 0; i < kShapeCount; ++i) v.push_back(make_stencil(i));
        return v;
    }();
    return all;
}

struct Canvas {
    int h, w;
    std::vector<double> pix;
    Canvas(int h_, int w_) : h(h_), w(w_), pix(static_cast<std::size_t>(h_) * w_, 0.0) {}
    void add(int y, int x, double v) {
        if (y >= 0 && y < h && x >= 0 && x < w) pix[static_cast<std::size_t>(y) * w + x] += v;
    }
};

// Stamps the stencil magnified by `s` with box sampling, so glyph sizes vary
// continuously.
void stamp(Canvas& img, const Stencil& st, int top, int left, double alpha, double s) {
    const int size = std::max(1, static_cast<int>(std::lround(kGlyph * s)));
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const int sy = std::min(kGlyph - 1, static_cast<int>(y / s));
            const int sx = std::min(kGlyph - 1, static_cast<int>(x / s));
            if (st[sy][sx]) img.add(top + y, left + x, alpha);
        }
    }
}

void add_blob(Canvas& img, std::mt19937_64& rng, double alpha_hi) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double cx = u01(rng) * img.w, cy = u01(rng) * img.h;
    const double rx = 6.0 + u01(rng) * 14.0, ry = 6.0 + u01(rng) * 14.0;
    const double a = 0.06 + u01(rng) * (alpha_hi - 0.06);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const double d = ((x - cx) * (x - cx)) / (rx * rx) + ((y - cy) * (y - cy)) / (ry * ry);
            if (d < 4.0) img.add(y, x, a * std::exp(-d));
        }
}

void add_stroke(Canvas& img, std::mt19937_64& rng, double alpha_lo, double alpha_hi) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double x0 = u01(rng) * img.w, y0 = u01(rng) * img.h;
    const double ang = u01(rng) * 2.0 * 3.14159265358979;
    const double len = 8.0 + u01(rng) * 22.0;
    const double a = alpha_lo + u01(rng) * (alpha_hi - alpha_lo);
    const double dx = std::cos(ang), dy = std::sin(ang);
    for (double t = 0.0; t <= len; t += 0.7) {
        const int px = static_cast<int>(std::lround(x0 + dx * t));
        const int py = static_cast<int>(std::lround(y0 + dy * t));
        img.add(py, px, a);
        img.add(py, px + 1, a * 0.5);
    }
}

int max_positives_for(int classes) {
    // keeps each class's expected positive rate (1+k)/2 / classes inside the
    // documented band where the class count allows it
    int k = std::min(3, classes);
    while (k > 1 && (1.0 + k) / 2.0 > 0.45 * classes) --k;
    return k;
}

}  // namespace

SyntheticDataset generate_synthetic_pairs(int n, int classes, int h, int w, std::uint64_t seed,
                                          const SyntheticOptions& opts) {
    if (classes < 1 || classes > 8) {
        throw std::invalid_argument("generate_synthetic_pairs: classes must be in [1,8]");
    }
    if (h < 32 || w < 32) {
        throw std::invalid_argument("generate_synthetic_pairs: size must be at least 32");
    }
    const auto& shapes = stencils();
    const int kmax = max_positives_for(classes);
    SyntheticDataset out;
    out.samples.resize(n);
    out.truth.resize(n);

    for (int idx = 0; idx < n; ++idx) {
        std::mt19937_64 rng(substream(seed, static_cast<std::uint64_t>(idx)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::uniform_int_distribution<int> pick_class(0, classes - 1);

        Canvas ol(h, w), sd(h, w);
        for (int b = 0; b < opts.background_blobs; ++b) {
            add_blob(ol, rng, opts.blob_alpha_hi);
            add_blob(sd, rng, opts.blob_alpha_hi);
        }

        // positive classes: both glyphs, sharing a column up to jitter
        std::vector<int> labels(classes, 0);
        std::uniform_int_distribution<int> kdist(1, kmax);
        const int k = kdist(rng);
        for (int j = 0; j < k; ++j) {
            int c = pick_class(rng);
            while (labels[c] == 1) c = (c + 1) % classes;
            labels[c] = 1;
        }

        GlyphTruth truth;
        truth.a_in_ol.assign(classes, 0);
        truth.b_in_sd.assign(classes, 0);

        auto glyph_alpha = [&] {
            return opts.glyph_alpha_lo + u01(rng) * (opts.glyph_alpha_hi - opts.glyph_alpha_lo);
        };
        auto glyph_scale = [&] {
            return opts.glyph_scale_lo + u01(rng) * (opts.glyph_scale_hi - opts.glyph_scale_lo);
        };
        auto glyph_px = [](double s) {
            return std::max(1, static_cast<int>(std::lround(kGlyph * s)));
        };
        auto place = [&](int extent, double s) {
            const int span = std::max(1, extent - glyph_px(s));
            return std::uniform_int_distribution<int>(0, span - 1)(rng);
        };
        std::uniform_int_distribution<int> jitter(-opts.column_jitter, opts.column_jitter);

        for (int c = 0; c < classes; ++c) {
            if (labels[c] == 1) {
                const double s_ol_g = glyph_scale(), s_sd_g = glyph_scale();
                const int shared_col = place(w, std::max(s_ol_g, s_sd_g));
                const int col_ol =
                    std::clamp(shared_col + jitter(rng), 0, std::max(0, w - glyph_px(s_ol_g)));
                const int col_sd =
                    std::clamp(shared_col + jitter(rng), 0, std::max(0, w - glyph_px(s_sd_g)));
                stamp(ol, shapes[2 * c], place(h, s_ol_g), col_ol, glyph_alpha(), s_ol_g);
                stamp(sd, shapes[2 * c + 1], place(h, s_sd_g), col_sd, glyph_alpha(), s_sd_g);
                truth.a_in_ol[c] = 1;
                truth.b_in_sd[c] = 1;
            } else if (u01(rng) < opts.lone_evidence_prob) {
                // single-view evidence keeps per-view appearance identical to
                // positives without flipping the label
                const double s = glyph_scale();
                if (u01(rng) < 0.5) {
                    stamp(ol, shapes[2 * c], place(h, s), place(w, s), glyph_alpha(), s);
                    truth.a_in_ol[c] = 1;
                } else {
                    stamp(sd, shapes[2 * c + 1], place(h, s), place(w, s), glyph_alpha(), s);
                    truth.b_in_sd[c] = 1;
                }
            }
        }

        std::uniform_int_distribution<int> decoy_shape(2 * classes, kShapeCount - 1);
        for (int d = 0; d < opts.decoys_per_view; ++d) {
            const double s1 = glyph_scale(), s2 = glyph_scale();
            stamp(ol, shapes[decoy_shape(rng)], place(h, s1), place(w, s1), glyph_alpha(), s1);
            stamp(sd, shapes[decoy_shape(rng)], place(h, s2), place(w, s2), glyph_alpha(), s2);
        }

        std::uniform_int_distribution<int> strokes(opts.clutter_lo, opts.clutter_hi);
        const int s_ol = strokes(rng), s_sd = strokes(rng);
        for (int s = 0; s < s_ol; ++s) add_stroke(ol, rng, opts.clutter_alpha_lo, opts.clutter_alpha_hi);
        for (int s = 0; s < s_sd; ++s) add_stroke(sd, rng, opts.clutter_alpha_lo, opts.clutter_alpha_hi);

        SamplePair pair;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "syn%06d", idx);
        pair.id = buf;
        pair.ol = Tensor(1, 1, h, w, 0.0);
        pair.sd = Tensor(1, 1, h, w, 0.0);
        for (std::size_t i = 0; i < ol.pix.size(); ++i) {
            pair.ol.data[i] = std::clamp(ol.pix[i], 0.0, 1.0);
            pair.sd.data[i] = std::clamp(sd.pix[i], 0.0, 1.0);
        }
        pair.labels = labels;
        out.samples[idx] = std::move(pair);
        out.truth[idx] = std::move(truth);
    }
    return out;
}

void write_gray_png(const std::string& path, const Tensor& image) {
    const int h = image.h(), w = image.w();
    std::vector<png_byte> bytes(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<png_byte>(
            std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
    }
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_GRAY;
    if (png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), w, nullptr) == 0) {
        throw std::runtime_error("png write failed: " + path + " (" + img.message + ")");
    }
}

Tensor read_gray_png(const std::string& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
        throw std::runtime_error("png read failed: " + path + " (" + img.message + ")");
    }
    img.format = PNG_FORMAT_GRAY;  // RGB inputs are converted by luminance
    std::vector<png_byte> bytes(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, bytes.data(), static_cast<png_int_32>(img.width),
                              nullptr) == 0) {
        throw std::runtime_error("png decode failed: " + path + " (" + img.message + ")");
    }
    Tensor out(1, 1, static_cast<int>(img.height), static_cast<int>(img.width), 0.0);
    for (std::size_t i = 0; i < bytes.size(); ++i) out.data[i] = bytes[i] / 255.0;
    return out;
}

void export_png_pair_dataset(const std::string& dir, const std::vector<SamplePair>& samples) {
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream csv(fs::path(dir) / "labels.csv");
    if (!csv) throw std::runtime_error("cannot write labels.csv under " + dir);
    const int classes = samples.empty() ? 0 : static_cast<int>(samples[0].labels.size());
    csv << "id";
    for (int c = 0; c < classes; ++c) csv << ",c" << c;
    csv << "\n";
    for (const auto& s : samples) {
        write_gray_png((fs::path(dir) / "images" / (s.id + "_OL.png")).string(), s.ol);
        write_gray_png((fs::path(dir) / "images" / (s.id + "_SD.png")).string(), s.sd);
        csv << s.id;
        for (int v : s.labels) csv << "," << v;
        csv << "\n";
    }
}

std::vector<SamplePair> load_png_pair_dataset(const std::string& dir, int target_h, int target_w) {
    std::vector<SamplePair> out;
    const fs::path labels_path = fs::path(dir) / "labels.csv";
    if (!fs::exists(labels_path)) {
        std::cerr << "warning: " << dir << " has no labels.csv; returning an empty dataset\n";
        return out;
    }
    std::ifstream csv(labels_path);
    std::string line;
    if (!std::getline(csv, line)) {
        std::cerr << "warning: empty labels.csv in " << dir << "\n";
        return out;
    }
    int line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, field;
        if (!std::getline(ss, id, ',') || id.empty()) {
            throw std::runtime_error("labels.csv line " + std::to_string(line_no) +
                                     ": malformed row");
        }
        SamplePair pair;
        pair.id = id;
        while (std::getline(ss, field, ',')) {
            if (field != "0" && field != "1") {
                throw std::runtime_error("sample " + id + ": non-binary label '" + field + "'");
            }
            pair.labels.push_back(field == "1" ? 1 : 0);
        }
        if (pair.labels.empty()) {
            throw std::runtime_error("sample " + id + ": row has no labels");
        }
        for (const char* view : {"_OL.png", "_SD.png"}) {
            const fs::path img_path = fs::path(dir) / "images" / (id + view);
            if (!fs::exists(img_path)) {
                throw std::runtime_error("sample " + id + ": missing view file " +
                                         img_path.string());
            }
            Tensor raw = read_gray_png(img_path.string());
            Tensor resized(1, 1, target_h, target_w, 0.0);
            resized.data = bilinear_resize_grid(raw.data, raw.h(), raw.w(), target_h, target_w);
            if (view[1] == 'O') {
                pair.ol = std::move(resized);
            } else {
                pair.sd = std::move(resized);
            }
        }
        out.push_back(std::move(pair));
    }
    return out;
}

SplitIndices split_by_id_hash(const std::vector<SamplePair>& samples) {
    SplitIndices split;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
        std::uint64_t hash = 1469598103934665603ull;  // FNV-1a
        for (char ch : samples[i].id) {
            hash ^= static_cast<unsigned char>(ch);
            hash *= 1099511628211ull;
        }
        const int bucket = static_cast<int>(hash % 10);
        if (bucket < 7) {
            split.train.push_back(i);
        } else if (bucket < 9) {
            split.val.push_back(i);
        } else {
            split.test.push_back(i);
        }
    }
    return split;
}

void write_split_manifest(const std::string& path, const std::vector<SamplePair>& samples,
                          const SplitIndices& split) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write split manifest " + path);
    auto section = [&](const char* name, const std::vector<int>& ids) {
        os << "[" << name << "]\n";
        for (int i : ids) os << samples[i].id << "\n";
    };
    section("train", split.train);
    section("val", split.val);
    section("test", split.test);
}

}  // namespace dvx
