// SPDX-License-Identifier: Apache-2.0
#include "dvx/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace dvx {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

float get_f32(std::istream& is) {
    const std::uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

void write_record(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, 4);
    for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) put_f32(os, static_cast<float>(v));
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model,
                     const std::map<std::string, Tensor>* ema_shadow) {
    std::vector<std::pair<std::string, const Tensor*>> records;
    model.for_each_param(
        [&](const std::string& n, Tensor& t, bool) { records.emplace_back(n, &t); });
    model.for_each_buffer([&](const std::string& n, Tensor& t) { records.emplace_back(n, &t); });
    std::vector<std::pair<std::string, Tensor>> ema_records;
    if (ema_shadow != nullptr) {
        for (const auto& [n, t] : *ema_shadow) ema_records.emplace_back("ema/" + n, t);
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write("DVXF", 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(records.size() + ema_records.size()));
    for (const auto& [n, t] : records) write_record(os, n, *t);
    for (const auto& [n, t] : ema_records) write_record(os, n, t);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

LoadedCheckpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DVXF", 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = get_u32(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(is);
    LoadedCheckpoint out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = get_u32(is);
        if (rank != 4) throw std::runtime_error("checkpoint: unsupported rank");
        int dims[4];
        for (int& d : dims) d = static_cast<int>(get_u32(is));
        Tensor t(dims[0], dims[1], dims[2], dims[3]);
        for (double& v : t.data) v = static_cast<double>(get_f32(is));
        if (name.rfind("ema/", 0) == 0) {
            out.ema_shadow.emplace(name.substr(4), std::move(t));
        } else {
            out.records.emplace(std::move(name), std::move(t));
        }
    }
    return out;
}

void load_checkpoint(const std::string& path, Model& model,
                     std::map<std::string, Tensor>* ema_shadow) {
    LoadedCheckpoint ck = read_checkpoint(path);
    auto apply = [&](const std::string& n, Tensor& t) {
        auto it = ck.records.find(n);
        if (it == ck.records.end()) {
            throw std::runtime_error("checkpoint: missing record " + n);
        }
        if (it->second.shape != t.shape) {
            throw std::runtime_error("checkpoint: shape mismatch for " + n);
        }
        t = it->second;
    };
    model.for_each_param([&](const std::string& n, Tensor& t, bool) { apply(n, t); });
    model.for_each_buffer([&](const std::string& n, Tensor& t) { apply(n, t); });
    if (ema_shadow != nullptr) *ema_shadow = std::move(ck.ema_shadow);
}

}  // namespace dvx
