// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the test binaries: temporary directories, toy models
// and a straight-line double precision encoder used as an oracle.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "skillrank/encoder.hpp"

namespace skillrank::fixtures {

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("skillrank-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::filesystem::path data_dir() { return SKILLRANK_DATA_DIR; }

inline std::size_t fp32_bytes(const EncoderConfig& c) {
    const std::size_t d = c.d_model, f = c.d_ff;
    const std::size_t per_layer = 2 * d + 4 * d * d + 2 * d * f;
    return 4 * (static_cast<std::size_t>(c.vocab_size) * d + static_cast<std::size_t>(c.n_rel_buckets * c.n_heads) +
                2 * d + c.n_layers * per_layer);
}

inline EncoderConfig toy_config(std::int32_t d_model = 32, std::int32_t layers = 2, std::int32_t heads = 4,
                                std::int32_t vocab = 64) {
    EncoderConfig c;
    c.vocab_size = vocab;
    c.d_model = d_model;
    c.n_layers = layers;
    c.n_heads = heads;
    c.d_ff = 2 * d_model;
    return c;
}

inline std::vector<TokenId> random_ids(std::mt19937_64& rng, std::size_t len, std::int32_t vocab) {
    std::uniform_int_distribution<TokenId> pick(2, vocab - 1);
    std::vector<TokenId> ids(len);
    for (auto& id : ids) id = pick(rng);
    return ids;
}

// Double precision T5-style forward pass written without any library kernel.
// Returns len x d_model hidden states after the final norm.
inline std::vector<std::vector<double>> oracle_encode(const Model& m, const std::vector<TokenId>& ids) {
    const std::size_t len = ids.size();
    const auto d = static_cast<std::size_t>(m.config.d_model);
    const auto heads = static_cast<std::size_t>(m.config.n_heads);
    const std::size_t dh = d / heads;
    using Mat = std::vector<std::vector<double>>;

    auto norm = [&](const Mat& h, const std::vector<float>& gain) {
        Mat out(len, std::vector<double>(d));
        for (std::size_t i = 0; i < len; ++i) {
            double ss = 0.0;
            for (double v : h[i]) ss += v * v;
            const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + static_cast<double>(m.config.eps));
            for (std::size_t c = 0; c < d; ++c) out[i][c] = gain[c] * h[i][c] * inv;
        }
        return out;
    };
    auto linear = [&](const Mat& x, const Linear& layer) {
        const auto w = layer.weight_f32();
        const std::size_t in = layer.in_features(), out = layer.out_features();
        Mat y(x.size(), std::vector<double>(out, 0.0));
        for (std::size_t r = 0; r < x.size(); ++r)
            for (std::size_t o = 0; o < out; ++o)
                for (std::size_t k = 0; k < in; ++k) y[r][o] += x[r][k] * w[o * in + k];
        return y;
    };

    Mat h(len, std::vector<double>(d));
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t c = 0; c < d; ++c) h[i][c] = m.embedding(static_cast<std::size_t>(ids[i]), c);

    for (const auto& layer : m.layers) {
        Mat x = norm(h, layer.attn_norm);
        Mat q = linear(x, *layer.q), k = linear(x, *layer.k), v = linear(x, *layer.v);
        Mat ctx(len, std::vector<double>(d, 0.0));
        for (std::size_t hd = 0; hd < heads; ++hd) {
            for (std::size_t i = 0; i < len; ++i) {
                std::vector<double> s(len);
                double mx = -1e300;
                for (std::size_t j = 0; j < len; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) dot += q[i][c] * k[j][c];
                    const auto bucket = relative_position_bucket(static_cast<std::int32_t>(j) - static_cast<std::int32_t>(i),
                                                                 m.config.n_rel_buckets, m.config.rel_max_distance);
                    s[j] = dot + m.rel_bias(static_cast<std::size_t>(bucket), hd);
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t j = 0; j < len; ++j)
                    for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) ctx[i][c] += s[j] / z * v[j][c];
            }
        }
        Mat o = linear(ctx, *layer.o);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t c = 0; c < d; ++c) h[i][c] += o[i][c];
        x = norm(h, layer.ffn_norm);
        Mat f = linear(x, *layer.w1);
        for (auto& row : f)
            for (auto& e : row) e = std::max(e, 0.0);
        Mat f2 = linear(f, *layer.w2);
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t c = 0; c < d; ++c) h[i][c] += f2[i][c];
    }
    return norm(h, m.final_norm);
}

inline double oracle_score(const Model& m, const std::vector<TokenId>& ids) {
    const auto h = oracle_encode(m, ids);
    double s = 0.0;
    for (std::size_t c = 0; c < m.head.size(); ++c) s += m.head[c] * h[0][c];
    return s;
}

}  // namespace skillrank::fixtures
