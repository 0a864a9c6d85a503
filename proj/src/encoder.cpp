// SPDX-License-Identifier: Apache-2.0
#include "skillrank/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace skillrank {

// ---------------------------------------------------------------------------
// Config

void EncoderConfig::validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || n_rel_buckets <= 0 ||
        rel_max_distance <= 0 || max_input_len <= 0 || !(eps > 0.0f))
        throw std::invalid_argument("encoder config values must be positive");
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
    if (n_rel_buckets % 4 != 0) throw std::invalid_argument("n_rel_buckets must be a multiple of 4");
}

std::map<std::string, std::string> EncoderConfig::to_metadata() const {
    return {
        {"vocab_size", std::to_string(vocab_size)},
        {"d_model", std::to_string(d_model)},
        {"n_layers", std::to_string(n_layers)},
        {"n_heads", std::to_string(n_heads)},
        {"d_ff", std::to_string(d_ff)},
        {"n_rel_buckets", std::to_string(n_rel_buckets)},
        {"rel_max_distance", std::to_string(rel_max_distance)},
        {"eps", std::to_string(static_cast<double>(eps))},
        {"max_input_len", std::to_string(max_input_len)},
    };
}

EncoderConfig EncoderConfig::from_metadata(const std::map<std::string, std::string>& meta) {
    auto get = [&](const char* key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end()) throw ArchiveError(std::string("archive metadata lacks ") + key);
        return it->second;
    };
    EncoderConfig c;
    c.vocab_size = std::stoi(get("vocab_size"));
    c.d_model = std::stoi(get("d_model"));
    c.n_layers = std::stoi(get("n_layers"));
    c.n_heads = std::stoi(get("n_heads"));
    c.d_ff = std::stoi(get("d_ff"));
    c.n_rel_buckets = std::stoi(get("n_rel_buckets"));
    c.rel_max_distance = std::stoi(get("rel_max_distance"));
    c.eps = std::stof(get("eps"));
    c.max_input_len = std::stoi(get("max_input_len"));
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Building blocks

std::int32_t relative_position_bucket(std::int32_t rel, std::int32_t n_buckets, std::int32_t max_distance) {
    const std::int32_t half = n_buckets / 2;
    const std::int32_t max_exact = half / 2;
    const std::int32_t base = rel > 0 ? half : 0;
    const std::int32_t dist = rel < 0 ? -rel : rel;
    if (dist < max_exact) return base + dist;
    // The epsilon keeps exact powers of the log base (e.g. 16 -> 10) from
    // rounding down.
    const double scaled = std::log(static_cast<double>(dist) / max_exact) /
                          std::log(static_cast<double>(max_distance) / max_exact) * (half - max_exact);
    const auto large = max_exact + static_cast<std::int32_t>(std::floor(scaled + 1e-9));
    return base + std::min(large, half - 1);
}

void rms_norm(std::span<const float> x, std::span<const float> gain, float eps, std::span<float> out) {
    if (x.size() != gain.size() || out.size() != x.size()) throw std::invalid_argument("rms_norm: length mismatch");
    float sq = 0.0f;
    for (float v : x) sq += v * v;
    const float inv = 1.0f / std::sqrt(sq / static_cast<float>(x.size()) + eps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * (x[i] * inv);
}

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps) {
    std::vector<float> out(x.size());
    rms_norm(x, gain, eps, out);
    return out;
}

FloatLinear::FloatLinear(std::vector<float> weight, std::size_t out, std::size_t in)
    : out_(out), in_(in), weight_(std::move(weight)), packed_(pack_f32(weight_, out, in)) {}

void FloatLinear::forward(const Matrix& x, Matrix& y) const {
    if (x.cols != in_) throw std::invalid_argument("linear input width mismatch");
    y.resize(x.rows, out_);
    gemm_f32(x.data.data(), x.rows, packed_, y.data.data());
}

void FloatLinear::save(TensorArchive& archive, const std::string& name) const {
    archive.put_f32(name, {static_cast<std::int64_t>(out_), static_cast<std::int64_t>(in_)}, weight_);
}

TokenBatch make_batch(const std::vector<std::vector<TokenId>>& sequences, TokenId pad_id) {
    TokenBatch b;
    b.batch = sequences.size();
    for (const auto& s : sequences) b.seq = std::max(b.seq, s.size());
    b.ids.assign(b.batch * b.seq, pad_id);
    b.mask.assign(b.batch * b.seq, 0);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        std::copy(sequences[i].begin(), sequences[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.seq));
        std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(i * b.seq), sequences[i].size(), 1);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

void apply_linear(const Linear& layer, const std::string& name, const Matrix& x, Matrix& y,
                  const ActivationObserver* observer) {
    if (observer) (*observer)(name, x);
    layer.forward(x, y);
}

void add_inplace(Matrix& h, const Matrix& delta) {
    for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += delta.data[i];
}

void rms_norm_rows(const Matrix& h, std::span<const float> gain, float eps, Matrix& out) {
    out.resize(h.rows, h.cols);
    for (std::size_t r = 0; r < h.rows; ++r)
        rms_norm({h.row(r), h.cols}, gain, eps, {out.row(r), out.cols});
}

// Relative position bias of every (query, key) pair, per head. With
// consecutive positions a row is a window into one table indexed by key -
// query offset; otherwise the full len x len matrix is stored.
struct BiasTable {
    std::vector<float> data;
    std::size_t head_stride = 0;
    std::ptrdiff_t origin = 0;
    std::ptrdiff_t row_step = 0;

    const float* row(std::size_t h, std::size_t i) const {
        return data.data() + static_cast<std::ptrdiff_t>(h * head_stride) + origin +
               static_cast<std::ptrdiff_t>(i) * row_step;
    }
};

BiasTable make_bias_table(std::span<const std::int32_t> positions, std::size_t len, const Matrix& rel_bias,
                          const EncoderConfig& config) {
    const std::size_t heads = rel_bias.cols;
    bool consecutive = true;
    for (std::size_t i = 1; i < positions.size(); ++i) consecutive = consecutive && positions[i] == positions[i - 1] + 1;
    BiasTable t;
    if (consecutive) {
        const std::size_t width = 2 * len - 1;
        t.head_stride = width;
        t.origin = static_cast<std::ptrdiff_t>(len - 1);
        t.row_step = -1;
        t.data.resize(heads * width);
        for (std::size_t o = 0; o < width; ++o) {
            const auto rel = static_cast<std::int32_t>(o) - static_cast<std::int32_t>(len - 1);
            const auto bucket = static_cast<std::size_t>(
                relative_position_bucket(rel, config.n_rel_buckets, config.rel_max_distance));
            for (std::size_t h = 0; h < heads; ++h) t.data[h * width + o] = rel_bias(bucket, h);
        }
        return t;
    }
    t.head_stride = len * len;
    t.row_step = static_cast<std::ptrdiff_t>(len);
    t.data.resize(heads * len * len);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j) {
            const auto bucket = static_cast<std::size_t>(relative_position_bucket(
                positions[j] - positions[i], config.n_rel_buckets, config.rel_max_distance));
            for (std::size_t h = 0; h < heads; ++h) t.data[h * len * len + i * len + j] = rel_bias(bucket, h);
        }
    return t;
}

// Multi-head attention over one sequence; q, k, v are len x d_model. Scores
// are q k^T plus the relative bias, without 1/sqrt(d_head) scaling.
void attention(const Matrix& q, const Matrix& k, const Matrix& v, const BiasTable& bias, std::size_t n_heads,
               Matrix& ctx) {
    const std::size_t len = q.rows;
    const std::size_t d = q.cols;
    const std::size_t dh = d / n_heads;
    ctx.resize(len, d);

    // q_h as rows, k_h and v_h as packed right-hand operands of gemm_f32
    std::vector<float> qh(len * dh), ch(len * dh);
    Matrix scores(len, len);
    PackedF32 kp, vp;
    kp.in = dh;
    kp.out = len;
    kp.out_padded = (len + 63) / 64 * 64;
    kp.data.assign(dh * kp.out_padded, 0.0f);
    vp.in = len;
    vp.out = dh;
    vp.out_padded = (dh + 63) / 64 * 64;
    vp.data.assign(len * vp.out_padded, 0.0f);

    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t j = 0; j < len; ++j) {
            const float* qj = q.row(j) + off;
            const float* kj = k.row(j) + off;
            const float* vj = v.row(j) + off;
            std::copy_n(qj, dh, qh.data() + j * dh);
            for (std::size_t c = 0; c < dh; ++c) kp.data[c * kp.out_padded + j] = kj[c];
            std::copy_n(vj, dh, vp.data.data() + j * vp.out_padded);
        }
        gemm_f32(qh.data(), len, kp, scores.data.data());
        for (std::size_t i = 0; i < len; ++i) {
            float* srow = scores.row(i);
            const float* brow = bias.row(h, i);
            for (std::size_t j = 0; j < len; ++j) srow[j] += brow[j];
            const float inv = 1.0f / exp_normalize(srow, len);
            for (std::size_t j = 0; j < len; ++j) srow[j] *= inv;
        }
        gemm_f32(scores.data.data(), len, vp, ch.data());
        for (std::size_t i = 0; i < len; ++i) std::copy_n(ch.data() + i * dh, dh, ctx.row(i) + off);
    }
}

}  // namespace

Matrix Model::encode_sequence(std::span<const TokenId> ids, std::span<const std::int32_t> positions,
                              const ActivationObserver* observer) const {
    const std::size_t len = ids.size();
    const auto d = static_cast<std::size_t>(config.d_model);
    if (len > static_cast<std::size_t>(config.max_input_len))
        throw std::invalid_argument("sequence of " + std::to_string(len) + " tokens exceeds max_input_len " +
                                    std::to_string(config.max_input_len) + "; truncate first");
    if (!positions.empty() && positions.size() != len) throw std::invalid_argument("positions length mismatch");

    Matrix h(len, d);
    for (std::size_t i = 0; i < len; ++i) {
        if (ids[i] < 0 || ids[i] >= config.vocab_size)
            throw std::invalid_argument("token id " + std::to_string(ids[i]) + " out of vocabulary range");
        std::copy_n(embedding.row(static_cast<std::size_t>(ids[i])), d, h.row(i));
    }
    if (len == 0) return h;

    std::vector<std::int32_t> own_positions;
    if (positions.empty()) {
        own_positions.resize(len);
        for (std::size_t i = 0; i < len; ++i) own_positions[i] = static_cast<std::int32_t>(i);
        positions = own_positions;
    }
    const BiasTable bias = make_bias_table(positions, len, rel_bias, config);

    Matrix x, q, k, v, ctx, out, ff;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const std::string prefix = "layer." + std::to_string(l) + ".";
        rms_norm_rows(h, layer.attn_norm, config.eps, x);
        apply_linear(*layer.q, prefix + "attn.q", x, q, observer);
        apply_linear(*layer.k, prefix + "attn.k", x, k, observer);
        apply_linear(*layer.v, prefix + "attn.v", x, v, observer);
        attention(q, k, v, bias, static_cast<std::size_t>(config.n_heads), ctx);
        apply_linear(*layer.o, prefix + "attn.o", ctx, out, observer);
        add_inplace(h, out);

        rms_norm_rows(h, layer.ffn_norm, config.eps, x);
        apply_linear(*layer.w1, prefix + "ffn.w1", x, ff, observer);
        for (auto& val : ff.data) val = std::max(val, 0.0f);
        apply_linear(*layer.w2, prefix + "ffn.w2", ff, out, observer);
        add_inplace(h, out);
    }
    rms_norm_rows(h, final_norm, config.eps, x);
    return x;
}

HiddenStates Model::encode(const TokenBatch& batch, const ActivationObserver* observer) const {
    if (batch.seq > static_cast<std::size_t>(config.max_input_len))
        throw std::invalid_argument("batch sequence length " + std::to_string(batch.seq) + " exceeds max_input_len " +
                                    std::to_string(config.max_input_len) + "; truncate first");
    HiddenStates out;
    out.batch = batch.batch;
    out.seq = batch.seq;
    out.d_model = static_cast<std::size_t>(config.d_model);
    out.values.assign(out.batch * out.seq * out.d_model, 0.0f);
    std::vector<TokenId> ids;
    std::vector<std::int32_t> positions;
    for (std::size_t b = 0; b < batch.batch; ++b) {
        ids.clear();
        positions.clear();
        for (std::size_t s = 0; s < batch.seq; ++s) {
            if (!batch.valid(b, s)) continue;
            ids.push_back(batch.id(b, s));
            positions.push_back(static_cast<std::int32_t>(s));
        }
        const Matrix hidden = encode_sequence(ids, positions, observer);
        for (std::size_t i = 0; i < ids.size(); ++i)
            std::copy_n(hidden.row(i), out.d_model,
                        out.values.data() + (b * out.seq + static_cast<std::size_t>(positions[i])) * out.d_model);
    }
    return out;
}

void Model::for_each_linear(const std::function<void(const std::string&, std::shared_ptr<const Linear>&)>& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        auto& layer = layers[l];
        fn(p + "attn.q", layer.q);
        fn(p + "attn.k", layer.k);
        fn(p + "attn.v", layer.v);
        fn(p + "attn.o", layer.o);
        fn(p + "ffn.w1", layer.w1);
        fn(p + "ffn.w2", layer.w2);
    }
}

void Model::for_each_linear(const std::function<void(const std::string&, const Linear&)>& fn) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        const auto& layer = layers[l];
        fn(p + "attn.q", *layer.q);
        fn(p + "attn.k", *layer.k);
        fn(p + "attn.v", *layer.v);
        fn(p + "attn.o", *layer.o);
        fn(p + "ffn.w1", *layer.w1);
        fn(p + "ffn.w2", *layer.w2);
    }
}

std::size_t Model::parameter_count_fp32() const {
    std::size_t n = embedding.data.size() + rel_bias.data.size() + final_norm.size() + head.size();
    for (const auto& layer : layers) n += layer.attn_norm.size() + layer.ffn_norm.size();
    return n;
}

std::size_t Model::parameter_bytes() const {
    std::size_t bytes = parameter_count_fp32() * sizeof(float);
    for_each_linear([&](const std::string&, const Linear& layer) { bytes += layer.parameter_bytes(); });
    return bytes;
}

TensorArchive Model::to_archive() const {
    TensorArchive a;
    a.metadata() = config.to_metadata();
    a.metadata()["scheme"] = scheme;
    const auto d = static_cast<std::int64_t>(config.d_model);
    a.put_f32("embed", {config.vocab_size, d}, embedding.data);
    a.put_f32("layer.0.rel_bias", {config.n_rel_buckets, config.n_heads}, rel_bias.data);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        a.put_f32(p + "attn_norm", {d}, layers[l].attn_norm);
        a.put_f32(p + "ffn_norm", {d}, layers[l].ffn_norm);
    }
    a.put_f32("final_norm", {d}, final_norm);
    a.put_f32("head", {d}, head);
    for_each_linear([&](const std::string& name, const Linear& layer) { layer.save(a, name); });
    return a;
}

// ---------------------------------------------------------------------------
// Loading

std::shared_ptr<const Linear> load_float_linear(ArchiveReader& reader, const std::string& name, std::size_t out,
                                                std::size_t in) {
    auto w = reader.f32(name, {static_cast<std::int64_t>(out), static_cast<std::int64_t>(in)});
    return std::make_shared<FloatLinear>(std::vector<float>(w.begin(), w.end()), out, in);
}

Model model_from_archive(const TensorArchive& archive, const EncoderConfig& config, const LinearLoader& loader,
                         std::vector<std::string>* unused) {
    config.validate();
    ArchiveReader reader(archive);
    Model m;
    m.config = config;
    if (auto it = archive.metadata().find("scheme"); it != archive.metadata().end()) m.scheme = it->second;
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto dd = static_cast<std::int64_t>(d);
    const auto ff = static_cast<std::size_t>(config.d_ff);

    auto to_vec = [](std::span<const float> s) { return std::vector<float>(s.begin(), s.end()); };
    m.embedding.rows = static_cast<std::size_t>(config.vocab_size);
    m.embedding.cols = d;
    m.embedding.data = to_vec(reader.f32("embed", {config.vocab_size, dd}));
    m.rel_bias.rows = static_cast<std::size_t>(config.n_rel_buckets);
    m.rel_bias.cols = static_cast<std::size_t>(config.n_heads);
    m.rel_bias.data = to_vec(reader.f32("layer.0.rel_bias", {config.n_rel_buckets, config.n_heads}));
    for (std::int32_t l = 0; l < config.n_layers; ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        EncoderLayer layer;
        layer.attn_norm = to_vec(reader.f32(p + "attn_norm", {dd}));
        layer.q = loader(reader, p + "attn.q", d, d);
        layer.k = loader(reader, p + "attn.k", d, d);
        layer.v = loader(reader, p + "attn.v", d, d);
        layer.o = loader(reader, p + "attn.o", d, d);
        layer.ffn_norm = to_vec(reader.f32(p + "ffn_norm", {dd}));
        layer.w1 = loader(reader, p + "ffn.w1", ff, d);
        layer.w2 = loader(reader, p + "ffn.w2", d, ff);
        m.layers.push_back(std::move(layer));
    }
    m.final_norm = to_vec(reader.f32("final_norm", {dd}));
    m.head = to_vec(reader.f32("head", {dd}));

    auto leftovers = reader.unused();
    for (const auto& name : leftovers) spdlog::warn("ignoring unused tensor {} in weight archive", name);
    if (unused) *unused = std::move(leftovers);
    return m;
}

Model load_weights(const std::filesystem::path& path, const EncoderConfig& config) {
    return model_from_archive(TensorArchive::load(path), config);
}

Model init_random_model(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto ff = static_cast<std::size_t>(config.d_ff);
    const auto dh = static_cast<std::size_t>(config.d_head());
    auto normal = [&](std::size_t n, double stddev) {
        std::normal_distribution<float> dist(0.0f, static_cast<float>(stddev));
        std::vector<float> v(n);
        for (auto& x : v) x = dist(rng);
        return v;
    };
    auto linear = [&](std::size_t out, std::size_t in, double stddev) {
        return std::make_shared<FloatLinear>(normal(out * in, stddev), out, in);
    };

    Model m;
    m.config = config;
    m.embedding.rows = static_cast<std::size_t>(config.vocab_size);
    m.embedding.cols = d;
    m.embedding.data = normal(m.embedding.rows * d, 1.0);
    m.rel_bias.rows = static_cast<std::size_t>(config.n_rel_buckets);
    m.rel_bias.cols = static_cast<std::size_t>(config.n_heads);
    m.rel_bias.data = normal(m.rel_bias.rows * m.rel_bias.cols, 1.0 / std::sqrt(static_cast<double>(d)));
    for (std::int32_t l = 0; l < config.n_layers; ++l) {
        EncoderLayer layer;
        layer.attn_norm.assign(d, 1.0f);
        // Attention is unscaled, so the query projection carries 1/sqrt(d_head).
        layer.q = linear(d, d, 1.0 / std::sqrt(static_cast<double>(d * dh)));
        layer.k = linear(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
        layer.v = linear(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
        layer.o = linear(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
        layer.ffn_norm.assign(d, 1.0f);
        layer.w1 = linear(ff, d, 1.0 / std::sqrt(static_cast<double>(d)));
        layer.w2 = linear(d, ff, 1.0 / std::sqrt(static_cast<double>(ff)));
        m.layers.push_back(std::move(layer));
    }
    m.final_norm.assign(d, 1.0f);
    m.head = normal(d, 1.0 / std::sqrt(static_cast<double>(d)));
    return m;
}

}  // namespace skillrank
