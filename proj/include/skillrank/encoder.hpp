// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skillrank/kernels.hpp"
#include "skillrank/tensor_archive.hpp"
#include "skillrank/tokenizer.hpp"

namespace skillrank {

struct EncoderConfig {
    std::int32_t vocab_size = 0;
    std::int32_t d_model = 0;
    std::int32_t n_layers = 0;
    std::int32_t n_heads = 0;
    std::int32_t d_ff = 0;
    std::int32_t n_rel_buckets = 32;
    std::int32_t rel_max_distance = 128;
    float eps = 1e-6f;
    std::int32_t max_input_len = 512;

    std::int32_t d_head() const { return d_model / n_heads; }
    void validate() const;
    std::map<std::string, std::string> to_metadata() const;
    static EncoderConfig from_metadata(const std::map<std::string, std::string>& meta);

    bool operator==(const EncoderConfig&) const = default;
};

/// Bidirectional T5 bucketing of rel = key_pos - query_pos. Half the buckets
/// serve rel <= 0 and half rel > 0; within a half, distances below a quarter
/// of n_buckets are exact and larger ones are log-spaced up to max_distance,
/// beyond which they share the last bucket.
std::int32_t relative_position_bucket(std::int32_t rel, std::int32_t n_buckets = 32, std::int32_t max_distance = 128);

/// out_i = gain_i * x_i / sqrt(mean(x^2) + eps). out may alias x.
void rms_norm(std::span<const float> x, std::span<const float> gain, float eps, std::span<float> out);
std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps);

/// A linear map y = x W^T without bias. Implementations are immutable and may
/// be shared between models.
class Linear {
public:
    virtual ~Linear() = default;
    virtual std::size_t in_features() const = 0;
    virtual std::size_t out_features() const = 0;
    /// x: rows x in, y resized to rows x out.
    virtual void forward(const Matrix& x, Matrix& y) const = 0;
    /// Bytes this layer occupies when serialized, scales included.
    virtual std::size_t parameter_bytes() const = 0;
    virtual void save(TensorArchive& archive, const std::string& name) const = 0;
    /// Unpacked weights as FP32 (dequantized for quantized layers), out x in.
    virtual std::vector<float> weight_f32() const = 0;
};

class FloatLinear final : public Linear {
public:
    FloatLinear(std::vector<float> weight, std::size_t out, std::size_t in);

    std::size_t in_features() const override { return in_; }
    std::size_t out_features() const override { return out_; }
    void forward(const Matrix& x, Matrix& y) const override;
    std::size_t parameter_bytes() const override { return weight_.size() * sizeof(float); }
    void save(TensorArchive& archive, const std::string& name) const override;
    std::vector<float> weight_f32() const override { return weight_; }

private:
    std::size_t out_;
    std::size_t in_;
    std::vector<float> weight_;  // out x in
    PackedF32 packed_;
};

struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<TokenId> ids;     // batch x seq
    std::vector<std::uint8_t> mask;  // 1 on real tokens, 0 on padding

    TokenId id(std::size_t b, std::size_t s) const { return ids[b * seq + s]; }
    bool valid(std::size_t b, std::size_t s) const { return mask[b * seq + s] != 0; }
};

/// Right-pads to the longest sequence.
TokenBatch make_batch(const std::vector<std::vector<TokenId>>& sequences, TokenId pad_id);

struct HiddenStates {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::size_t d_model = 0;
    std::vector<float> values;  // batch x seq x d_model; zero at padded positions

    const float* at(std::size_t b, std::size_t s) const { return values.data() + (b * seq + s) * d_model; }
};

/// Receives the input of every linear layer ("layer.<i>.attn.q", ..., "layer.<i>.ffn.w2")
/// before it is applied.
using ActivationObserver = std::function<void(std::string_view layer, const Matrix& input)>;

struct EncoderLayer {
    std::vector<float> attn_norm;
    std::shared_ptr<const Linear> q, k, v, o;
    std::vector<float> ffn_norm;
    std::shared_ptr<const Linear> w1, w2;
};

/// T5-style encoder (pre-norm RMS normalization, relative position bias owned
/// by the first layer and shared by the rest, ReLU feed-forward, no biases,
/// unscaled dot-product attention) plus the scalar scoring head of the ranker.
class Model {
public:
    EncoderConfig config;
    Matrix embedding;  // vocab x d_model
    Matrix rel_bias;   // n_rel_buckets x n_heads
    std::vector<EncoderLayer> layers;
    std::vector<float> final_norm;
    std::vector<float> head;  // d_model
    std::string scheme = "none";

    /// Hidden states of one unpadded sequence (len x d_model). positions, when
    /// given, are the original token positions used for relative bias.
    Matrix encode_sequence(std::span<const TokenId> ids, std::span<const std::int32_t> positions = {},
                           const ActivationObserver* observer = nullptr) const;

    /// Throws std::invalid_argument when seq > max_input_len or an id is out of range.
    HiddenStates encode(const TokenBatch& batch, const ActivationObserver* observer = nullptr) const;

    /// Visits every linear layer slot in forward order; the callback may replace it.
    void for_each_linear(const std::function<void(const std::string&, std::shared_ptr<const Linear>&)>& fn);
    void for_each_linear(const std::function<void(const std::string&, const Linear&)>& fn) const;

    std::size_t parameter_count_fp32() const;
    /// Serialized bytes of all parameters including quantization scales.
    std::size_t parameter_bytes() const;

    TensorArchive to_archive() const;
};

/// Builds the layer named `name` (shape out x in) from an archive entry.
using LinearLoader =
    std::function<std::shared_ptr<const Linear>(ArchiveReader&, const std::string& name, std::size_t out, std::size_t in)>;

std::shared_ptr<const Linear> load_float_linear(ArchiveReader& reader, const std::string& name, std::size_t out,
                                                std::size_t in);

/// Missing or mis-shaped tensors raise ArchiveError naming the tensor; unused
/// tensors are logged as warnings and listed in `unused` when given.
Model model_from_archive(const TensorArchive& archive, const EncoderConfig& config,
                         const LinearLoader& loader = load_float_linear, std::vector<std::string>* unused = nullptr);
Model load_weights(const std::filesystem::path& path, const EncoderConfig& config);

/// Random initialization with T5-like scales; deterministic for a seed.
Model init_random_model(const EncoderConfig& config, std::uint64_t seed);

}  // namespace skillrank
