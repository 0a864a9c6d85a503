// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skillrank/encoder.hpp"
#include "skillrank/kernels.hpp"

namespace skillrank {

enum class QuantScheme { none, dynamic, static_calibrated, smoothquant };
enum class Granularity { per_tensor, per_channel };

std::string_view to_string(QuantScheme scheme);
/// "none", "fp32" (alias of none), "dynamic", "static", "smoothquant".
QuantScheme parse_scheme(std::string_view text);

/// Largest inner dimension for which int32 accumulation of offset u8 x s8
/// products cannot overflow: 255 * 127 * 66000 < 2^31.
inline constexpr std::size_t kMaxInnerDim = 66000;

/// Symmetric INT8 tensor (zero point 0). Per-channel scales are per row,
/// which for a weight matrix stored out x in means per output channel.
struct QuantizedTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> data;
    std::vector<float> scales;  // 1 entry (per tensor) or `rows` entries
    Granularity granularity = Granularity::per_tensor;

    static constexpr std::int32_t zero_point() { return 0; }
    float scale_for_row(std::size_t r) const { return granularity == Granularity::per_tensor ? scales[0] : scales[r]; }
};

/// Rounds x * inv_scale half away from zero and clamps to [-127, 127].
void quantize_values(std::span<const float> x, float inv_scale, std::span<std::int8_t> out);

/// scale = max|x| / 127 per group (1 for an all-zero group); q = round(x / scale).
/// Throws std::invalid_argument on non-finite input.
QuantizedTensor quantize_symmetric(std::span<const float> x, std::size_t rows, std::size_t cols, Granularity granularity);

/// Per-tensor quantization against a fixed absolute maximum; values beyond it clamp.
QuantizedTensor quantize_with_max(std::span<const float> x, std::size_t rows, std::size_t cols, float abs_max);

std::vector<float> dequantize(const QuantizedTensor& t);

/// x (rows x in, per-tensor) times w^T (w: out x in, per-tensor or per-row).
/// Products accumulate exactly in int32 and are rescaled once per output.
Matrix quantized_matmul(const QuantizedTensor& x, const QuantizedTensor& w);

struct QuantConfig {
    QuantScheme scheme = QuantScheme::none;
    double alpha = 0.5;
    Granularity weight_granularity = Granularity::per_channel;
    std::size_t calibration_size = 0;  // 0 = use every calibration batch given
    /// Static activation range: 100 = absolute max, otherwise this percentile of |x|.
    double calibration_percentile = 100.0;
    /// Smoothquant only: migrate scales but keep FP32 weights and activations.
    bool smooth_only = false;

    void validate() const;
};

struct LayerActivationStats {
    float tensor_max = 0.0f;
    std::vector<float> channel_max;
    std::vector<float> samples;  // |x| values, only kept for percentile calibration
};

struct CalibrationStats {
    std::map<std::string, LayerActivationStats> layers;
    std::size_t batches = 0;

    /// Range used for static activation quantization of one layer.
    float activation_range(const std::string& layer, double percentile) const;
};

/// Running max of |activation| at every linear-layer input, per tensor and
/// per input channel. Throws std::invalid_argument on an empty input set.
CalibrationStats calibrate(const Model& model, std::span<const TokenBatch> inputs, const QuantConfig& config);

/// s_j = max(act_max_j, 1e-8)^alpha / max(w_max_j, 1e-8)^(1 - alpha).
std::vector<float> smoothquant_scales(std::span<const float> act_max, std::span<const float> w_max, double alpha);

/// INT8 linear layer: offline per-channel (or per-tensor) weights, per-tensor
/// activations quantized either from the runtime maximum or a calibrated one.
/// An optional per-input-channel divisor implements smoothquant migration.
class Int8Linear final : public Linear {
public:
    Int8Linear(QuantizedTensor weight, std::optional<float> static_abs_max, std::vector<float> smooth_divisor);

    std::size_t in_features() const override { return weight_.cols; }
    std::size_t out_features() const override { return weight_.rows; }
    void forward(const Matrix& x, Matrix& y) const override;
    std::size_t parameter_bytes() const override;
    void save(TensorArchive& archive, const std::string& name) const override;
    std::vector<float> weight_f32() const override { return dequantize(weight_); }

    const QuantizedTensor& weight() const { return weight_; }
    const std::optional<float>& static_abs_max() const { return static_abs_max_; }
    const std::vector<float>& smooth_divisor() const { return smooth_; }

private:
    QuantizedTensor weight_;
    PackedI8 packed_;
    std::optional<float> static_abs_max_;
    std::vector<float> smooth_;
};

/// FP32 layer with smoothing scales folded into the weight columns and the
/// matching divisor applied to activations at runtime.
class SmoothedLinear final : public Linear {
public:
    SmoothedLinear(std::vector<float> folded_weight, std::size_t out, std::size_t in, std::vector<float> divisor);

    std::size_t in_features() const override { return inner_.in_features(); }
    std::size_t out_features() const override { return inner_.out_features(); }
    void forward(const Matrix& x, Matrix& y) const override;
    std::size_t parameter_bytes() const override { return inner_.parameter_bytes() + divisor_.size() * sizeof(float); }
    void save(TensorArchive& archive, const std::string& name) const override;
    std::vector<float> weight_f32() const override { return inner_.weight_f32(); }

private:
    FloatLinear inner_;
    std::vector<float> divisor_;
};

/// Replaces every linear layer according to config.scheme. none returns the
/// model unchanged; static and smoothquant need stats covering every layer
/// (std::invalid_argument otherwise).
Model apply_quantization(const Model& model, const QuantConfig& config, const CalibrationStats* stats = nullptr);

/// Total serialized parameter bytes, scales included.
std::size_t model_size_bytes(const Model& model);

/// Loads FP32 or quantized archives; the config comes from archive metadata.
Model load_model(const std::filesystem::path& path);
Model model_from_any_archive(const TensorArchive& archive);
void save_model(const Model& model, const std::filesystem::path& path);

}  // namespace skillrank
