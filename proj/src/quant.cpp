// SPDX-License-Identifier: Apache-2.0
#include "skillrank/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace skillrank {

std::string_view to_string(QuantScheme scheme) {
    switch (scheme) {
    case QuantScheme::none: return "none";
    case QuantScheme::dynamic: return "dynamic";
    case QuantScheme::static_calibrated: return "static";
    case QuantScheme::smoothquant: return "smoothquant";
    }
    return "none";
}

QuantScheme parse_scheme(std::string_view text) {
    if (text == "none" || text == "fp32") return QuantScheme::none;
    if (text == "dynamic") return QuantScheme::dynamic;
    if (text == "static") return QuantScheme::static_calibrated;
    if (text == "smoothquant") return QuantScheme::smoothquant;
    throw std::invalid_argument("unknown quantization scheme: " + std::string(text));
}

void QuantConfig::validate() const {
    if (scheme == QuantScheme::smoothquant && !(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("smoothquant alpha must lie in (0,1)");
    if (!(calibration_percentile > 0.0 && calibration_percentile <= 100.0))
        throw std::invalid_argument("calibration percentile must lie in (0,100]");
}

// ---------------------------------------------------------------------------
// Tensor quantization

void quantize_values(std::span<const float> x, float inv_scale, std::span<std::int8_t> out) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x[i] * inv_scale;
        float q = std::trunc(v);
        const float frac = v - q;  // exact
        q += frac >= 0.5f ? 1.0f : (frac <= -0.5f ? -1.0f : 0.0f);
        q = std::clamp(q, -127.0f, 127.0f);
        out[i] = static_cast<std::int8_t>(q);
    }
}

namespace {

void check_finite(std::span<const float> x) {
    for (float v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("cannot quantize a non-finite value");
}

}  // namespace

QuantizedTensor quantize_symmetric(std::span<const float> x, std::size_t rows, std::size_t cols,
                                   Granularity granularity) {
    if (x.size() != rows * cols) throw std::invalid_argument("quantize_symmetric: size does not match shape");
    check_finite(x);
    QuantizedTensor t;
    t.rows = rows;
    t.cols = cols;
    t.granularity = granularity;
    t.data.resize(x.size());
    const std::size_t groups = granularity == Granularity::per_tensor ? 1 : rows;
    const std::size_t group_size = granularity == Granularity::per_tensor ? x.size() : cols;
    t.scales.resize(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        auto values = x.subspan(g * group_size, group_size);
        const float m = abs_max(values.data(), values.size());
        const float scale = m > 0.0f ? m / 127.0f : 1.0f;
        const float inv = m > 0.0f ? 127.0f / m : 1.0f;
        t.scales[g] = scale;
        quantize_values(values, inv, std::span<std::int8_t>(t.data).subspan(g * group_size, group_size));
    }
    return t;
}

QuantizedTensor quantize_with_max(std::span<const float> x, std::size_t rows, std::size_t cols, float abs_max_value) {
    if (x.size() != rows * cols) throw std::invalid_argument("quantize_with_max: size does not match shape");
    check_finite(x);
    QuantizedTensor t;
    t.rows = rows;
    t.cols = cols;
    t.granularity = Granularity::per_tensor;
    t.data.resize(x.size());
    const bool positive = abs_max_value > 0.0f;
    t.scales = {positive ? abs_max_value / 127.0f : 1.0f};
    quantize_values(x, positive ? 127.0f / abs_max_value : 1.0f, t.data);
    return t;
}

std::vector<float> dequantize(const QuantizedTensor& t) {
    std::vector<float> out(t.data.size());
    for (std::size_t r = 0; r < t.rows; ++r) {
        const float s = t.scale_for_row(r);
        for (std::size_t c = 0; c < t.cols; ++c) out[r * t.cols + c] = static_cast<float>(t.data[r * t.cols + c]) * s;
    }
    return out;
}

Matrix quantized_matmul(const QuantizedTensor& x, const QuantizedTensor& w) {
    if (x.cols != w.cols) throw std::invalid_argument("quantized_matmul: inner dimensions differ");
    if (x.granularity != Granularity::per_tensor) throw std::invalid_argument("activations must be per-tensor");
    if (x.cols > kMaxInnerDim) throw std::invalid_argument("inner dimension too large for int32 accumulation");
    Matrix y(x.rows, w.rows);
    const float sx = x.scales[0];
    for (std::size_t r = 0; r < x.rows; ++r) {
        const std::int8_t* xr = x.data.data() + r * x.cols;
        for (std::size_t o = 0; o < w.rows; ++o) {
            const std::int8_t* wo = w.data.data() + o * w.cols;
            std::int32_t acc = 0;
            for (std::size_t k = 0; k < x.cols; ++k) acc += static_cast<std::int32_t>(xr[k]) * wo[k];
            y(r, o) = static_cast<float>(acc) * (sx * w.scale_for_row(o));
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Calibration and smoothing

float CalibrationStats::activation_range(const std::string& layer, double percentile) const {
    auto it = layers.find(layer);
    if (it == layers.end()) throw std::invalid_argument("missing calibration stats for layer " + layer);
    const auto& s = it->second;
    if (percentile >= 100.0 || s.samples.empty()) return s.tensor_max;
    std::vector<float> v = s.samples;
    const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(v.size()))) - 1;
    const auto idx = std::min(rank, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
    return v[idx];
}

CalibrationStats calibrate(const Model& model, std::span<const TokenBatch> inputs, const QuantConfig& config) {
    if (inputs.empty()) throw std::invalid_argument("calibration needs at least one input batch");
    const bool keep_samples = config.calibration_percentile < 100.0;
    CalibrationStats stats;
    ActivationObserver observer = [&](std::string_view layer, const Matrix& x) {
        auto& s = stats.layers[std::string(layer)];
        if (s.channel_max.empty()) s.channel_max.assign(x.cols, 0.0f);
        for (std::size_t r = 0; r < x.rows; ++r) {
            for (std::size_t c = 0; c < x.cols; ++c) {
                const float a = std::fabs(x(r, c));
                s.channel_max[c] = std::max(s.channel_max[c], a);
                s.tensor_max = std::max(s.tensor_max, a);
                if (keep_samples) s.samples.push_back(a);
            }
        }
    };
    const std::size_t n = config.calibration_size > 0 ? std::min(config.calibration_size, inputs.size()) : inputs.size();
    for (std::size_t i = 0; i < n; ++i) {
        model.encode(inputs[i], &observer);
        ++stats.batches;
    }
    return stats;
}

std::vector<float> smoothquant_scales(std::span<const float> act_max, std::span<const float> w_max, double alpha) {
    if (act_max.size() != w_max.size()) throw std::invalid_argument("smoothquant_scales: length mismatch");
    constexpr double kFloor = 1e-8;
    std::vector<float> s(act_max.size());
    for (std::size_t j = 0; j < s.size(); ++j) {
        if (act_max[j] < 0.0f || w_max[j] < 0.0f) throw std::invalid_argument("smoothquant_scales: negative maximum");
        const double a = std::max(static_cast<double>(act_max[j]), kFloor);
        const double w = std::max(static_cast<double>(w_max[j]), kFloor);
        s[j] = static_cast<float>(std::pow(a, alpha) / std::pow(w, 1.0 - alpha));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Quantized layers

Int8Linear::Int8Linear(QuantizedTensor weight, std::optional<float> static_abs_max, std::vector<float> smooth_divisor)
    : weight_(std::move(weight)),
      packed_(pack_i8(weight_.data, weight_.rows, weight_.cols)),
      static_abs_max_(static_abs_max),
      smooth_(std::move(smooth_divisor)) {
    if (weight_.cols > kMaxInnerDim) throw std::invalid_argument("inner dimension too large for int32 accumulation");
    if (!smooth_.empty() && smooth_.size() != weight_.cols) throw std::invalid_argument("smoothing divisor length mismatch");
}

void Int8Linear::forward(const Matrix& x, Matrix& y) const {
    const std::size_t in = weight_.cols;
    const std::size_t out = weight_.rows;
    if (x.cols != in) throw std::invalid_argument("linear input width mismatch");
    const std::size_t rows = x.rows;

    std::vector<float> smoothed;
    std::span<const float> src = x.data;
    if (!smooth_.empty()) {
        smoothed.resize(x.data.size());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < in; ++c) smoothed[r * in + c] = x(r, c) / smooth_[c];
        src = smoothed;
    }

    const float range = static_abs_max_ ? *static_abs_max_ : abs_max(src.data(), src.size());
    const float sx = range > 0.0f ? range / 127.0f : 1.0f;
    const float inv = range > 0.0f ? 127.0f / range : 1.0f;

    thread_local std::vector<std::uint8_t> xq;
    thread_local std::vector<float> combined;
    xq.assign(rows * packed_.in_padded, 128);
    for (std::size_t r = 0; r < rows; ++r) quantize_u8(src.data() + r * in, in, inv, xq.data() + r * packed_.in_padded);

    combined.resize(out);
    for (std::size_t o = 0; o < out; ++o) combined[o] = sx * weight_.scale_for_row(o);
    y.resize(rows, out);
    gemm_u8i8_scaled(xq.data(), rows, packed_, combined.data(), y.data.data());
}

std::size_t Int8Linear::parameter_bytes() const {
    return weight_.data.size() + (weight_.scales.size() + smooth_.size() + (static_abs_max_ ? 1 : 0)) * sizeof(float);
}

void Int8Linear::save(TensorArchive& archive, const std::string& name) const {
    archive.put_i8(name, {static_cast<std::int64_t>(weight_.rows), static_cast<std::int64_t>(weight_.cols)}, weight_.data);
    archive.put_f32(name + ".scale", {static_cast<std::int64_t>(weight_.scales.size())}, weight_.scales);
    if (!smooth_.empty()) archive.put_f32(name + ".smooth", {static_cast<std::int64_t>(smooth_.size())}, smooth_);
    if (static_abs_max_) archive.put_f32(name + ".act_max", {1}, {*static_abs_max_});
}

SmoothedLinear::SmoothedLinear(std::vector<float> folded_weight, std::size_t out, std::size_t in,
                               std::vector<float> divisor)
    : inner_(std::move(folded_weight), out, in), divisor_(std::move(divisor)) {
    if (divisor_.size() != in) throw std::invalid_argument("smoothing divisor length mismatch");
}

void SmoothedLinear::forward(const Matrix& x, Matrix& y) const {
    Matrix scaled = x;
    for (std::size_t r = 0; r < scaled.rows; ++r)
        for (std::size_t c = 0; c < scaled.cols; ++c) scaled(r, c) /= divisor_[c];
    inner_.forward(scaled, y);
}

void SmoothedLinear::save(TensorArchive& archive, const std::string& name) const {
    inner_.save(archive, name);
    archive.put_f32(name + ".smooth", {static_cast<std::int64_t>(divisor_.size())}, divisor_);
}

// ---------------------------------------------------------------------------
// Model transforms

Model apply_quantization(const Model& model, const QuantConfig& config, const CalibrationStats* stats) {
    config.validate();
    if (config.scheme == QuantScheme::none) return model;
    const bool needs_stats =
        config.scheme == QuantScheme::static_calibrated || config.scheme == QuantScheme::smoothquant;
    if (needs_stats) {
        if (!stats) throw std::invalid_argument(std::string(to_string(config.scheme)) + " quantization needs calibration stats");
        model.for_each_linear([&](const std::string& name, const Linear&) {
            if (!stats->layers.contains(name)) throw std::invalid_argument("missing calibration stats for layer " + name);
        });
    }

    Model q = model;
    q.for_each_linear([&](const std::string& name, std::shared_ptr<const Linear>& slot) {
        const std::size_t out = slot->out_features();
        const std::size_t in = slot->in_features();
        std::vector<float> w = slot->weight_f32();
        switch (config.scheme) {
        case QuantScheme::dynamic:
            slot = std::make_shared<Int8Linear>(quantize_symmetric(w, out, in, config.weight_granularity), std::nullopt,
                                                std::vector<float>{});
            break;
        case QuantScheme::static_calibrated:
            slot = std::make_shared<Int8Linear>(quantize_symmetric(w, out, in, config.weight_granularity),
                                                stats->activation_range(name, config.calibration_percentile),
                                                std::vector<float>{});
            break;
        case QuantScheme::smoothquant: {
            const auto& act = stats->layers.at(name).channel_max;
            if (act.size() != in) throw std::invalid_argument("calibration stats for " + name + " have the wrong width");
            std::vector<float> w_max(in, 0.0f);
            for (std::size_t o = 0; o < out; ++o)
                for (std::size_t j = 0; j < in; ++j) w_max[j] = std::max(w_max[j], std::fabs(w[o * in + j]));
            auto s = smoothquant_scales(act, w_max, config.alpha);
            for (std::size_t o = 0; o < out; ++o)
                for (std::size_t j = 0; j < in; ++j) w[o * in + j] *= s[j];
            if (config.smooth_only) {
                slot = std::make_shared<SmoothedLinear>(std::move(w), out, in, std::move(s));
            } else {
                slot = std::make_shared<Int8Linear>(quantize_symmetric(w, out, in, config.weight_granularity),
                                                    std::nullopt, std::move(s));
            }
            break;
        }
        case QuantScheme::none: break;
        }
    });
    q.scheme = std::string(to_string(config.scheme));
    if (config.smooth_only) q.scheme += "-smooth-only";
    return q;
}

std::size_t model_size_bytes(const Model& model) { return model.parameter_bytes(); }

namespace {

std::shared_ptr<const Linear> load_any_linear(ArchiveReader& reader, const std::string& name, std::size_t out,
                                              std::size_t in) {
    const auto* t = reader.find(name);
    if (!t) throw ArchiveError("missing tensor " + name);
    const std::vector<std::int64_t> shape{static_cast<std::int64_t>(out), static_cast<std::int64_t>(in)};
    std::vector<float> smooth;
    if (reader.find(name + ".smooth")) {
        auto s = reader.f32(name + ".smooth", {static_cast<std::int64_t>(in)});
        smooth.assign(s.begin(), s.end());
    }
    if (t->dtype == DType::f32) {
        auto w = reader.f32(name, shape);
        std::vector<float> values(w.begin(), w.end());
        if (!smooth.empty()) return std::make_shared<SmoothedLinear>(std::move(values), out, in, std::move(smooth));
        return std::make_shared<FloatLinear>(std::move(values), out, in);
    }
    auto w = reader.i8(name, shape);
    const auto* scale = reader.find(name + ".scale");
    if (!scale) throw ArchiveError("missing tensor " + name + ".scale");
    QuantizedTensor qt;
    qt.rows = out;
    qt.cols = in;
    qt.data.assign(w.begin(), w.end());
    if (scale->shape == std::vector<std::int64_t>{1}) {
        qt.granularity = Granularity::per_tensor;
    } else if (scale->shape == std::vector<std::int64_t>{static_cast<std::int64_t>(out)}) {
        qt.granularity = Granularity::per_channel;
    } else {
        throw ArchiveError("tensor " + name + ".scale has an unexpected shape");
    }
    if (scale->dtype != DType::f32) throw ArchiveError("tensor " + name + ".scale is not F32");
    qt.scales = scale->f32;
    for (float s : qt.scales)
        if (!(s > 0.0f)) throw ArchiveError("tensor " + name + ".scale holds a non-positive scale");
    std::optional<float> act_max;
    if (reader.find(name + ".act_max")) act_max = reader.f32(name + ".act_max", {1})[0];
    return std::make_shared<Int8Linear>(std::move(qt), act_max, std::move(smooth));
}

}  // namespace

Model model_from_any_archive(const TensorArchive& archive) {
    return model_from_archive(archive, EncoderConfig::from_metadata(archive.metadata()), load_any_linear);
}

Model load_model(const std::filesystem::path& path) { return model_from_any_archive(TensorArchive::load(path)); }

void save_model(const Model& model, const std::filesystem::path& path) { model.to_archive().save(path); }

}  // namespace skillrank
