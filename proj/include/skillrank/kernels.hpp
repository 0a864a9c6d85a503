// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace skillrank {

/// Row-major float matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

    float* row(std::size_t r) { return data.data() + r * cols; }
    const float* row(std::size_t r) const { return data.data() + r * cols; }
    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    void resize(std::size_t r, std::size_t c) {
        rows = r;
        cols = c;
        data.assign(r * c, 0.0f);
    }
};

/// FP32 weights of an out x in linear map, repacked as [in][out_padded] so a
/// kernel can broadcast one activation against a run of output channels.
struct PackedF32 {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t out_padded = 0;
    std::vector<float> data;
};

PackedF32 pack_f32(std::span<const float> weight, std::size_t out, std::size_t in);

/// y (rows x out) = x (rows x in) * W^T
void gemm_f32(const float* x, std::size_t rows, const PackedF32& w, float* y);

/// INT8 weights of an out x in linear map, repacked as
/// [in_padded / 4][out_padded][4]: four consecutive input channels of one
/// output channel are adjacent, which is the operand layout of u8 x s8 dot
/// instructions. col_sum[o] = sum_k w[o][k], used to undo the +128 offset
/// applied to activations.
struct PackedI8 {
    std::size_t in = 0;
    std::size_t in_padded = 0;
    std::size_t out = 0;
    std::size_t out_padded = 0;
    std::vector<std::int8_t> data;
    std::vector<std::int32_t> col_sum;
};

PackedI8 pack_i8(std::span<const std::int8_t> weight, std::size_t out, std::size_t in);

/// acc (rows x out) = sum_k (x_u8[r][k] - 128) * w[o][k], exact in int32.
/// x_u8 rows have stride w.in_padded and hold q + 128 (padding bytes = 128).
void gemm_u8i8(const std::uint8_t* x_u8, std::size_t rows, const PackedI8& w, std::int32_t* acc);

/// y[r][o] = float(acc[r][o]) * scale[o] with acc as computed by gemm_u8i8.
void gemm_u8i8_scaled(const std::uint8_t* x_u8, std::size_t rows, const PackedI8& w, const float* scale, float* y);

/// max |x_i| (0 for n = 0).
float abs_max(const float* x, std::size_t n);

/// out_i = q_i + 128 with q_i = round_half_away(x_i * inv_scale) clamped to
/// [-127, 127]; the same values as quantize_values.
void quantize_u8(const float* x, std::size_t n, float inv_scale, std::uint8_t* out);

/// x_i = exp(x_i - max(x)); returns the sum. n >= 1.
float exp_normalize(float* x, std::size_t n);

/// Name of the instruction path selected at compile time, for logs and reports.
const char* kernel_isa();

}  // namespace skillrank
