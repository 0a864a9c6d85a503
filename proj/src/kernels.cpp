// SPDX-License-Identifier: Apache-2.0
#include "skillrank/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace skillrank {
namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kLanes = 16;
constexpr std::size_t kOutBlock = 64;  // 4 vectors of 16 lanes

std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

}  // namespace

const char* kernel_isa() {
#if defined(__AVX512F__) && defined(__AVX512VNNI__) && defined(__AVX512BW__)
    return "avx512-vnni";
#elif defined(__AVX512F__)
    return "avx512f";
#else
    return "generic";
#endif
}

PackedF32 pack_f32(std::span<const float> weight, std::size_t out, std::size_t in) {
    if (weight.size() != out * in) throw std::invalid_argument("pack_f32: weight size does not match shape");
    PackedF32 p;
    p.in = in;
    p.out = out;
    p.out_padded = round_up(out, kOutBlock);
    p.data.assign(in * p.out_padded, 0.0f);
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t k = 0; k < in; ++k) p.data[k * p.out_padded + o] = weight[o * in + k];
    return p;
}

PackedI8 pack_i8(std::span<const std::int8_t> weight, std::size_t out, std::size_t in) {
    if (weight.size() != out * in) throw std::invalid_argument("pack_i8: weight size does not match shape");
    PackedI8 p;
    p.in = in;
    p.in_padded = round_up(in, 4);
    p.out = out;
    p.out_padded = round_up(out, kOutBlock);
    p.data.assign(p.in_padded * p.out_padded, 0);
    p.col_sum.assign(p.out_padded, 0);
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t k = 0; k < in; ++k) {
            const std::int8_t v = weight[o * in + k];
            p.data[((k / 4) * p.out_padded + o) * 4 + k % 4] = v;
            p.col_sum[o] += v;
        }
    }
    return p;
}

#if defined(__AVX512F__)

void gemm_f32(const float* x, std::size_t rows, const PackedF32& w, float* y) {
    const std::size_t in = w.in;
    const std::size_t stride = w.out_padded;
    alignas(64) float tile[kRowBlock][kOutBlock];
    for (std::size_t r0 = 0; r0 < rows; r0 += kRowBlock) {
        const std::size_t rb = std::min(kRowBlock, rows - r0);
        const float* xr[kRowBlock];
        for (std::size_t r = 0; r < kRowBlock; ++r) xr[r] = x + (r0 + std::min(r, rb - 1)) * in;
        for (std::size_t o0 = 0; o0 < w.out; o0 += kOutBlock) {
            __m512 acc[kRowBlock][4];
            for (auto& row : acc)
                for (auto& a : row) a = _mm512_setzero_ps();
            const float* wp = w.data.data() + o0;
            for (std::size_t k = 0; k < in; ++k, wp += stride) {
                const __m512 w0 = _mm512_loadu_ps(wp);
                const __m512 w1 = _mm512_loadu_ps(wp + 16);
                const __m512 w2 = _mm512_loadu_ps(wp + 32);
                const __m512 w3 = _mm512_loadu_ps(wp + 48);
                for (std::size_t r = 0; r < kRowBlock; ++r) {
                    const __m512 xb = _mm512_set1_ps(xr[r][k]);
                    acc[r][0] = _mm512_fmadd_ps(xb, w0, acc[r][0]);
                    acc[r][1] = _mm512_fmadd_ps(xb, w1, acc[r][1]);
                    acc[r][2] = _mm512_fmadd_ps(xb, w2, acc[r][2]);
                    acc[r][3] = _mm512_fmadd_ps(xb, w3, acc[r][3]);
                }
            }
            const std::size_t ob = std::min(kOutBlock, w.out - o0);
            for (std::size_t r = 0; r < rb; ++r) {
                for (std::size_t j = 0; j < 4; ++j) _mm512_store_ps(&tile[r][j * kLanes], acc[r][j]);
                std::memcpy(y + (r0 + r) * w.out + o0, tile[r], ob * sizeof(float));
            }
        }
    }
}

#else

void gemm_f32(const float* x, std::size_t rows, const PackedF32& w, float* y) {
    const std::size_t in = w.in;
    std::vector<float> acc(w.out_padded);
    for (std::size_t r = 0; r < rows; ++r) {
        std::fill(acc.begin(), acc.end(), 0.0f);
        const float* xr = x + r * in;
        for (std::size_t k = 0; k < in; ++k) {
            const float xv = xr[k];
            const float* wk = w.data.data() + k * w.out_padded;
            for (std::size_t o = 0; o < w.out_padded; ++o) acc[o] += xv * wk[o];
        }
        std::copy_n(acc.begin(), w.out, y + r * w.out);
    }
}

#endif

#if defined(__AVX512F__) && defined(__AVX512VNNI__) && defined(__AVX512BW__)

namespace {

// Shared u8 x s8 tile loop; `store` receives each finished 4 x 64 block of
// offset-corrected int32 sums.
template <typename Store>
void gemm_u8i8_blocks(const std::uint8_t* x_u8, std::size_t rows, const PackedI8& w, Store&& store) {
    const std::size_t stride_x = w.in_padded;
    const std::size_t quads = w.in_padded / 4;
    const std::size_t stride_w = w.out_padded * 4;
    for (std::size_t r0 = 0; r0 < rows; r0 += kRowBlock) {
        const std::size_t rb = std::min(kRowBlock, rows - r0);
        const std::uint8_t* xr[kRowBlock];
        for (std::size_t r = 0; r < kRowBlock; ++r) xr[r] = x_u8 + (r0 + std::min(r, rb - 1)) * stride_x;
        for (std::size_t o0 = 0; o0 < w.out; o0 += kOutBlock) {
            __m512i acc[kRowBlock][4];
            for (auto& row : acc)
                for (auto& a : row) a = _mm512_setzero_si512();
            const std::int8_t* wp = w.data.data() + o0 * 4;
            for (std::size_t q = 0; q < quads; ++q, wp += stride_w) {
                const __m512i w0 = _mm512_loadu_si512(wp);
                const __m512i w1 = _mm512_loadu_si512(wp + 64);
                const __m512i w2 = _mm512_loadu_si512(wp + 128);
                const __m512i w3 = _mm512_loadu_si512(wp + 192);
                for (std::size_t r = 0; r < kRowBlock; ++r) {
                    std::int32_t four;
                    std::memcpy(&four, xr[r] + q * 4, sizeof(four));
                    const __m512i xb = _mm512_set1_epi32(four);
                    acc[r][0] = _mm512_dpbusd_epi32(acc[r][0], xb, w0);
                    acc[r][1] = _mm512_dpbusd_epi32(acc[r][1], xb, w1);
                    acc[r][2] = _mm512_dpbusd_epi32(acc[r][2], xb, w2);
                    acc[r][3] = _mm512_dpbusd_epi32(acc[r][3], xb, w3);
                }
            }
            for (std::size_t j = 0; j < 4; ++j) {
                const __m512i corr = _mm512_slli_epi32(_mm512_loadu_si512(w.col_sum.data() + o0 + j * kLanes), 7);
                for (std::size_t r = 0; r < rb; ++r) acc[r][j] = _mm512_sub_epi32(acc[r][j], corr);
            }
            store(r0, rb, o0, std::min(kOutBlock, w.out - o0), acc);
        }
    }
}

}  // namespace

void gemm_u8i8(const std::uint8_t* x_u8, std::size_t rows, const PackedI8& w, std::int32_t* acc_out) {
    alignas(64) std::int32_t tile[kOutBlock];
    gemm_u8i8_blocks(x_u8, rows, w, [&](std::size_t r0, std::size_t rb, std::size_t o0, std::size_t ob, auto& acc) {
        for (std::size_t r = 0; r < rb; ++r) {
            for (std::size_t j = 0; j < 4; ++j) _mm512_store_si512(tile + j * kLanes, acc[r][j]);
            std::memcpy(acc_out + (r0 + r) * w.out + o0, tile, ob * sizeof(std::int32_t));
        }
    });
}

void gemm_u8i8_scaled(const std::uint8_t* x_u8, std::size_t rows, const PackedI8& w, const float* scale, float* y) {
    alignas(64) float tile[kOutBlock];
    alignas(64) float sc[kOutBlock];
    gemm_u8i8_blocks(x_u8, rows, w, [&](std::size_t r0, std::size_t rb, std::size_t o0, std::size_t ob, auto& acc) {
        std::fill(sc, sc + kOutBlock, 0.0f);
        std::memcpy(sc, scale + o0, ob * sizeof(float));
        for (std::size_t r = 0; r < rb; ++r) {
            for (std::size_t j = 0; j < 4; ++j)
                _mm512_store_ps(tile + j * kLanes,
                                _mm512_mul_ps(_mm512_cvtepi32_ps(acc[r][j]), _mm512_load_ps(sc + j * kLanes)));
            std::memcpy(y + (r0 + r) * w.out + o0, tile, ob * sizeof(float));
        }
    });
}

#else

void gemm_u8i8(const std::uint8_t* x_u8, std::size_t rows, const PackedI8& w, std::int32_t* acc_out) {
    const std::size_t quads = w.in_padded / 4;
    std::vector<std::int32_t> acc(w.out_padded);
    for (std::size_t r = 0; r < rows; ++r) {
        std::fill(acc.begin(), acc.end(), 0);
        const std::uint8_t* xr = x_u8 + r * w.in_padded;
        for (std::size_t q = 0; q < quads; ++q) {
            const std::int8_t* wq = w.data.data() + q * w.out_padded * 4;
            for (std::size_t o = 0; o < w.out_padded; ++o)
                for (std::size_t j = 0; j < 4; ++j)
                    acc[o] += static_cast<std::int32_t>(xr[q * 4 + j]) * static_cast<std::int32_t>(wq[o * 4 + j]);
        }
        for (std::size_t o = 0; o < w.out; ++o) acc_out[r * w.out + o] = acc[o] - 128 * w.col_sum[o];
    }
}

void gemm_u8i8_scaled(const std::uint8_t* x_u8, std::size_t rows, const PackedI8& w, const float* scale, float* y) {
    std::vector<std::int32_t> acc(rows * w.out);
    gemm_u8i8(x_u8, rows, w, acc.data());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < w.out; ++o) y[r * w.out + o] = static_cast<float>(acc[r * w.out + o]) * scale[o];
}

#endif

namespace {

std::uint8_t quantize_one_u8(float x, float inv_scale) {
    const float v = x * inv_scale;
    float q = std::trunc(v);
    const float frac = v - q;
    q += frac >= 0.5f ? 1.0f : (frac <= -0.5f ? -1.0f : 0.0f);
    q = std::clamp(q, -127.0f, 127.0f);
    return static_cast<std::uint8_t>(static_cast<std::int32_t>(q) + 128);
}

}  // namespace

#if defined(__AVX512F__)

float abs_max(const float* x, std::size_t n) {
    __m512 m = _mm512_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) m = _mm512_max_ps(m, _mm512_abs_ps(_mm512_loadu_ps(x + i)));
    float r = _mm512_reduce_max_ps(m);
    for (; i < n; ++i) r = std::max(r, std::fabs(x[i]));
    return r;
}

void quantize_u8(const float* x, std::size_t n, float inv_scale, std::uint8_t* out) {
    const __m512 inv = _mm512_set1_ps(inv_scale);
    const __m512 half = _mm512_set1_ps(0.5f);
    const __m512 neg_half = _mm512_set1_ps(-0.5f);
    const __m512 one = _mm512_set1_ps(1.0f);
    const __m512 lo = _mm512_set1_ps(-127.0f);
    const __m512 hi = _mm512_set1_ps(127.0f);
    const __m512i offset = _mm512_set1_epi32(128);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m512 v = _mm512_mul_ps(_mm512_loadu_ps(x + i), inv);
        __m512 q = _mm512_roundscale_ps(v, _MM_FROUND_TO_ZERO | _MM_FROUND_NO_EXC);
        const __m512 frac = _mm512_sub_ps(v, q);
        q = _mm512_mask_add_ps(q, _mm512_cmp_ps_mask(frac, half, _CMP_GE_OQ), q, one);
        q = _mm512_mask_sub_ps(q, _mm512_cmp_ps_mask(frac, neg_half, _CMP_LE_OQ), q, one);
        q = _mm512_min_ps(_mm512_max_ps(q, lo), hi);
        const __m512i u = _mm512_add_epi32(_mm512_cvttps_epi32(q), offset);
        _mm_storeu_si128(reinterpret_cast<__m128i*>(out + i), _mm512_cvtepi32_epi8(u));
    }
    for (; i < n; ++i) out[i] = quantize_one_u8(x[i], inv_scale);
}

float exp_normalize(float* x, std::size_t n) {
    float mx = x[0];
    {
        __m512 m = _mm512_set1_ps(x[0]);
        std::size_t i = 0;
        for (; i + kLanes <= n; i += kLanes) m = _mm512_max_ps(m, _mm512_loadu_ps(x + i));
        mx = _mm512_reduce_max_ps(m);
        for (; i < n; ++i) mx = std::max(mx, x[i]);
    }
    // Cephes single-precision exp: 2^k * p(r) with r = y - k ln2
    const __m512 vmax = _mm512_set1_ps(mx);
    const __m512 log2e = _mm512_set1_ps(1.44269504088896341f);
    const __m512 ln2_hi = _mm512_set1_ps(0.693359375f);
    const __m512 ln2_lo = _mm512_set1_ps(-2.12194440e-4f);
    const __m512 floor_in = _mm512_set1_ps(-87.3f);
    const __m512 one = _mm512_set1_ps(1.0f);
    const __m512 c0 = _mm512_set1_ps(1.9875691500e-4f);
    const __m512 c1 = _mm512_set1_ps(1.3981999507e-3f);
    const __m512 c2 = _mm512_set1_ps(8.3334519073e-3f);
    const __m512 c3 = _mm512_set1_ps(4.1665795894e-2f);
    const __m512 c4 = _mm512_set1_ps(1.6666665459e-1f);
    const __m512 c5 = _mm512_set1_ps(5.0000001201e-1f);
    __m512 sum = _mm512_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        __m512 y = _mm512_max_ps(_mm512_sub_ps(_mm512_loadu_ps(x + i), vmax), floor_in);
        const __m512 k = _mm512_roundscale_ps(_mm512_mul_ps(y, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
        y = _mm512_fnmadd_ps(k, ln2_hi, y);
        y = _mm512_fnmadd_ps(k, ln2_lo, y);
        __m512 p = _mm512_fmadd_ps(c0, y, c1);
        p = _mm512_fmadd_ps(p, y, c2);
        p = _mm512_fmadd_ps(p, y, c3);
        p = _mm512_fmadd_ps(p, y, c4);
        p = _mm512_fmadd_ps(p, y, c5);
        p = _mm512_fmadd_ps(p, _mm512_mul_ps(y, y), _mm512_add_ps(y, one));
        const __m512 e = _mm512_scalef_ps(p, k);
        _mm512_storeu_ps(x + i, e);
        sum = _mm512_add_ps(sum, e);
    }
    float total = _mm512_reduce_add_ps(sum);
    for (; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        total += x[i];
    }
    return total;
}

#else

float abs_max(const float* x, std::size_t n) {
    float r = 0.0f;
    for (std::size_t i = 0; i < n; ++i) r = std::max(r, std::fabs(x[i]));
    return r;
}

void quantize_u8(const float* x, std::size_t n, float inv_scale, std::uint8_t* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = quantize_one_u8(x[i], inv_scale);
}

float exp_normalize(float* x, std::size_t n) {
    const float mx = *std::max_element(x, x + n);
    float total = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        total += x[i];
    }
    return total;
}

#endif

}  // namespace skillrank
