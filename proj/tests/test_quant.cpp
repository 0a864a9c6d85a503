// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "skillrank/eval.hpp"
#include "skillrank/quant.hpp"
#include "skillrank/ranker.hpp"
#include "support.hpp"

using namespace skillrank;

namespace {

std::vector<float> random_floats(std::mt19937_64& rng, std::size_t n, float scale) {
    std::normal_distribution<float> g(0.0f, scale);
    std::vector<float> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

std::vector<TokenBatch> calibration_batches(std::mt19937_64& rng, std::int32_t vocab, std::size_t n) {
    std::vector<TokenBatch> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(make_batch({fixtures::random_ids(rng, 20, vocab), fixtures::random_ids(rng, 13, vocab)}, 0));
    return out;
}

}  // namespace

TEST(Quantize, WorkedExample) {
    auto t = quantize_symmetric(std::vector<float>{0.5f, -1.0f, 2.0f}, 1, 3, Granularity::per_tensor);
    EXPECT_FLOAT_EQ(t.scales[0], 2.0f / 127.0f);
    EXPECT_EQ(t.data, (std::vector<std::int8_t>{32, -64, 127}));
    EXPECT_EQ(QuantizedTensor::zero_point(), 0);
}

TEST(Quantize, EdgeCasesExact) {
    auto zeros = quantize_symmetric(std::vector<float>(10, 0.0f), 2, 5, Granularity::per_channel);
    EXPECT_EQ(zeros.scales, (std::vector<float>{1.0f, 1.0f}));
    for (auto q : zeros.data) EXPECT_EQ(q, 0);
    for (float v : dequantize(zeros)) EXPECT_EQ(v, 0.0f);

    std::vector<float> ints;
    for (int i = -127; i <= 127; ++i) ints.push_back(static_cast<float>(i));
    auto t = quantize_symmetric(ints, 1, ints.size(), Granularity::per_tensor);
    EXPECT_EQ(t.scales[0], 1.0f);
    EXPECT_EQ(dequantize(t), ints);

    QuantizedTensor one;
    one.rows = one.cols = 1;
    one.data = {127};
    one.scales = {2.0f / 127.0f};
    EXPECT_FLOAT_EQ(dequantize(one)[0], 2.0f);
}

TEST(Quantize, RoundTripWithinHalfScale) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> dim(1, 40);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t rows = dim(rng), cols = dim(rng);
        auto x = random_floats(rng, rows * cols, 0.01f + static_cast<float>(trial % 7));
        const auto g = trial % 2 ? Granularity::per_channel : Granularity::per_tensor;
        auto t = quantize_symmetric(x, rows, cols, g);
        auto back = dequantize(t);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const float s = t.scale_for_row(r);
                ASSERT_LE(std::fabs(back[r * cols + c] - x[r * cols + c]), s / 2 * (1 + 1e-5f));
            }
    }
}

TEST(Quantize, RejectsNonFinite) {
    EXPECT_THROW(quantize_symmetric(std::vector<float>{1.0f, NAN}, 1, 2, Granularity::per_tensor),
                 std::invalid_argument);
    EXPECT_THROW(quantize_symmetric(std::vector<float>{INFINITY}, 1, 1, Granularity::per_tensor),
                 std::invalid_argument);
    EXPECT_THROW(quantize_symmetric(std::vector<float>{1.0f}, 1, 2, Granularity::per_tensor), std::invalid_argument);
}

TEST(Quantize, WithMaxClamps) {
    auto t = quantize_with_max(std::vector<float>{0.5f, -3.0f, 1.0f}, 1, 3, 1.0f);
    EXPECT_EQ(t.data, (std::vector<std::int8_t>{64, -127, 127}));
    EXPECT_FLOAT_EQ(t.scales[0], 1.0f / 127.0f);
}

TEST(QuantizedMatmul, ScalarExample) {
    auto x = quantize_symmetric(std::vector<float>{1.0f}, 1, 1, Granularity::per_tensor);
    auto w = quantize_symmetric(std::vector<float>{2.0f}, 1, 1, Granularity::per_channel);
    EXPECT_EQ(quantized_matmul(x, w).data[0], 2.0f);
}

TEST(QuantizedMatmul, ErrorWithinPropagationBound) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto xf = random_floats(rng, 64, 1.0f);
        auto wf = random_floats(rng, 64, 1.0f);
        auto xq = quantize_symmetric(xf, 8, 8, Granularity::per_tensor);
        auto wq = quantize_symmetric(wf, 8, 8, Granularity::per_channel);
        auto y = quantized_matmul(xq, wq);
        const double sx = xq.scales[0];
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t o = 0; o < 8; ++o) {
                // |x w - x' w'| <= sum |x||dw| + |w'||dx| with |dx| <= sx/2, |dw| <= sw/2
                const double sw = wq.scales[o];
                double ref = 0.0, bound = 0.0;
                for (std::size_t k = 0; k < 8; ++k) {
                    ref += static_cast<double>(xf[r * 8 + k]) * wf[o * 8 + k];
                    bound += std::fabs(xf[r * 8 + k]) * sw / 2 + (std::fabs(wf[o * 8 + k]) + sw / 2) * sx / 2;
                }
                EXPECT_LE(std::fabs(y(r, o) - ref), bound + 1e-5);
            }
    }
}

TEST(Int8Linear, DynamicForwardEqualsQuantizedMatmul) {
    std::mt19937_64 rng(3);
    auto wf = random_floats(rng, 24 * 40, 0.2f);
    auto wq = quantize_symmetric(wf, 24, 40, Granularity::per_channel);
    Int8Linear dyn(wq, std::nullopt, {});
    Matrix x(7, 40);
    x.data = random_floats(rng, 7 * 40, 1.5f);
    Matrix y;
    dyn.forward(x, y);
    auto ref = quantized_matmul(quantize_symmetric(x.data, 7, 40, Granularity::per_tensor), wq);
    EXPECT_EQ(y.data, ref.data);

    // a static range equal to the runtime maximum reproduces the dynamic path
    Int8Linear fixed(wq, abs_max(x.data.data(), x.data.size()), {});
    Matrix ys;
    fixed.forward(x, ys);
    EXPECT_EQ(ys.data, y.data);
    EXPECT_EQ(dyn.parameter_bytes(), 24u * 40u + 24u * 4u);
    EXPECT_EQ(fixed.parameter_bytes(), 24u * 40u + 25u * 4u);
}

TEST(SmoothScales, ClosedForm) {
    const std::vector<float> a4{4.0f}, a1{1.0f};
    EXPECT_FLOAT_EQ(smoothquant_scales(a4, a1, 0.5)[0], 2.0f);
    EXPECT_FLOAT_EQ(smoothquant_scales(a1, a4, 0.5)[0], 0.5f);
    for (double alpha : {0.25, 0.5, 0.75}) {
        const std::vector<float> act{8.0f, 0.5f, 3.0f}, w{0.5f, 2.0f, 3.0f};
        auto s = smoothquant_scales(act, w, alpha);
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_NEAR(s[j], std::pow(act[j], alpha) / std::pow(w[j], 1 - alpha), 1e-6 * s[j]) << alpha;
        auto ones = smoothquant_scales(std::vector<float>{1, 1}, std::vector<float>{1, 1}, alpha);
        EXPECT_EQ(ones, (std::vector<float>{1.0f, 1.0f}));
    }
    // zero channels are floored rather than dividing by zero
    auto floored = smoothquant_scales(std::vector<float>{0.0f}, std::vector<float>{0.0f}, 0.5);
    EXPECT_TRUE(std::isfinite(floored[0]));
    EXPECT_THROW(smoothquant_scales(std::vector<float>{1, 2}, std::vector<float>{1}, 0.5), std::invalid_argument);
}

TEST(Calibrate, RunningMax) {
    auto model = init_random_model(fixtures::toy_config(32, 2, 4), 4);
    std::mt19937_64 rng(5);
    auto batches = calibration_batches(rng, 64, 3);
    QuantConfig qc;
    auto all = calibrate(model, batches, qc);
    EXPECT_EQ(all.batches, 3u);
    EXPECT_EQ(all.layers.size(), 12u);

    std::map<std::string, float> expected;
    for (const auto& b : batches) {
        auto one = calibrate(model, std::span<const TokenBatch>(&b, 1), qc);
        for (const auto& [name, s] : one.layers) expected[name] = std::max(expected[name], s.tensor_max);
    }
    for (const auto& [name, s] : all.layers) {
        EXPECT_EQ(s.tensor_max, expected[name]) << name;
        EXPECT_EQ(s.tensor_max, *std::max_element(s.channel_max.begin(), s.channel_max.end()));
        EXPECT_EQ(all.activation_range(name, 100.0), s.tensor_max);
    }
    EXPECT_EQ(all.layers.at("layer.0.attn.q").channel_max.size(), 32u);
    EXPECT_EQ(all.layers.at("layer.0.ffn.w2").channel_max.size(), 64u);

    qc.calibration_size = 1;
    EXPECT_EQ(calibrate(model, batches, qc).batches, 1u);
    EXPECT_THROW(calibrate(model, std::span<const TokenBatch>{}, QuantConfig{}), std::invalid_argument);
}

TEST(Calibrate, PercentileBelowMax) {
    auto model = init_random_model(fixtures::toy_config(32, 1, 4), 4);
    std::mt19937_64 rng(6);
    auto batches = calibration_batches(rng, 64, 2);
    QuantConfig qc;
    qc.calibration_percentile = 99.0;
    auto stats = calibrate(model, batches, qc);
    for (const auto& [name, s] : stats.layers) {
        EXPECT_LE(stats.activation_range(name, 99.0), s.tensor_max);
        EXPECT_GT(stats.activation_range(name, 99.0), 0.0f);
    }
}

TEST(ApplyQuantization, NoneIsIdentity) {
    auto model = init_random_model(fixtures::toy_config(32, 2, 4), 7);
    auto same = apply_quantization(model, QuantConfig{});
    auto batch = make_batch({{2, 3, 4, 5, 6}}, 0);
    EXPECT_EQ(same.encode(batch).values, model.encode(batch).values);
    EXPECT_EQ(model_size_bytes(same), model_size_bytes(model));
    EXPECT_EQ(model_size_bytes(model), fixtures::fp32_bytes(model.config));
}

TEST(ApplyQuantization, ZeroWeightsScoreZero) {
    auto model = init_random_model(fixtures::toy_config(32, 2, 4), 8);
    std::fill(model.head.begin(), model.head.end(), 0.0f);
    QuantConfig qc;
    qc.scheme = QuantScheme::dynamic;
    auto q = apply_quantization(model, qc);
    EXPECT_EQ(q.scheme, "dynamic");
    EXPECT_EQ(score_tokens(q, std::vector<TokenId>{2, 9, 11}), 0.0);

    for (auto& l : model.layers) {
        l.q = std::make_shared<FloatLinear>(std::vector<float>(32 * 32, 0.0f), 32, 32);
        l.k = l.q;
        l.v = l.q;
        l.o = l.q;
    }
    auto zq = apply_quantization(model, qc);
    for (const auto& l : zq.layers) {
        const auto* lin = dynamic_cast<const Int8Linear*>(l.q.get());
        ASSERT_NE(lin, nullptr);
        for (auto v : lin->weight().data) EXPECT_EQ(v, 0);
    }
}

TEST(ApplyQuantization, SmoothOnlyMatchesFp32) {
    auto model = init_random_model(fixtures::toy_config(32, 2, 4), 9);
    std::mt19937_64 rng(10);
    auto batches = calibration_batches(rng, 64, 2);
    for (double alpha : {0.25, 0.5, 0.75}) {
        QuantConfig qc;
        qc.scheme = QuantScheme::smoothquant;
        qc.alpha = alpha;
        qc.smooth_only = true;
        auto stats = calibrate(model, batches, qc);
        auto smoothed = apply_quantization(model, qc, &stats);
        auto batch = make_batch({fixtures::random_ids(rng, 30, 64), fixtures::random_ids(rng, 11, 64)}, 0);
        auto a = model.encode(batch), b = smoothed.encode(batch);
        for (std::size_t i = 0; i < a.values.size(); ++i) ASSERT_NEAR(a.values[i], b.values[i], 1e-5) << alpha;
    }
}

TEST(ApplyQuantization, StaticNeedsStatsForEveryLayer) {
    auto model = init_random_model(fixtures::toy_config(32, 2, 4), 11);
    QuantConfig qc;
    qc.scheme = QuantScheme::static_calibrated;
    EXPECT_THROW(apply_quantization(model, qc), std::invalid_argument);
    std::mt19937_64 rng(12);
    auto batches = calibration_batches(rng, 64, 2);
    auto stats = calibrate(model, batches, qc);
    stats.layers.erase("layer.1.attn.o");
    EXPECT_THROW(apply_quantization(model, qc, &stats), std::invalid_argument);
}

TEST(ApplyQuantization, SchemesStayCloseToFp32) {
    auto model = init_random_model(fixtures::toy_config(64, 2, 4, 128), 13);
    std::mt19937_64 rng(14);
    auto batches = calibration_batches(rng, 128, 4);
    std::vector<std::vector<TokenId>> seqs;
    for (int i = 0; i < 100; ++i) seqs.push_back(fixtures::random_ids(rng, 24 + static_cast<std::size_t>(i % 40), 128));
    auto fp = score_batch(model, seqs);
    for (auto scheme : {QuantScheme::dynamic, QuantScheme::static_calibrated, QuantScheme::smoothquant}) {
        QuantConfig qc;
        qc.scheme = scheme;
        auto stats = calibrate(model, batches, qc);
        auto q = apply_quantization(model, qc, &stats);
        auto s = score_batch(q, seqs);
        EXPECT_GE(kendall_tau(fp, s), 0.9) << to_string(scheme);
    }
}

TEST(ModelSize, RatioForInt8) {
    EncoderConfig c;
    c.vocab_size = 256;
    c.d_model = 128;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 512;
    auto model = init_random_model(c, 15);
    QuantConfig qc;
    qc.scheme = QuantScheme::dynamic;
    auto q = apply_quantization(model, qc);
    const double ratio = static_cast<double>(model_size_bytes(model)) / static_cast<double>(model_size_bytes(q));
    EXPECT_GT(ratio, 3.0);
    EXPECT_LT(ratio, 4.0);

    // linear weights shrink to one byte each plus a float scale per output channel
    std::size_t expected = model_size_bytes(model);
    model.for_each_linear([&](const std::string&, std::shared_ptr<const Linear>& l) {
        expected -= l->parameter_bytes();
        expected += l->in_features() * l->out_features() + l->out_features() * 4;
    });
    EXPECT_EQ(model_size_bytes(q), expected);
}

TEST(QuantizedArchive, SaveLoadRoundTrip) {
    auto model = init_random_model(fixtures::toy_config(32, 2, 4), 16);
    std::mt19937_64 rng(17);
    auto batches = calibration_batches(rng, 64, 2);
    fixtures::TempDir dir;
    auto batch = make_batch({{2, 3, 4, 5, 6, 7}}, 0);
    for (auto scheme : {QuantScheme::dynamic, QuantScheme::static_calibrated, QuantScheme::smoothquant}) {
        QuantConfig qc;
        qc.scheme = scheme;
        auto stats = calibrate(model, batches, qc);
        auto q = apply_quantization(model, qc, &stats);
        save_model(q, dir / "q.bin");
        auto back = load_model(dir / "q.bin");
        EXPECT_EQ(back.scheme, q.scheme);
        EXPECT_EQ(model_size_bytes(back), model_size_bytes(q));
        EXPECT_EQ(back.encode(batch).values, q.encode(batch).values) << to_string(scheme);
    }
}

TEST(QuantScheme, Parse) {
    EXPECT_EQ(parse_scheme("fp32"), QuantScheme::none);
    EXPECT_EQ(parse_scheme("static"), QuantScheme::static_calibrated);
    EXPECT_EQ(to_string(QuantScheme::smoothquant), "smoothquant");
    EXPECT_THROW(parse_scheme("int4"), std::invalid_argument);
    QuantConfig bad;
    bad.scheme = QuantScheme::smoothquant;
    bad.alpha = 1.5;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}
