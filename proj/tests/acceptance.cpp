// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "lexical_oracle.hpp"
#include "skillrank/bench.hpp"
#include "skillrank/dense_index.hpp"
#include "skillrank/eval.hpp"
#include "skillrank/quant.hpp"
#include "skillrank/ranker.hpp"
#include "skillrank/service.hpp"
#include "support.hpp"

using namespace skillrank;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Ids = std::vector<std::string>;

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome metric_oracle() {
    Qrels q;
    for (auto [d, g] : std::vector<std::pair<const char*, int>>{{"a", 0}, {"b", 1}, {"c", 2}}) q.add("w", d, g);
    for (auto [d, g] : std::vector<std::pair<const char*, int>>{{"r1", 1}, {"r3", 2}}) q.add("m", d, g);
    for (auto [d, g] : std::vector<std::pair<const char*, int>>{
             {"g2a", 2}, {"g2b", 2}, {"g1a", 1}, {"g1b", 1}, {"g0", 0}})
        q.add("t", d, g);
    for (int i = 0; i < 4; ++i) q.add("r", "rel" + std::to_string(i), 1);

    const double l3 = std::log2(3.0), l5 = std::log2(5.0), l6 = std::log2(6.0);
    const double idcg_t = 3.0 + 3.0 / l3 + 0.5 + 1.0 / l5;
    Ids sixty;
    for (int i = 0; i < 60; ++i) sixty.push_back("u" + std::to_string(i));
    sixty[3] = "rel0";
    sixty[15] = "rel1";
    sixty[25] = "rel2";
    sixty[45] = "rel3";
    Ids eleven;
    for (int i = 0; i < 10; ++i) eleven.push_back("u" + std::to_string(i));
    eleven.push_back("r1");

    struct Case {
        const char* name;
        std::function<double()> got;
        double expected;
    };
    const std::vector<Case> cases{
        {"ndcg ideal", [&] { return ndcg_at_k(Ids{"c", "b", "a"}, q, "w", 10); }, 1.0},
        {"ndcg 0,1,2", [&] { return ndcg_at_k(Ids{"a", "b", "c"}, q, "w", 3); },
         (1.0 / l3 + 1.5) / (3.0 + 1.0 / l3)},
        {"ndcg none relevant", [&] { return ndcg_at_k(Ids{"a"}, q, "nothing", 10); }, 0.0},
        {"ndcg shifted", [&] { return ndcg_at_k(Ids{"g0", "g2a", "g2b", "g1a", "g1b"}, q, "t", 10); },
         (3.0 / l3 + 1.5 + 1.0 / l5 + 1.0 / l6) / idcg_t},
        {"ndcg sparse", [&] { return ndcg_at_k(Ids{"g1a", "g0", "g2a"}, q, "t", 10); }, 2.5 / idcg_t},
        {"mrr rank 2", [&] { return mrr_at_k(Ids{"x", "r1"}, q, "m", 10); }, 0.5},
        {"mrr rank 1", [&] { return mrr_at_k(Ids{"r3", "x"}, q, "m", 10); }, 1.0},
        {"mrr rank 11", [&] { return mrr_at_k(eleven, q, "m", 10); }, 0.0},
        {"map 1 and 3", [&] { return map_at_k(Ids{"r1", "x", "r3"}, q, "m", 10); }, (1.0 + 2.0 / 3.0) / 2.0},
        {"map all relevant", [&] { return map_at_k(Ids{"r3", "r1"}, q, "m", 10); }, 1.0},
        {"map none", [&] { return map_at_k(Ids{"x", "y"}, q, "m", 10); }, 0.0},
        {"map shifted", [&] { return map_at_k(Ids{"g0", "g2a", "g2b", "g1a", "g1b"}, q, "t", 10); },
         (0.5 + 2.0 / 3.0 + 0.75 + 0.8) / 4.0},
        {"recall@20", [&] { return recall_at_k(sixty, q, "r", 20); }, 0.5},
        {"recall@30", [&] { return recall_at_k(sixty, q, "r", 30); }, 0.75},
        {"recall@50", [&] { return recall_at_k(sixty, q, "r", 50); }, 1.0},
    };
    double worst = 0.0;
    std::string failed;
    for (const auto& c : cases) {
        const double err = std::fabs(c.got() - c.expected);
        worst = std::max(worst, err);
        if (!(err <= 1e-9)) failed += std::string(" ") + c.name;
    }
    const bool worked = std::fabs(ndcg_at_k(Ids{"a", "b", "c"}, q, "w", 3) - 0.58688) < 5e-6 &&
                        std::fabs(map_at_k(Ids{"r1", "x", "r3"}, q, "m", 10) - 0.83333) < 5e-6;
    return {failed.empty() && worked,
            std::to_string(cases.size()) + " rankings, max error " + fmt("%.1e", worst) + failed};
}

Outcome bm25_equivalence() {
    const auto corpus = fixtures::synthetic_corpus(200, 42);
    std::size_t compared = 0, boosted = 0;
    bool ok = true;
    for (const auto& skill : {"python", "data analyst", "c++", "customer service", "sql cloud", "excel"})
        for (const auto& occ : {"analyst", "front desk", "manager"}) {
            Query q;
            q.id = "q";
            q.skill = skill;
            q.occupation = occ;
            Bm25Params p;
            auto index = index_corpus(corpus, FieldVariant::original(), p);
            auto got = search(index, q, corpus.size());
            auto expected = fixtures::brute_force_bm25(corpus, q, p);
            ok = ok && got.size() == expected.size();
            for (const auto& e : got.entries) {
                auto it = expected.find(e.doc_id);
                ok = ok && it != expected.end() && it->second == e.score;
                ++compared;
            }
            Bm25Params flat = p;
            flat.exact_title_boost = 1.0;
            auto unboosted = search(index_corpus(corpus, FieldVariant::original(), flat), q, corpus.size());
            std::map<std::string, double> base;
            for (const auto& e : unboosted.entries) base[e.doc_id] = e.score;
            std::string norm_skill;
            for (const auto& t : analyze(q.skill)) norm_skill += (norm_skill.empty() ? "" : " ") + t;
            for (const auto& e : got.entries) {
                std::string title;
                for (const auto& t : analyze(corpus.at(e.doc_id).title)) title += (title.empty() ? "" : " ") + t;
                const double factor = title == norm_skill ? 7.0 : 1.0;
                boosted += title == norm_skill;
                ok = ok && e.score == factor * base.at(e.doc_id);
            }
        }
    ok = ok && boosted > 0;
    return {ok, std::to_string(compared) + " scores compared exactly, " + std::to_string(boosted) + " boosted docs"};
}

Outcome quant_round_trip() {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> dim(1, 64);
    std::lognormal_distribution<float> spread(0.0f, 2.0f);
    bool ok = true;
    double worst = 0.0, worst_ulps = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t rows = dim(rng), cols = dim(rng);
        std::normal_distribution<float> g(0.0f, spread(rng));
        std::vector<float> x(rows * cols);
        for (auto& v : x) v = g(rng);
        const auto gran = t % 2 ? Granularity::per_channel : Granularity::per_tensor;
        auto q = quantize_symmetric(x, rows, cols, gran);
        auto back = dequantize(q);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double s = q.scale_for_row(r);
                const double err = std::fabs(static_cast<double>(back[r * cols + c]) - x[r * cols + c]);
                worst = std::max(worst, err / s);
                // x / s and q * s each round once in float
                const double ulp = std::ldexp(1.0, std::ilogb(std::max(std::fabs(x[r * cols + c]), 1e-30f)) - 23);
                worst_ulps = std::max(worst_ulps, (err - s / 2) / ulp);
                ok = ok && err <= s / 2 + ulp;
            }
    }
    auto zeros = quantize_symmetric(std::vector<float>(64, 0.0f), 8, 8, Granularity::per_channel);
    for (float v : dequantize(zeros)) ok = ok && v == 0.0f;
    std::vector<float> ints;
    for (int i = -127; i <= 127; ++i) ints.push_back(static_cast<float>(i));
    ok = ok && dequantize(quantize_symmetric(ints, 1, ints.size(), Granularity::per_tensor)) == ints;
    return {ok, "1000 tensors, max error " + fmt("%.4f", worst) + " scales (" + fmt("%.2f", worst_ulps) +
                    " ulp past half a scale), edge cases exact"};
}

Outcome smoothquant_exactness() {
    auto model = init_random_model(fixtures::toy_config(64, 2, 4, 128), 5);
    std::mt19937_64 rng(6);
    std::vector<TokenBatch> calib;
    for (int i = 0; i < 4; ++i) calib.push_back(make_batch({fixtures::random_ids(rng, 40, 128)}, 0));
    auto batch = make_batch({fixtures::random_ids(rng, 50, 128), fixtures::random_ids(rng, 20, 128)}, 0);
    const auto ref = model.encode(batch);
    double worst = 0.0;
    for (double alpha : {0.25, 0.5, 0.75}) {
        QuantConfig qc;
        qc.scheme = QuantScheme::smoothquant;
        qc.alpha = alpha;
        qc.smooth_only = true;
        auto stats = calibrate(model, calib, qc);
        auto out = apply_quantization(model, qc, &stats).encode(batch);
        for (std::size_t i = 0; i < ref.values.size(); ++i)
            worst = std::max(worst, static_cast<double>(std::fabs(out.values[i] - ref.values[i])));
    }
    bool closed = std::fabs(smoothquant_scales(std::vector<float>{4}, std::vector<float>{1}, 0.5)[0] - 2.0f) < 1e-6 &&
                  std::fabs(smoothquant_scales(std::vector<float>{1}, std::vector<float>{4}, 0.5)[0] - 0.5f) < 1e-6;
    for (double alpha : {0.25, 0.5, 0.75}) {
        const std::vector<float> a{4.0f, 1.0f, 9.0f}, w{1.0f, 4.0f, 0.5f};
        auto s = smoothquant_scales(a, w, alpha);
        for (std::size_t j = 0; j < 3; ++j)
            closed = closed && std::fabs(s[j] - std::pow(a[j], alpha) / std::pow(w[j], 1.0 - alpha)) <= 1e-6 * s[j];
    }
    return {worst <= 1e-5 && closed, "max |smoothed - fp32| " + fmt("%.2e", worst) + ", closed-form scales " +
                                         (closed ? "match" : "differ")};
}

EncoderConfig bench_config() {
    EncoderConfig c;
    c.vocab_size = 256;
    c.d_model = 256;
    c.n_layers = 4;
    c.n_heads = 4;
    c.d_ff = 1024;
    c.max_input_len = 512;
    return c;
}

Outcome size_ratio() {
    auto model = init_random_model(bench_config(), 7);
    QuantConfig qc;
    qc.scheme = QuantScheme::dynamic;
    auto q = apply_quantization(model, qc);
    fixtures::TempDir dir;
    save_model(model, dir / "fp32.bin");
    save_model(q, dir / "int8.bin");
    const auto fp = std::filesystem::file_size(dir / "fp32.bin");
    const auto i8 = std::filesystem::file_size(dir / "int8.bin");
    const double ratio = static_cast<double>(fp) / static_cast<double>(i8);
    return {ratio >= 3.5 && ratio <= 4.0,
            fmt("fp32 %.2f MB / int8 %.2f MB = %.3f (target 3.98)", static_cast<double>(fp) / 1e6,
                static_cast<double>(i8) / 1e6, ratio)};
}

Outcome throughput_speedup() {
    auto model = init_random_model(bench_config(), 8);
    QuantConfig qc;
    qc.scheme = QuantScheme::dynamic;
    auto q = apply_quantization(model, qc);
    std::mt19937_64 rng(9);
    std::vector<std::vector<TokenId>> pairs;
    for (int i = 0; i < 200; ++i) pairs.push_back(fixtures::random_ids(rng, 256, 256));
    BenchProtocol p;  // warmup 10, 200 pairs, batch 16, 8 repetitions
    p.input_len = 256;
    auto fp = measure_throughput(model, pairs, p);
    auto dy = measure_throughput(q, pairs, p);
    const double speedup = dy.mean / fp.mean;
    return {speedup >= 1.2, fmt("fp32 %.2f pairs/s, dynamic %.2f pairs/s, speed-up %.2fx", fp.mean, dy.mean, speedup)};
}

Outcome ranking_fidelity() {
    EncoderConfig c = bench_config();
    c.n_layers = 2;
    c.d_model = 128;
    c.d_ff = 512;
    auto model = init_random_model(c, 10);
    QuantConfig qc;
    qc.scheme = QuantScheme::dynamic;
    auto q = apply_quantization(model, qc);
    std::mt19937_64 rng(11);
    // 5 queries x 20 candidates
    std::vector<std::vector<TokenId>> pairs;
    for (int i = 0; i < 100; ++i) pairs.push_back(fixtures::random_ids(rng, 96, 256));
    auto fp = score_batch(model, pairs);
    auto dy = score_batch(q, pairs);
    const double tau = kendall_tau(fp, dy);

    Qrels qrels;
    std::uniform_int_distribution<int> grade(0, 2);
    for (int qi = 0; qi < 5; ++qi)
        for (int d = 0; d < 20; ++d) qrels.add("q" + std::to_string(qi), "d" + std::to_string(d), grade(rng));
    auto mean_ndcg = [&](const std::vector<double>& s) {
        double total = 0.0;
        for (int qi = 0; qi < 5; ++qi) {
            ScoredList l;
            for (int d = 0; d < 20; ++d) l.entries.push_back({"d" + std::to_string(d), s[qi * 20 + d]});
            sort_entries(l.entries);
            const auto ids = l.doc_ids();
            total += ndcg_at_k(ids, qrels, "q" + std::to_string(qi), 10);
        }
        return total / 5.0;
    };
    const double delta = std::fabs(mean_ndcg(fp) - mean_ndcg(dy));
    return {tau >= 0.95 && delta <= 0.05, fmt("kendall tau %.4f, |delta ndcg@10| %.4f", tau, delta)};
}

Outcome gradient_check() {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 1.5);
    const double h = 1e-5;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s(36), y(36, 0.0);
        for (auto& v : s) v = g(rng);
        y[static_cast<std::size_t>(t % 36)] = 1.0;
        if (t % 3 == 0) y[static_cast<std::size_t>((t * 5 + 1) % 36)] = 0.5;
        const auto grad = loss_gradient(s, y);
        for (std::size_t i = 0; i < 36; ++i) {
            auto plus = s, minus = s;
            plus[i] += h;
            minus[i] -= h;
            const double fd = (listwise_softmax_loss(plus, y) - listwise_softmax_loss(minus, y)) / (2 * h);
            const double rel = std::fabs(fd - grad[i]) / std::max({std::fabs(fd), std::fabs(grad[i]), 1e-12});
            worst = std::max(worst, rel);
        }
    }
    return {worst <= 1e-4, fmt("100 lists of 36, max relative error %.2e", worst)};
}

Outcome pipeline_property() {
    const auto dir = fixtures::data_dir();
    auto corpus = ingest_courses(dir / "courses.jsonl");
    auto queries = load_queries(dir / "queries.jsonl");
    auto qrels = load_qrels(dir / "qrels.txt");
    auto docs = load_embeddings(dir / "doc_embeddings.tsv");
    auto qvecs = load_embeddings(dir / "query_embeddings.tsv");
    auto index = index_corpus(corpus, FieldVariant::original());

    std::size_t eligible = 0, perfect = 0;
    bool noop = true;
    for (const auto& q : queries) {
        auto lexical = search(index, q, 50);
        auto dense = cosine_topk(docs, qvecs.find(build_query_text(q)), 50, q.id);
        auto pool_ids = interleave_pools(lexical, dense, 50);
        ScoredList pool;
        pool.query_id = q.id;
        double s = static_cast<double>(pool_ids.size());
        for (const auto& id : pool_ids) pool.entries.push_back({id, s--});

        auto unchanged = rerank(pool, 0, [](const std::string&) -> double { throw std::logic_error("scored"); });
        noop = noop && unchanged.entries == pool.entries;

        auto by_grade = rerank(pool, pool.size(), [&](const std::string& id) {
            return static_cast<double>(qrels.grade(q.id, id));
        });
        // does the pool hold the ideal top ten?
        std::vector<int> ideal, in_pool;
        if (const auto* judged = qrels.judgments(q.id))
            for (const auto& [d, g] : *judged) ideal.push_back(g);
        for (const auto& id : pool_ids) in_pool.push_back(qrels.grade(q.id, id));
        std::sort(ideal.rbegin(), ideal.rend());
        std::sort(in_pool.rbegin(), in_pool.rend());
        ideal.resize(std::min<std::size_t>(10, ideal.size()));
        in_pool.resize(std::min<std::size_t>(10, in_pool.size()));
        if (ideal != in_pool || ideal.empty() || ideal.front() == 0) continue;
        ++eligible;
        const auto ids = by_grade.doc_ids();
        perfect += std::fabs(ndcg_at_k(ids, qrels, q.id, 10) - 1.0) < 1e-12;
    }
    return {noop && eligible > 0 && perfect == eligible,
            std::to_string(perfect) + "/" + std::to_string(eligible) + " eligible queries at ndcg@10 = 1 (of " +
                std::to_string(queries.size()) + "), depth 0 " + (noop ? "is a no-op" : "changed the list")};
}

Outcome statistics() {
    // Cushny & Peebles sleep data as printed in Student (1908)
    const std::vector<double> g1{0.7, -1.6, -0.2, -1.2, -0.1, 3.4, 3.7, 0.8, 0.0, 2.0};
    const std::vector<double> g2{1.9, 0.8, 1.1, 0.1, -0.1, 4.4, 5.5, 1.6, 4.6, 3.4};
    auto r = paired_ttest(g1, g2, 0.05, 3);
    const double dt = std::fabs(r.t - -4.062127683382037);
    const double dp = std::fabs(r.p - 0.00283289019738427);
    const bool ok = dt <= 1e-6 && dp <= 1e-6 && std::fabs(r.threshold - 0.05 / 3.0) < 1e-15 && r.significant &&
                    !paired_ttest(g1, g1).significant;
    return {ok, fmt("t %.6f, p %.8f, threshold %.6f", r.t, r.p, r.threshold)};
}

Outcome ab_determinism() {
    std::size_t control = 0, treatment = 0;
    for (std::int64_t u = 0; u < 1000; ++u) (assign_arm(u).arm == Arm::control_bm25 ? control : treatment) += 1;
    std::vector<FunnelEvent> log;
    std::size_t n = 0;
    auto add = [&](std::size_t count, EventKind kind) {
        for (std::size_t i = 0; i < count; ++i) {
            FunnelEvent e;
            e.event_id = "e" + std::to_string(n++);
            e.user_id = static_cast<std::int64_t>(2 * (i % 50));
            e.arm = Arm::control_bm25;
            e.kind = kind;
            e.query_id = "q01";
            if (kind != EventKind::open_skill_card) e.doc_id = "c0001";
            log.push_back(e);
        }
    };
    add(1000, EventKind::open_skill_card);
    add(500, EventKind::open_course_card);
    add(145, EventKind::go_to_course);
    const auto rates = funnel_rates(log, Arm::control_bm25);
    const bool ok = control == 500 && treatment == 500 && std::fabs(rates.course_per_skill - 0.50) < 1e-12 &&
                    std::fabs(rates.go_per_course - 0.29) < 1e-12;
    return {ok, std::to_string(control) + " control / " + std::to_string(treatment) + " treatment, rates " +
                    fmt("%.2f and %.2f", rates.course_per_skill, rates.go_per_course)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    struct Criterion {
        int id;
        const char* name;
        double limit_s;
        Outcome (*run)();
    };
    const Criterion criteria[] = {
        {1, "metric oracle", 1.0, metric_oracle},
        {2, "bm25 equivalence", 5.0, bm25_equivalence},
        {3, "quantization round trip", 5.0, quant_round_trip},
        {4, "smoothquant migration", 10.0, smoothquant_exactness},
        {5, "model size ratio", 10.0, size_ratio},
        {6, "throughput speed-up", 600.0, throughput_speedup},
        {7, "quantized ranking fidelity", 120.0, ranking_fidelity},
        {8, "gradient check", 10.0, gradient_check},
        {9, "end-to-end pipeline", 30.0, pipeline_property},
        {10, "statistics", 1.0, statistics},
        {11, "a/b determinism", 1.0, ab_determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool pass = o.pass && secs <= c.limit_s;
        failures += !pass;
        std::printf("%s criterion %d: %s (%s; %.2fs of %.0fs)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.limit_s);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
