// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "skillrank/dense_index.hpp"
#include "support.hpp"

using namespace skillrank;

namespace {

using Rows = std::vector<std::pair<std::string, std::vector<double>>>;

ScoredList list_of(std::vector<std::string> ids) {
    ScoredList l;
    double s = static_cast<double>(ids.size());
    for (auto& id : ids) l.entries.push_back({std::move(id), s--});
    return l;
}

EmbeddingStore random_store(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Rows rows;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(dim);
        for (auto& x : v) x = g(rng);
        rows.emplace_back("d" + std::to_string(1000 + i), v);
    }
    return EmbeddingStore(dim, rows);
}

}  // namespace

TEST(Embeddings, ParseFile) {
    std::istringstream in("dim=4 count=3\na\t1 0 0 0\nb\t0 2 0 0\nc\t1 1 1 1\n");
    auto store = parse_embeddings(in);
    EXPECT_EQ(store.dim(), 4u);
    EXPECT_EQ(store.size(), 3u);
    EXPECT_DOUBLE_EQ(store.find("b")[1], 1.0);
    EXPECT_DOUBLE_EQ(store.find("c")[0], 0.5);
    EXPECT_TRUE(store.find("zz").empty());
}

TEST(Embeddings, Errors) {
    std::istringstream mixed("dim=4 count=2\na\t1 0 0 0\nb\t1 0 0 0 1\n");
    EXPECT_THROW(parse_embeddings(mixed), std::invalid_argument);
    std::istringstream zero("dim=2 count=1\nzeroed\t0 0\n");
    try {
        parse_embeddings(zero);
        FAIL() << "expected an error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("zeroed"), std::string::npos);
    }
    std::istringstream header("4 3\n");
    EXPECT_THROW(parse_embeddings(header), std::invalid_argument);
    std::istringstream count("dim=2 count=2\na\t1 0\n");
    EXPECT_THROW(parse_embeddings(count), std::invalid_argument);
    std::istringstream number("dim=2 count=1\na\t1 x\n");
    EXPECT_THROW(parse_embeddings(number), std::invalid_argument);
}

TEST(Embeddings, NormalizeByHand) {
    auto v = l2_normalize(std::vector<double>{3.0, 4.0});
    EXPECT_DOUBLE_EQ(v[0], 0.6);
    EXPECT_DOUBLE_EQ(v[1], 0.8);
    EXPECT_THROW(l2_normalize(std::vector<double>{0.0, 0.0}), std::invalid_argument);
    EXPECT_THROW(l2_normalize(std::vector<double>{NAN, 1.0}), std::invalid_argument);
}

TEST(Embeddings, StoredVectorsHaveUnitNorm) {
    auto store = random_store(50, 16, 1);
    for (std::size_t r = 0; r < store.size(); ++r) {
        double sq = 0.0;
        for (double x : store.vector(r)) sq += x * x;
        EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
    }
}

TEST(Embeddings, WriteThenReadRoundTrip) {
    Rows rows{{"x", {0.25, -1.5, 3.0}}, {"y", {1.0, 2.0, 2.0}}};
    std::stringstream s;
    write_embeddings(s, 3, rows);
    auto store = parse_embeddings(s);
    EXPECT_EQ(store.size(), 2u);
    auto y = store.find("y");
    EXPECT_NEAR(y[0], 1.0 / 3.0, 1e-8);
    fixtures::TempDir dir;
    fixtures::write_file(dir / "e.tsv", "dim=2 count=1\nq\t0 5\n");
    EXPECT_DOUBLE_EQ(load_embeddings(dir / "e.tsv").find("q")[1], 1.0);
}

TEST(CosineTopk, Examples) {
    EmbeddingStore store(2, {{"d1", {1.0, 0.0}}, {"d2", {0.0, 1.0}}});
    auto r = cosine_topk(store, std::vector<double>{1.0, 0.0}, 1);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r.entries[0].doc_id, "d1");
    EXPECT_DOUBLE_EQ(r.entries[0].score, 1.0);
    EXPECT_EQ(r.stage, Stage::dense);

    auto all = cosine_topk(store, std::vector<double>{0.2, 1.0}, 10);
    EXPECT_EQ(all.doc_ids(), (std::vector<std::string>{"d2", "d1"}));
    EXPECT_THROW(cosine_topk(store, std::vector<double>{1.0, 0.0, 0.0}, 1), std::invalid_argument);
    EXPECT_THROW(cosine_topk(store, std::vector<double>{1.0, 0.0}, 0), std::invalid_argument);
}

TEST(CosineTopk, SelfSimilarityRanksFirst) {
    auto store = random_store(100, 8, 2);
    for (std::size_t r = 0; r < store.size(); r += 9) {
        auto v = store.vector(r);
        std::vector<double> q(v.begin(), v.end());
        for (auto& x : q) x *= 3.0;
        auto top = cosine_topk(store, q, 1);
        EXPECT_EQ(top.entries[0].doc_id, store.id(r));
        EXPECT_NEAR(top.entries[0].score, 1.0, 1e-6);
    }
}

TEST(CosineTopk, PrefixAndRange) {
    auto store = random_store(80, 12, 3);
    std::vector<double> q(12, 0.0);
    q[0] = 1.0;
    q[5] = -2.0;
    auto full = cosine_topk(store, q, 1000);
    EXPECT_EQ(full.size(), store.size());
    check_scored_list(full);
    for (const auto& e : full.entries) {
        EXPECT_GE(e.score, -1.0 - 1e-6);
        EXPECT_LE(e.score, 1.0 + 1e-6);
    }
    for (std::size_t k = 1; k < 80; k += 11) {
        auto a = cosine_topk(store, q, k);
        auto b = cosine_topk(store, q, k + 1);
        for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(a.entries[i], b.entries[i]);
    }
}

TEST(CosineTopk, TiesByDocId) {
    EmbeddingStore store(2, {{"c", {1.0, 0.0}}, {"a", {2.0, 0.0}}, {"b", {0.0, 1.0}}});
    auto r = cosine_topk(store, std::vector<double>{1.0, 0.0}, 3);
    EXPECT_EQ(r.doc_ids(), (std::vector<std::string>{"a", "c", "b"}));
}

TEST(Interleave, Examples) {
    EXPECT_EQ(interleave_pools(list_of({"x", "y"}), list_of({"y", "z"}), 2),
              (std::vector<std::string>{"x", "y", "z"}));
    EXPECT_EQ(interleave_pools(list_of({"x", "y", "w"}), ScoredList{}, 2), (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(interleave_pools(list_of({"x"}), list_of({"y"}), 1, false), (std::vector<std::string>{"y", "x"}));
    EXPECT_THROW(interleave_pools(list_of({"x"}), list_of({"y"}), 0), std::invalid_argument);
}

TEST(Interleave, SharedDocsShrinkPool) {
    std::vector<std::string> a, b;
    for (int i = 0; i < 25; ++i) a.push_back("a" + std::to_string(i));
    for (int i = 0; i < 10; ++i) b.push_back("a" + std::to_string(2 * i));
    for (int i = 0; i < 15; ++i) b.push_back("b" + std::to_string(i));
    EXPECT_EQ(interleave_pools(list_of(a), list_of(b), 25).size(), 40u);
}

TEST(Interleave, NoDuplicatesAndSourceOrderPreserved) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> universe;
        for (int i = 0; i < 30; ++i) universe.push_back("d" + std::to_string(i));
        std::shuffle(universe.begin(), universe.end(), rng);
        std::vector<std::string> a(universe.begin(), universe.begin() + 15);
        std::shuffle(universe.begin(), universe.end(), rng);
        std::vector<std::string> b(universe.begin(), universe.begin() + 15);
        const std::size_t depth = 1 + static_cast<std::size_t>(trial % 15);
        auto pool = interleave_pools(list_of(a), list_of(b), depth);
        EXPECT_LE(pool.size(), 2 * depth);
        EXPECT_EQ(std::set<std::string>(pool.begin(), pool.end()).size(), pool.size());
        // ids found in only one source keep that source's order in the pool
        for (const auto* src : {&a, &b}) {
            const auto* other = src == &a ? &b : &a;
            std::vector<std::string> expected, got;
            for (std::size_t i = 0; i < depth; ++i)
                if (std::find(other->begin(), other->begin() + static_cast<std::ptrdiff_t>(depth), (*src)[i]) ==
                    other->begin() + static_cast<std::ptrdiff_t>(depth))
                    expected.push_back((*src)[i]);
            for (const auto& id : pool)
                if (std::find(expected.begin(), expected.end(), id) != expected.end()) got.push_back(id);
            EXPECT_EQ(got, expected);
        }
    }
}

TEST(PoolQuality, Thresholds) {
    // q = e1; a doc at angle with cos 0.61 has coordinates (0.61, sqrt(1 - 0.61^2)).
    const double c = 0.61, s = std::sqrt(1.0 - c * c);
    Rows rows;
    for (int i = 0; i < 5; ++i) rows.emplace_back("hit" + std::to_string(i), std::vector<double>{c, s});
    rows.emplace_back("miss", std::vector<double>{0.1, 1.0});
    EmbeddingStore five(2, rows);
    auto r = pool_quality_check(five, std::vector<double>{1.0, 0.0});
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.count, 5u);

    rows.erase(rows.begin());
    EmbeddingStore four(2, rows);
    EXPECT_FALSE(pool_quality_check(four, std::vector<double>{1.0, 0.0}).pass);

    // [3,4] / 5 = [0.6, 0.8] exactly, so the cosine with e1 is exactly 0.6
    EmbeddingStore boundary(2, {{"edge", {3.0, 4.0}}});
    auto b = pool_quality_check(boundary, std::vector<double>{1.0, 0.0}, 0.6, 1);
    EXPECT_EQ(b.count, 1u);
    EXPECT_TRUE(b.pass);
}

TEST(Embeddings, BundledMiniStores) {
    auto docs = load_embeddings(fixtures::data_dir() / "doc_embeddings.tsv");
    auto queries = load_embeddings(fixtures::data_dir() / "query_embeddings.tsv");
    EXPECT_EQ(docs.size(), 500u);
    EXPECT_EQ(queries.size(), 20u);
    EXPECT_EQ(docs.dim(), queries.dim());
    EXPECT_FALSE(queries.find("Python for Data Analyst").empty());
}
