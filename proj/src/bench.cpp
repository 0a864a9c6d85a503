// SPDX-License-Identifier: Apache-2.0
#include "skillrank/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

namespace skillrank {

void BenchProtocol::validate() const {
    if (warmup_queries == 0 || measured_pairs == 0 || batch_size == 0 || repetitions == 0 || input_len == 0 ||
        threads == 0)
        throw std::invalid_argument("benchmark protocol values must all be positive");
}

BenchResult summarize_throughput(std::vector<double> per_rep) {
    BenchResult r;
    if (per_rep.empty()) return r;
    const double n = static_cast<double>(per_rep.size());
    r.mean = std::accumulate(per_rep.begin(), per_rep.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : per_rep) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / n);
    r.per_rep = std::move(per_rep);
    return r;
}

namespace {

void run_batches(const BatchScorer& scorer, const std::vector<std::vector<TokenId>>& pairs, std::size_t count,
                 std::size_t batch_size) {
    std::vector<std::vector<TokenId>> batch;
    for (std::size_t done = 0; done < count;) {
        const std::size_t n = std::min(batch_size, count - done);
        batch.clear();
        for (std::size_t i = 0; i < n; ++i) batch.push_back(pairs[(done + i) % pairs.size()]);
        scorer(batch);
        done += n;
    }
}

}  // namespace

BenchResult measure_throughput(const BatchScorer& scorer, const std::vector<std::vector<TokenId>>& pairs,
                               const BenchProtocol& protocol) {
    protocol.validate();
    if (pairs.size() < protocol.measured_pairs)
        throw std::invalid_argument("benchmark needs " + std::to_string(protocol.measured_pairs) + " pairs, got " +
                                    std::to_string(pairs.size()));
    std::vector<double> per_rep;
    for (std::size_t rep = 0; rep < protocol.repetitions; ++rep) {
        try {
            run_batches(scorer, pairs, protocol.warmup_queries, protocol.batch_size);
            const auto start = std::chrono::steady_clock::now();
            run_batches(scorer, pairs, protocol.measured_pairs, protocol.batch_size);
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
            per_rep.push_back(static_cast<double>(protocol.measured_pairs) / elapsed.count());
        } catch (const std::exception& e) {
            spdlog::error("benchmark aborted in repetition {}: {}; completed: {}", rep + 1, e.what(), per_rep.size());
            throw BenchAborted(e.what(), per_rep);
        }
        spdlog::debug("repetition {}: {:.3f} pairs/s", rep + 1, per_rep.back());
    }
    auto result = summarize_throughput(std::move(per_rep));
    result.input_len = protocol.input_len;
    return result;
}

BenchResult measure_throughput(const Model& model, const std::vector<std::vector<TokenId>>& pairs,
                               const BenchProtocol& protocol, Pooling pooling) {
    std::vector<std::vector<TokenId>> truncated;
    truncated.reserve(pairs.size());
    for (const auto& p : pairs) truncated.push_back(truncate_tokens(p, protocol.input_len));

    const std::size_t workers = protocol.threads;
    BatchScorer scorer = [&](std::span<const std::vector<TokenId>> batch) {
        if (workers == 1) {
            score_batch(model, {batch.begin(), batch.end()}, pooling);
            return;
        }
        std::vector<std::future<void>> jobs;
        const std::size_t chunk = (batch.size() + workers - 1) / workers;
        for (std::size_t start = 0; start < batch.size(); start += chunk) {
            const auto part = batch.subspan(start, std::min(chunk, batch.size() - start));
            jobs.push_back(std::async(std::launch::async,
                                      [&, part] { score_batch(model, {part.begin(), part.end()}, pooling); }));
        }
        for (auto& j : jobs) j.get();
    };
    auto result = measure_throughput(scorer, truncated, protocol);
    result.scheme = model.scheme;
    result.model_size = model.parameter_bytes();
    return result;
}

std::string bench_report(const std::vector<BenchResult>& results) {
    struct Row {
        std::map<std::size_t, const BenchResult*> by_len;
        std::size_t size = 0;
    };
    std::vector<std::string> order;
    std::map<std::string, Row> rows;
    for (const auto& r : results) {
        if (!rows.count(r.scheme)) order.push_back(r.scheme);
        auto& row = rows[r.scheme];
        row.by_len[r.input_len] = &r;
        row.size = std::max(row.size, r.model_size);
    }
    const Row* base = rows.count("none") ? &rows.at("none") : nullptr;

    auto cell = [](const Row& row, std::size_t len) -> std::string {
        auto it = row.by_len.find(len);
        if (it == row.by_len.end()) return "-";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f (%.2f)", it->second->mean, it->second->std);
        return buf;
    };
    auto speedup = [&](const Row& row, std::size_t len) -> std::string {
        if (!base) return "-";
        auto a = row.by_len.find(len);
        auto b = base->by_len.find(len);
        if (a == row.by_len.end() || b == base->by_len.end() || b->second->mean <= 0.0) return "-";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2fx", a->second->mean / b->second->mean);
        return buf;
    };

    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %-20s %-20s %10s %10s %10s\n", "scheme", "throughput@256",
                  "throughput@512", "size MB", "speedup256", "speedup512");
    out << line;
    for (const auto& name : order) {
        const auto& row = rows.at(name);
        std::snprintf(line, sizeof line, "%-22s %-20s %-20s %10.1f %10s %10s\n", name.c_str(), cell(row, 256).c_str(),
                      cell(row, 512).c_str(), static_cast<double>(row.size) / 1e6, speedup(row, 256).c_str(),
                      speedup(row, 512).c_str());
        out << line;
    }
    if (base && base->size > 0)
        for (const auto& name : order) {
            if (name == "none" || rows.at(name).size == 0) continue;
            std::snprintf(line, sizeof line, "size ratio none/%s: %.3f\n", name.c_str(),
                          static_cast<double>(base->size) / static_cast<double>(rows.at(name).size));
            out << line;
        }
    return out.str();
}

}  // namespace skillrank
