// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "skillrank/encoder.hpp"
#include "skillrank/ranker.hpp"

namespace skillrank {

struct BenchProtocol {
    std::size_t warmup_queries = 10;
    std::size_t measured_pairs = 200;
    std::size_t batch_size = 16;
    std::size_t repetitions = 8;
    std::size_t input_len = 256;
    std::size_t threads = 1;

    void validate() const;  // every field positive
};

struct BenchResult {
    std::string scheme;
    std::size_t input_len = 0;
    double mean = 0.0;  // pairs per second
    double std = 0.0;   // population standard deviation
    std::vector<double> per_rep;
    std::size_t model_size = 0;  // bytes
};

/// Scores one batch of token sequences.
using BatchScorer = std::function<void(std::span<const std::vector<TokenId>>)>;

/// Raised when the scorer fails; holds the repetitions completed so far.
class BenchAborted : public std::runtime_error {
public:
    BenchAborted(const std::string& what, std::vector<double> completed)
        : std::runtime_error(what), completed_(std::move(completed)) {}
    const std::vector<double>& completed() const { return completed_; }

private:
    std::vector<double> completed_;
};

/// Mean and population std of per-repetition throughputs.
BenchResult summarize_throughput(std::vector<double> per_rep);

/// Per repetition: warmup_queries pairs untimed, then measured_pairs pairs in
/// batches of batch_size timed with a monotonic clock. Needs at least
/// measured_pairs pairs (std::invalid_argument otherwise).
BenchResult measure_throughput(const BatchScorer& scorer, const std::vector<std::vector<TokenId>>& pairs,
                               const BenchProtocol& protocol);
/// Scores with the model; each batch is split across protocol.threads workers.
BenchResult measure_throughput(const Model& model, const std::vector<std::vector<TokenId>>& pairs,
                               const BenchProtocol& protocol, Pooling pooling = Pooling::first);

/// One row per scheme: throughput at 256 and 512 with std in brackets, size in
/// MB, and speed-up over the "none" row when present; ends with the size ratio
/// of "none" over every quantized scheme.
std::string bench_report(const std::vector<BenchResult>& results);

}  // namespace skillrank
