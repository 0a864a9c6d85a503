// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "skillrank/scored_list.hpp"

namespace skillrank {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Graded judgments: 0 (not relevant / wrong context), 1 (relevant but
/// generic), 2 (relevant and specific to the occupation).
class Qrels {
public:
    /// Throws std::invalid_argument on a grade outside {0,1,2} or a duplicate pair.
    void add(const std::string& query_id, const std::string& doc_id, int grade);
    /// 0 for unjudged documents.
    int grade(std::string_view query_id, std::string_view doc_id) const;
    bool has_query(std::string_view query_id) const;
    const std::map<std::string, int, std::less<>>* judgments(std::string_view query_id) const;
    std::vector<std::string> query_ids() const;
    std::size_t relevant_count(std::string_view query_id) const;  // grade >= 1
    std::size_t size() const;

private:
    std::map<std::string, std::map<std::string, int, std::less<>>, std::less<>> grades_;
};

using Run = std::map<std::string, ScoredList, std::less<>>;

/// "qid 0 docid grade" per line.
Qrels parse_qrels(std::istream& in);
Qrels load_qrels(const std::filesystem::path& path);
/// "qid Q0 docid rank score tag" per line; entries are ordered by rank.
Run parse_run(std::istream& in);
Run load_run(const std::filesystem::path& path);
void write_run(std::ostream& out, const Run& run, std::string_view tag);
void write_qrels(std::ostream& out, const Qrels& qrels);

enum class Gain { exponential, linear };

/// DCG@k = sum (2^g - 1) / log2(i + 1) (or g / log2(i + 1) with Gain::linear)
/// normalized by the DCG of the judged grades sorted descending; 0 if that is 0.
double ndcg_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k,
                 Gain gain = Gain::exponential);
/// Reciprocal rank of the first document with grade >= 1 within the top k.
double mrr_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k);
/// Sum of precision at each relevant hit in the top k, divided by min(R, k).
double map_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k);
/// Relevant documents in the top k over all relevant documents (0 if none).
double recall_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k);

enum class MetricKind { ndcg, mrr, map, recall };

struct MetricSpec {
    MetricKind kind = MetricKind::ndcg;
    std::size_t k = 10;

    std::string name() const;  // e.g. "ndcg@10"
    static MetricSpec parse(std::string_view text);
    bool operator==(const MetricSpec&) const = default;
};

std::vector<MetricSpec> parse_metric_list(std::string_view text);  // comma separated
double compute_metric(const MetricSpec& metric, std::span<const std::string> ranking, const Qrels& qrels,
                      std::string_view query_id, Gain gain = Gain::exponential);

struct EvalReport {
    std::vector<MetricSpec> metrics;
    std::vector<std::string> query_ids;           // every query in the qrels, sorted
    std::map<std::string, std::vector<double>> per_query;  // values in metric order
    std::vector<double> means;
    std::vector<std::string> warnings;

    /// Per-query values of one metric in query_ids order.
    std::vector<double> column(std::size_t metric_index) const;
};

/// Means run over every query in the qrels; a query absent from the run
/// scores 0 and produces a warning. Disjoint query sets are an error.
EvalReport evaluate_run(const Run& run, const Qrels& qrels, const std::vector<MetricSpec>& metrics,
                        Gain gain = Gain::exponential);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t df = 0;
    double threshold = 0.0;  // alpha / m
    bool significant = false;
};

/// Two-sided paired t-test with Bonferroni threshold alpha / comparisons.
/// Zero variance of the differences gives p = 1 (not significant).
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, double alpha = 0.05,
                         std::size_t comparisons = 1);

/// Tau-b rank correlation; O(n^2).
double kendall_tau(std::span<const double> x, std::span<const double> y);

}  // namespace skillrank
