// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "skillrank/corpus.hpp"
#include "skillrank/encoder.hpp"
#include "skillrank/eval.hpp"
#include "skillrank/scored_list.hpp"

namespace skillrank {

enum class Pooling { first, mean };

std::string_view to_string(Pooling pooling);
Pooling parse_pooling(std::string_view text);

struct RerankConfig {
    std::size_t depth = 20;
    std::size_t max_input_len = 256;
    FieldVariant variant;
    bool include_skill_desc = false;
    Pooling pooling = Pooling::first;

    /// max_input_len must be 128, 256 or 512 and fit the encoder when given.
    void validate(const EncoderConfig* encoder = nullptr) const;
};

/// First min(size, max_len) ids. Throws std::invalid_argument when max_len is 0.
std::vector<TokenId> truncate_tokens(std::span<const TokenId> ids, std::size_t max_len);

/// Pooled final hidden state of one sequence (first position or mean).
std::vector<float> pooled_features(const Model& model, std::span<const TokenId> ids, Pooling pooling);
/// head . pooled_features
double score_tokens(const Model& model, std::span<const TokenId> ids, Pooling pooling = Pooling::first);
/// Same scores as score_tokens, computed through one padded batch.
std::vector<double> score_batch(const Model& model, const std::vector<std::vector<TokenId>>& sequences,
                                Pooling pooling = Pooling::first);

/// Re-rank input tokens for (q, d), truncated to cfg.max_input_len.
std::vector<TokenId> rerank_tokens(const Tokenizer& tokenizer, const Query& q, const CourseDoc& d,
                                   const RerankConfig& cfg);
double score(const Model& model, const Tokenizer& tokenizer, const Query& q, const CourseDoc& d,
             const RerankConfig& cfg);

using DocScorer = std::function<double(const std::string& doc_id)>;

/// Rescores the first `depth` entries and sorts them by score (ties by doc id).
/// Entries below depth keep their first-stage order; their scores are
/// rewritten to descend below the rescored head so the list stays ordered.
/// depth 0 returns the input with the stage set to reranked.
ScoredList rerank(const ScoredList& candidates, std::size_t depth, const DocScorer& scorer);
ScoredList rerank(const Model& model, const Tokenizer& tokenizer, const Corpus& corpus, const Query& q,
                  const ScoredList& candidates, const RerankConfig& cfg);

/// -sum_i y_i log softmax(s)_i with y = labels / sum(labels).
/// Throws std::invalid_argument on length mismatch, empty input, negative
/// labels or labels summing to 0.
double listwise_softmax_loss(std::span<const double> scores, std::span<const double> labels);
/// softmax(s)_j - y_j
std::vector<double> loss_gradient(std::span<const double> scores, std::span<const double> labels);

struct TrainList {
    std::string query_id;
    std::vector<std::string> doc_ids;
    std::vector<double> labels;  // 1 for the positive, 0 for negatives
};

/// One positive drawn from the query's judged-relevant documents plus
/// list_size - 1 negatives drawn without replacement from run documents
/// without a positive label. Empty when the query has no positive; throws
/// std::invalid_argument when the run holds too few negatives.
std::optional<TrainList> sample_hard_negatives(const ScoredList& run, const Qrels& qrels, std::size_t list_size,
                                               std::uint64_t seed);

/// Frozen-encoder features of one training list.
struct FeatureList {
    std::vector<std::vector<float>> features;  // pooled hidden state per document
    std::vector<double> labels;
};

FeatureList build_feature_list(const Model& model, const Tokenizer& tokenizer, const Query& q, const Corpus& corpus,
                               const TrainList& list, const RerankConfig& cfg);

enum class Optimizer { sgd, adamw };

struct TrainOptions {
    double lr = 1e-4;
    std::size_t steps = 50;
    Optimizer optimizer = Optimizer::sgd;
    double weight_decay = 0.01;  // adamw only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct TrainResult {
    Model model;
    std::vector<double> loss_trace;  // mean loss before each step, then after the last
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, std::vector<double> trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const { return trace_; }

private:
    std::vector<double> trace_;
};

/// Full-batch descent on the scoring head with the listwise loss averaged over
/// lists; the encoder stays frozen.
TrainResult train_toy(const Model& model, const std::vector<FeatureList>& lists, const TrainOptions& options);

}  // namespace skillrank
