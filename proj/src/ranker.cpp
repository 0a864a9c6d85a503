// SPDX-License-Identifier: Apache-2.0
#include "skillrank/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace skillrank {

std::string_view to_string(Pooling pooling) { return pooling == Pooling::first ? "first" : "mean"; }

Pooling parse_pooling(std::string_view text) {
    if (text == "first") return Pooling::first;
    if (text == "mean") return Pooling::mean;
    throw std::invalid_argument("unknown pooling '" + std::string(text) + "'");
}

void RerankConfig::validate(const EncoderConfig* encoder) const {
    if (max_input_len != 128 && max_input_len != 256 && max_input_len != 512)
        throw std::invalid_argument("max_input_len must be 128, 256 or 512");
    if (encoder && max_input_len > static_cast<std::size_t>(encoder->max_input_len))
        throw std::invalid_argument("max_input_len " + std::to_string(max_input_len) + " exceeds encoder limit " +
                                    std::to_string(encoder->max_input_len));
}

std::vector<TokenId> truncate_tokens(std::span<const TokenId> ids, std::size_t max_len) {
    if (max_len == 0) throw std::invalid_argument("max_len must be >= 1");
    return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), max_len))};
}

namespace {

void pool_rows(const float* rows, std::size_t len, std::size_t d, Pooling pooling, std::vector<float>& out) {
    out.assign(d, 0.0f);
    if (pooling == Pooling::first) {
        std::copy_n(rows, d, out.begin());
        return;
    }
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += rows[i * d + j];
    for (auto& v : out) v /= static_cast<float>(len);
}

double project(const Model& model, std::span<const float> pooled) {
    double s = 0.0;
    for (std::size_t j = 0; j < pooled.size(); ++j) s += static_cast<double>(model.head[j]) * pooled[j];
    return s;
}

}  // namespace

std::vector<float> pooled_features(const Model& model, std::span<const TokenId> ids, Pooling pooling) {
    if (ids.empty()) throw std::invalid_argument("cannot score an empty token sequence");
    if (ids.size() > static_cast<std::size_t>(model.config.max_input_len))
        throw std::invalid_argument("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_input_len");
    const Matrix hidden = model.encode_sequence(ids);
    std::vector<float> pooled;
    pool_rows(hidden.data.data(), hidden.rows, hidden.cols, pooling, pooled);
    return pooled;
}

double score_tokens(const Model& model, std::span<const TokenId> ids, Pooling pooling) {
    return project(model, pooled_features(model, ids, pooling));
}

std::vector<double> score_batch(const Model& model, const std::vector<std::vector<TokenId>>& sequences,
                                Pooling pooling) {
    for (const auto& s : sequences)
        if (s.empty()) throw std::invalid_argument("cannot score an empty token sequence");
    const TokenBatch batch = make_batch(sequences, 0);
    const HiddenStates hidden = model.encode(batch);
    std::vector<double> scores;
    scores.reserve(sequences.size());
    std::vector<float> pooled;
    for (std::size_t b = 0; b < sequences.size(); ++b) {
        pool_rows(hidden.at(b, 0), sequences[b].size(), hidden.d_model, pooling, pooled);
        scores.push_back(project(model, pooled));
    }
    return scores;
}

std::vector<TokenId> rerank_tokens(const Tokenizer& tokenizer, const Query& q, const CourseDoc& d,
                                   const RerankConfig& cfg) {
    const auto ids = tokenizer.encode(build_rerank_input(q, d, cfg.variant, cfg.include_skill_desc));
    return truncate_tokens(ids, cfg.max_input_len);
}

double score(const Model& model, const Tokenizer& tokenizer, const Query& q, const CourseDoc& d,
             const RerankConfig& cfg) {
    return score_tokens(model, rerank_tokens(tokenizer, q, d, cfg), cfg.pooling);
}

ScoredList rerank(const ScoredList& candidates, std::size_t depth, const DocScorer& scorer) {
    ScoredList out = candidates;
    out.stage = Stage::reranked;
    if (depth == 0 || candidates.empty()) return out;
    const std::size_t head = std::min(depth, candidates.size());
    for (std::size_t i = 0; i < head; ++i) out.entries[i].score = scorer(out.entries[i].doc_id);
    std::sort(out.entries.begin(), out.entries.begin() + static_cast<std::ptrdiff_t>(head),
              [](const ScoredEntry& a, const ScoredEntry& b) {
                  return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
              });
    const double floor = out.entries[head - 1].score;
    for (std::size_t i = head; i < out.entries.size(); ++i)
        out.entries[i].score = floor - 1.0 - static_cast<double>(i - head);
    return out;
}

ScoredList rerank(const Model& model, const Tokenizer& tokenizer, const Corpus& corpus, const Query& q,
                  const ScoredList& candidates, const RerankConfig& cfg) {
    return rerank(candidates, cfg.depth,
                  [&](const std::string& doc_id) { return score(model, tokenizer, q, corpus.at(doc_id), cfg); });
}

namespace {

// Normalized targets and log-softmax of the scores.
void softmax_terms(std::span<const double> scores, std::span<const double> labels, std::vector<double>& target,
                   std::vector<double>& log_p) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    if (scores.empty()) throw std::invalid_argument("empty list");
    double label_sum = 0.0;
    for (double y : labels) {
        if (y < 0.0) throw std::invalid_argument("labels must be non-negative");
        label_sum += y;
    }
    if (label_sum <= 0.0) throw std::invalid_argument("list has no positive label");
    const double m = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - m);
    const double log_z = std::log(z);
    target.resize(scores.size());
    log_p.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        target[i] = labels[i] / label_sum;
        log_p[i] = scores[i] - m - log_z;
    }
}

}  // namespace

double listwise_softmax_loss(std::span<const double> scores, std::span<const double> labels) {
    std::vector<double> target, log_p;
    softmax_terms(scores, labels, target, log_p);
    double loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (target[i] != 0.0) loss -= target[i] * log_p[i];
    return loss;
}

std::vector<double> loss_gradient(std::span<const double> scores, std::span<const double> labels) {
    std::vector<double> target, log_p;
    softmax_terms(scores, labels, target, log_p);
    std::vector<double> grad(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) grad[i] = std::exp(log_p[i]) - target[i];
    return grad;
}

std::optional<TrainList> sample_hard_negatives(const ScoredList& run, const Qrels& qrels, std::size_t list_size,
                                               std::uint64_t seed) {
    if (list_size < 2) throw std::invalid_argument("list_size must be >= 2");
    std::vector<std::string> positives;
    if (const auto* judged = qrels.judgments(run.query_id))
        for (const auto& [doc, grade] : *judged)
            if (grade >= 1) positives.push_back(doc);
    if (positives.empty()) return std::nullopt;

    std::vector<std::string> negatives;
    for (const auto& e : run.entries)
        if (qrels.grade(run.query_id, e.doc_id) < 1) negatives.push_back(e.doc_id);
    if (negatives.size() < list_size - 1)
        throw std::invalid_argument("query " + run.query_id + " has " + std::to_string(negatives.size()) +
                                    " negatives, need " + std::to_string(list_size - 1));

    std::mt19937_64 rng(seed);
    TrainList list;
    list.query_id = run.query_id;
    list.doc_ids.push_back(positives[std::uniform_int_distribution<std::size_t>(0, positives.size() - 1)(rng)]);
    // partial Fisher-Yates
    for (std::size_t i = 0; i + 1 < list_size; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, negatives.size() - 1)(rng);
        std::swap(negatives[i], negatives[j]);
        list.doc_ids.push_back(negatives[i]);
    }
    list.labels.assign(list_size, 0.0);
    list.labels[0] = 1.0;
    return list;
}

FeatureList build_feature_list(const Model& model, const Tokenizer& tokenizer, const Query& q, const Corpus& corpus,
                               const TrainList& list, const RerankConfig& cfg) {
    FeatureList out;
    out.labels = list.labels;
    for (const auto& id : list.doc_ids)
        out.features.push_back(pooled_features(model, rerank_tokens(tokenizer, q, corpus.at(id), cfg), cfg.pooling));
    return out;
}

TrainResult train_toy(const Model& model, const std::vector<FeatureList>& lists, const TrainOptions& options) {
    if (lists.empty()) throw std::invalid_argument("no training lists");
    const std::size_t d = model.head.size();
    for (const auto& l : lists) {
        if (l.features.size() != l.labels.size()) throw std::invalid_argument("features and labels differ in length");
        for (const auto& f : l.features)
            if (f.size() != d) throw std::invalid_argument("feature width does not match the scoring head");
    }

    std::vector<double> w(model.head.begin(), model.head.end());
    std::vector<double> m(d, 0.0), v(d, 0.0), grad(d);
    std::vector<double> scores;
    TrainResult result{model, {}};

    auto loss_and_grad = [&](bool want_grad) {
        double total = 0.0;
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& l : lists) {
            scores.assign(l.features.size(), 0.0);
            for (std::size_t i = 0; i < l.features.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) scores[i] += w[j] * l.features[i][j];
            total += listwise_softmax_loss(scores, l.labels);
            if (!want_grad) continue;
            const auto g = loss_gradient(scores, l.labels);
            for (std::size_t i = 0; i < l.features.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) grad[j] += g[i] * l.features[i][j];
        }
        const double n = static_cast<double>(lists.size());
        for (auto& gj : grad) gj /= n;
        return total / n;
    };

    for (std::size_t step = 0; step <= options.steps; ++step) {
        const bool last = step == options.steps;
        const double loss = loss_and_grad(!last);
        result.loss_trace.push_back(loss);
        if (!std::isfinite(loss))
            throw TrainingDiverged("non-finite loss at step " + std::to_string(step), result.loss_trace);
        if (last) break;
        if (options.optimizer == Optimizer::sgd) {
            for (std::size_t j = 0; j < d; ++j) w[j] -= options.lr * grad[j];
        } else {
            const double t = static_cast<double>(step + 1);
            const double c1 = 1.0 - std::pow(options.beta1, t);
            const double c2 = 1.0 - std::pow(options.beta2, t);
            for (std::size_t j = 0; j < d; ++j) {
                m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * grad[j];
                v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * grad[j] * grad[j];
                w[j] -= options.lr * ((m[j] / c1) / (std::sqrt(v[j] / c2) + options.adam_eps) + options.weight_decay * w[j]);
            }
        }
    }
    // lr = 0 must leave the head bit-identical
    if (options.lr != 0.0)
        for (std::size_t j = 0; j < d; ++j) result.model.head[j] = static_cast<float>(w[j]);
    return result;
}

}  // namespace skillrank
