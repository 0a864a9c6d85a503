// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "skillrank/corpus.hpp"
#include "skillrank/scored_list.hpp"

namespace skillrank {

/// Lowercases and splits into words. Letters, digits and any non-ASCII code
/// point outside the common punctuation blocks are word characters; '+' and
/// '#' are kept when they follow a word character ("c++", "c#").
std::vector<std::string> analyze(std::string_view text);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
    double title_weight = 2.0;
    double desc_weight = 1.0;
    double exact_title_boost = 7.0;

    void validate() const;
    bool operator==(const Bm25Params&) const = default;
};

enum class Field : std::size_t { title = 0, description = 1 };
inline constexpr std::size_t kNumFields = 2;

struct Posting {
    std::uint32_t doc = 0;  // internal doc number, ordered by doc id
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

/// Okapi BM25 idf: ln(1 + (N - df + 0.5) / (df + 0.5)).
double bm25_idf(std::size_t num_docs, std::size_t df);
/// Saturated term-frequency part: tf (k1 + 1) / (tf + k1 (1 - b + b len / avg_len)).
double bm25_tf_weight(double tf, double doc_len, double avg_len, double k1, double b);

/// Two-field inverted index. Internal doc numbers follow ascending doc id, so
/// postings sorted by number are also sorted by id.
class LexicalIndex {
public:
    struct FieldData {
        std::map<std::string, std::vector<Posting>, std::less<>> postings;
        std::vector<std::uint32_t> lengths;
        double avg_length = 0.0;

        bool operator==(const FieldData&) const = default;
    };

    std::size_t doc_count() const { return doc_ids_.size(); }
    const std::string& doc_id(std::uint32_t doc) const { return doc_ids_[doc]; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const FieldData& field(Field f) const { return fields_[static_cast<std::size_t>(f)]; }
    /// analyze(title) joined by single spaces.
    const std::string& normalized_title(std::uint32_t doc) const { return normalized_titles_[doc]; }
    const Bm25Params& params() const { return params_; }
    const FieldVariant& variant() const { return variant_; }

    std::size_t document_frequency(Field f, std::string_view term) const;

    bool operator==(const LexicalIndex&) const = default;

    friend LexicalIndex index_corpus(const Corpus&, const FieldVariant&, const Bm25Params&);
    friend LexicalIndex read_index(std::istream&);

private:
    std::vector<std::string> doc_ids_;
    std::vector<std::string> normalized_titles_;
    std::array<FieldData, kNumFields> fields_;
    Bm25Params params_;
    FieldVariant variant_;

    void finalize();
};

/// Throws std::invalid_argument on an empty corpus.
LexicalIndex index_corpus(const Corpus& corpus, const FieldVariant& variant, const Bm25Params& params = {});

/// Distinct query terms in lexicographic order; the scoring order used by search.
std::vector<std::string> query_terms(const Query& q);

/// Top-k by title_weight * BM25(title) + desc_weight * BM25(description); the
/// sum is multiplied by exact_title_boost when the analyzed title equals the
/// analyzed skill. Documents matching no query term are not returned.
ScoredList search(const LexicalIndex& index, const Query& q, std::size_t k);

/// Versioned line-oriented format; see README.
void write_index(const LexicalIndex& index, std::ostream& out);
LexicalIndex read_index(std::istream& in);
void save_index(const LexicalIndex& index, const std::filesystem::path& path);
LexicalIndex load_index(const std::filesystem::path& path);

}  // namespace skillrank
