// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "skillrank/tokenizer.hpp"

namespace skillrank {

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Provider { udemy, udemy_business, edx, goodhabitz, other };

std::string_view to_string(Provider provider);
/// Unknown provider names map to Provider::other.
Provider parse_provider(std::string_view text);

struct CourseDoc {
    std::string id;
    Provider provider = Provider::other;
    std::string title;
    std::string description;
    std::map<std::string, std::string> summaries;
    std::optional<std::string> level;
    std::optional<double> rating;
    std::optional<std::string> url;
};

struct Query {
    std::string id;
    std::string skill;
    std::string occupation;
    std::optional<std::string> skill_description;
};

/// Which description text a document is rendered with.
struct FieldVariant {
    std::optional<std::string> summary;

    static FieldVariant original() { return {}; }
    static FieldVariant summary_of(std::string name) { return {std::move(name)}; }

    bool is_original() const { return !summary.has_value(); }
    /// "original" or "summary:<name>".
    static FieldVariant parse(std::string_view text);
    std::string to_string() const;

    bool operator==(const FieldVariant&) const = default;
};

/// Immutable after construction. Documents keep file order; lookup by id is O(1).
class Corpus {
public:
    Corpus() = default;
    /// Throws CorpusError on a duplicate id or an invalid document.
    explicit Corpus(std::vector<CourseDoc> docs);

    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }
    const CourseDoc& operator[](std::size_t i) const { return docs_[i]; }
    const CourseDoc* find(std::string_view id) const;
    const CourseDoc& at(std::string_view id) const;

    auto begin() const { return docs_.begin(); }
    auto end() const { return docs_.end(); }
    const std::vector<CourseDoc>& docs() const { return docs_; }

private:
    std::vector<CourseDoc> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Reads line-delimited JSON course records (see README for the schema).
/// Descriptions are passed through strip_html.
Corpus ingest_courses(const std::filesystem::path& path);
Corpus parse_courses(std::istream& in);

std::vector<Query> load_queries(const std::filesystem::path& path);
std::vector<Query> parse_queries(std::istream& in);

/// Removes markup tags, decodes character entities and collapses whitespace.
/// Applied until the text stops changing, which makes it idempotent.
std::string strip_html(std::string_view raw);

/// "<skill> for <occupation>"
std::string build_query_text(const Query& q);

struct DocumentText {
    std::string text;
    bool fell_back = false;  // requested summary missing, original used
};

/// Description text for the variant; a missing summary falls back to the
/// original description (fell_back, when given, is set accordingly).
const std::string& description_for(const CourseDoc& d, const FieldVariant& v, bool* fell_back = nullptr);

/// "Title: <title> Description: <description-for-variant>". A missing summary
/// variant falls back to the original description and logs a warning.
DocumentText build_document_text(const CourseDoc& d, const FieldVariant& v);

/// "Query: <query-text> Document: <document-text>". With include_skill_desc the
/// skill description is joined to the query text with ". ".
/// Throws CorpusError when include_skill_desc is set and the query has no description.
std::string build_rerank_input(const Query& q, const CourseDoc& d, const FieldVariant& v,
                               bool include_skill_desc);

std::string build_summarization_prompt(const CourseDoc& d);

struct CorpusStats {
    std::size_t limit = 0;
    std::size_t bucket_width = 0;
    std::size_t num_buckets = 0;  // last bucket collects everything >= (num_buckets-1)*width
    std::map<Provider, std::vector<std::size_t>> histogram;
    std::size_t total = 0;
    std::size_t over_limit = 0;
    double over_limit_fraction = 0.0;
};

/// Token length of "<title> <description>" per document; a document counts as
/// over the limit when its length is strictly greater than `limit`.
CorpusStats corpus_stats(const Corpus& corpus, const Tokenizer& tokenizer, std::size_t limit,
                         std::size_t bucket_width = 128, std::size_t num_buckets = 17);

}  // namespace skillrank
