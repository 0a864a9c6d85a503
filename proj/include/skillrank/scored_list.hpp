// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace skillrank {

enum class Stage { lexical, dense, reranked };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct ScoredEntry {
    std::string doc_id;
    double score = 0.0;

    bool operator==(const ScoredEntry&) const = default;
};

/// Ranked output of any retrieval stage. Scores are non-increasing and doc
/// ids are unique; ties are ordered by doc id ascending.
struct ScoredList {
    std::string query_id;
    std::vector<ScoredEntry> entries;
    Stage stage = Stage::lexical;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    std::vector<std::string> doc_ids() const;
};

/// Orders by score descending, then doc id ascending.
void sort_entries(std::vector<ScoredEntry>& entries);

/// Throws std::invalid_argument if scores increase or ids repeat.
void check_scored_list(const ScoredList& list);

}  // namespace skillrank
