// SPDX-License-Identifier: Apache-2.0
#include "skillrank/scored_list.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace skillrank {

std::string_view to_string(Stage stage) {
    switch (stage) {
    case Stage::lexical: return "lexical";
    case Stage::dense: return "dense";
    case Stage::reranked: return "reranked";
    }
    return "lexical";
}

Stage parse_stage(std::string_view text) {
    if (text == "lexical") return Stage::lexical;
    if (text == "dense") return Stage::dense;
    if (text == "reranked") return Stage::reranked;
    throw std::invalid_argument("unknown stage: " + std::string(text));
}

std::vector<std::string> ScoredList::doc_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.doc_id);
    return ids;
}

void sort_entries(std::vector<ScoredEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
}

void check_scored_list(const ScoredList& list) {
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
        const auto& e = list.entries[i];
        if (!seen.insert(e.doc_id).second)
            throw std::invalid_argument("duplicate doc id " + e.doc_id + " in list for " + list.query_id);
        if (i > 0 && e.score > list.entries[i - 1].score)
            throw std::invalid_argument("scores increase at position " + std::to_string(i + 1) +
                                        " in list for " + list.query_id);
    }
}

}  // namespace skillrank
