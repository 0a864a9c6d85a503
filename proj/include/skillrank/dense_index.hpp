// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "skillrank/scored_list.hpp"

namespace skillrank {

/// Precomputed embeddings, L2-normalized on load. Rows are kept in ascending
/// id order so ties in a scan resolve by doc id.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    /// Normalizes every vector; throws on dimension mismatch, duplicate id or a zero vector.
    EmbeddingStore(std::size_t dim, std::vector<std::pair<std::string, std::vector<double>>> rows);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool normalized() const { return true; }
    const std::string& id(std::size_t row) const { return ids_[row]; }
    std::span<const double> vector(std::size_t row) const { return {data_.data() + row * dim_, dim_}; }
    /// nullptr-like empty span when absent.
    std::span<const double> find(std::string_view id) const;

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<double> data_;
    std::unordered_map<std::string, std::size_t> rows_;
};

/// Header "dim=<d> count=<n>", then "id<TAB>f1 f2 ... fd" per line.
EmbeddingStore load_embeddings(const std::filesystem::path& path);
EmbeddingStore parse_embeddings(std::istream& in);
void write_embeddings(std::ostream& out, std::size_t dim,
                      const std::vector<std::pair<std::string, std::vector<double>>>& rows);

/// Returns v / ||v||; throws std::invalid_argument on a zero or non-finite vector.
std::vector<double> l2_normalize(std::span<const double> v);

/// Exhaustive scan; cosine similarity descending, ties by doc id.
ScoredList cosine_topk(const EmbeddingStore& store, std::span<const double> qvec, std::size_t k,
                       std::string query_id = {});

/// Alternates a[0], b[0], a[1], b[1], ... over the top-`depth` of each list,
/// skipping ids already emitted. start_with_a = false swaps the alternation.
std::vector<std::string> interleave_pools(const ScoredList& a, const ScoredList& b, std::size_t depth,
                                          bool start_with_a = true);

struct PoolQuality {
    bool pass = false;
    std::size_t count = 0;
};

/// pass iff at least min_count documents have similarity >= threshold.
PoolQuality pool_quality_check(const EmbeddingStore& store, std::span<const double> qvec, double threshold = 0.6,
                               std::size_t min_count = 5);

}  // namespace skillrank
