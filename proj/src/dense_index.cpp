// SPDX-License-Identifier: Apache-2.0
#include "skillrank/dense_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace skillrank {

std::vector<double> l2_normalize(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw std::invalid_argument("vector has a non-finite component");
        sq += x * x;
    }
    if (sq == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
    const double norm = std::sqrt(sq);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
    return out;
}

EmbeddingStore::EmbeddingStore(std::size_t dim, std::vector<std::pair<std::string, std::vector<double>>> rows)
    : dim_(dim) {
    if (dim_ == 0) throw std::invalid_argument("embedding dimension must be positive");
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    ids_.reserve(rows.size());
    data_.reserve(rows.size() * dim_);
    for (auto& [id, vec] : rows) {
        if (vec.size() != dim_)
            throw std::invalid_argument("dimension mismatch for " + id + ": expected " + std::to_string(dim_) +
                                        ", got " + std::to_string(vec.size()));
        if (!rows_.emplace(id, ids_.size()).second) throw std::invalid_argument("duplicate embedding id " + id);
        std::vector<double> unit;
        try {
            unit = l2_normalize(vec);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("embedding " + id + ": " + e.what());
        }
        data_.insert(data_.end(), unit.begin(), unit.end());
        ids_.push_back(std::move(id));
    }
}

std::span<const double> EmbeddingStore::find(std::string_view id) const {
    auto it = rows_.find(std::string(id));
    if (it == rows_.end()) return {};
    return vector(it->second);
}

EmbeddingStore parse_embeddings(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("embedding file is empty");
    std::size_t dim = 0, count = 0;
    {
        std::istringstream header(line);
        std::string dim_field, count_field;
        header >> dim_field >> count_field;
        if (!dim_field.starts_with("dim=") || !count_field.starts_with("count="))
            throw std::invalid_argument("line 1: expected header 'dim=<d> count=<n>'");
        dim = std::stoul(dim_field.substr(4));
        count = std::stoul(count_field.substr(6));
    }
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    rows.reserve(count);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 'id<TAB>values'");
        std::vector<double> values;
        std::istringstream fields(line.substr(tab + 1));
        std::string tok;
        while (fields >> tok) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw std::invalid_argument("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
            }
        }
        rows.emplace_back(line.substr(0, tab), std::move(values));
    }
    if (rows.size() != count)
        throw std::invalid_argument("header declares " + std::to_string(count) + " vectors, file has " +
                                    std::to_string(rows.size()));
    return EmbeddingStore(dim, std::move(rows));
}

EmbeddingStore load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
    return parse_embeddings(in);
}

void write_embeddings(std::ostream& out, std::size_t dim,
                      const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
    out << "dim=" << dim << " count=" << rows.size() << '\n';
    out << std::setprecision(9);
    for (const auto& [id, vec] : rows) {
        out << id << '\t';
        for (std::size_t i = 0; i < vec.size(); ++i) out << (i ? " " : "") << vec[i];
        out << '\n';
    }
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> checked_query(const EmbeddingStore& store, std::span<const double> qvec) {
    if (qvec.size() != store.dim())
        throw std::invalid_argument("query dimension " + std::to_string(qvec.size()) + " does not match store dimension " +
                                    std::to_string(store.dim()));
    return l2_normalize(qvec);
}

}  // namespace

ScoredList cosine_topk(const EmbeddingStore& store, std::span<const double> qvec, std::size_t k,
                       std::string query_id) {
    if (k < 1) throw std::invalid_argument("cosine_topk needs k >= 1");
    const auto q = checked_query(store, qvec);
    std::vector<std::pair<double, std::size_t>> sims(store.size());
    for (std::size_t row = 0; row < store.size(); ++row) sims[row] = {dot(q, store.vector(row)), row};
    const std::size_t take = std::min(k, sims.size());
    // Rows are in id order, so the row index breaks ties by id.
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(take), sims.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    ScoredList out;
    out.query_id = std::move(query_id);
    out.stage = Stage::dense;
    out.entries.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.entries.push_back({store.id(sims[i].second), sims[i].first});
    return out;
}

std::vector<std::string> interleave_pools(const ScoredList& a, const ScoredList& b, std::size_t depth,
                                          bool start_with_a) {
    if (depth < 1) throw std::invalid_argument("interleave depth must be >= 1");
    const ScoredList& first = start_with_a ? a : b;
    const ScoredList& second = start_with_a ? b : a;
    std::vector<std::string> pool;
    std::unordered_set<std::string> seen;
    auto emit = [&](const ScoredList& list, std::size_t i) {
        if (i < list.entries.size() && seen.insert(list.entries[i].doc_id).second) pool.push_back(list.entries[i].doc_id);
    };
    for (std::size_t i = 0; i < depth; ++i) {
        emit(first, i);
        emit(second, i);
    }
    return pool;
}

PoolQuality pool_quality_check(const EmbeddingStore& store, std::span<const double> qvec, double threshold,
                               std::size_t min_count) {
    const auto q = checked_query(store, qvec);
    PoolQuality result;
    for (std::size_t row = 0; row < store.size(); ++row)
        if (dot(q, store.vector(row)) >= threshold) ++result.count;
    result.pass = result.count >= min_count;
    return result;
}

}  // namespace skillrank
