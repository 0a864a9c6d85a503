// SPDX-License-Identifier: Apache-2.0
#include "skillrank/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace skillrank {
namespace {

std::uint32_t fnv1a(std::string_view s) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : s) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

WordTokenizer::WordTokenizer(std::vector<std::string> words, std::int32_t hash_buckets)
    : words_(std::move(words)), hash_buckets_(hash_buckets) {
    if (hash_buckets_ < 1) throw std::invalid_argument("hash_buckets must be >= 1");
    for (std::size_t i = 0; i < words_.size(); ++i) {
        words_[i] = lower_ascii(words_[i]);
        if (!ids_.emplace(words_[i], kFirstWord + static_cast<TokenId>(i)).second)
            throw std::invalid_argument("duplicate vocabulary word: " + words_[i]);
    }
}

WordTokenizer WordTokenizer::from_file(const std::filesystem::path& path, std::int32_t hash_buckets) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) words.push_back(line);
    }
    return WordTokenizer(std::move(words), hash_buckets);
}

std::int32_t WordTokenizer::vocab_size() const {
    return kFirstWord + static_cast<std::int32_t>(words_.size()) + hash_buckets_;
}

std::vector<TokenId> WordTokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (start == i) break;
        std::string word = lower_ascii(text.substr(start, i - start));
        if (auto it = ids_.find(word); it != ids_.end()) {
            ids.push_back(it->second);
        } else {
            auto bucket = static_cast<TokenId>(fnv1a(word) % static_cast<std::uint32_t>(hash_buckets_));
            ids.push_back(kFirstWord + static_cast<TokenId>(words_.size()) + bucket);
        }
    }
    return ids;
}

}  // namespace skillrank
