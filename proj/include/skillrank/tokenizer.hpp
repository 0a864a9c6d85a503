// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace skillrank {

using TokenId = std::int32_t;

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<TokenId> encode(std::string_view text) const = 0;
    virtual std::int32_t vocab_size() const = 0;
    virtual TokenId pad_id() const = 0;
};

/// Lowercases, splits on whitespace and maps each word through a fixed
/// vocabulary. Unknown words are hashed (FNV-1a) into a fixed number of
/// buckets placed after the vocabulary, so every id is < vocab_size().
///
/// Id layout: 0 = pad, 1 = eos, [2, 2 + words) = vocabulary,
/// [2 + words, 2 + words + hash_buckets) = hashed out-of-vocabulary words.
class WordTokenizer final : public Tokenizer {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kEos = 1;
    static constexpr TokenId kFirstWord = 2;

    WordTokenizer(std::vector<std::string> words, std::int32_t hash_buckets);

    /// One word per line; blank lines are skipped.
    static WordTokenizer from_file(const std::filesystem::path& path, std::int32_t hash_buckets);

    std::vector<TokenId> encode(std::string_view text) const override;
    std::int32_t vocab_size() const override;
    TokenId pad_id() const override { return kPad; }

    std::int32_t hash_buckets() const { return hash_buckets_; }
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> ids_;
    std::int32_t hash_buckets_;
};

}  // namespace skillrank
