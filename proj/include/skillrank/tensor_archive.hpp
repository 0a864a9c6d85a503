// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skillrank {

class ArchiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DType { f32, i8 };

std::string_view to_string(DType dtype);

struct ArchiveTensor {
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::vector<float> f32;
    std::vector<std::int8_t> i8;

    std::size_t element_count() const;
    std::size_t byte_size() const;
};

/// Named tensors plus string metadata.
///
/// File layout: an 8-byte little-endian header length H, then H bytes of JSON
/// header {"__metadata__": {...}, "<name>": {"dtype": "F32"|"I8", "shape": [...],
/// "data_offsets": [begin, end]}, ...}, then the raw little-endian row-major
/// payload. Offsets are relative to the first payload byte.
class TensorArchive {
public:
    void put_f32(std::string name, std::vector<std::int64_t> shape, std::vector<float> values);
    void put_i8(std::string name, std::vector<std::int64_t> shape, std::vector<std::int8_t> values);

    bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }
    const ArchiveTensor& get(std::string_view name) const;
    /// Checks dtype and shape; errors name the tensor.
    std::span<const float> f32(std::string_view name, const std::vector<std::int64_t>& shape) const;
    std::span<const std::int8_t> i8(std::string_view name, const std::vector<std::int64_t>& shape) const;

    std::map<std::string, std::string>& metadata() { return metadata_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    const std::map<std::string, ArchiveTensor, std::less<>>& tensors() const { return tensors_; }

    /// Sum of tensor payload bytes.
    std::size_t payload_bytes() const;

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);
    std::vector<char> serialize() const;
    static TensorArchive deserialize(std::span<const char> bytes);

private:
    std::map<std::string, ArchiveTensor, std::less<>> tensors_;
    std::map<std::string, std::string> metadata_;
};

/// Tracks which tensors a loader consumed so leftovers can be reported.
class ArchiveReader {
public:
    explicit ArchiveReader(const TensorArchive& archive) : archive_(archive) {}
    std::span<const float> f32(std::string_view name, const std::vector<std::int64_t>& shape);
    std::span<const std::int8_t> i8(std::string_view name, const std::vector<std::int64_t>& shape);
    const ArchiveTensor* find(std::string_view name);
    const TensorArchive& archive() const { return archive_; }
    std::vector<std::string> unused() const;

private:
    const TensorArchive& archive_;
    std::set<std::string, std::less<>> used_;
};

}  // namespace skillrank
