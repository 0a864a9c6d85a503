// SPDX-License-Identifier: Apache-2.0
#include "skillrank/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

namespace skillrank {

using nlohmann::json;

std::string_view to_string(DType dtype) { return dtype == DType::f32 ? "F32" : "I8"; }

namespace {

std::size_t shape_elements(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ArchiveError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

}  // namespace

std::size_t ArchiveTensor::element_count() const { return shape_elements(shape); }

std::size_t ArchiveTensor::byte_size() const {
    return dtype == DType::f32 ? f32.size() * sizeof(float) : i8.size();
}

void TensorArchive::put_f32(std::string name, std::vector<std::int64_t> shape, std::vector<float> values) {
    if (shape_elements(shape) != values.size()) throw ArchiveError("tensor " + name + ": value count does not match shape");
    ArchiveTensor t;
    t.dtype = DType::f32;
    t.shape = std::move(shape);
    t.f32 = std::move(values);
    tensors_[std::move(name)] = std::move(t);
}

void TensorArchive::put_i8(std::string name, std::vector<std::int64_t> shape, std::vector<std::int8_t> values) {
    if (shape_elements(shape) != values.size()) throw ArchiveError("tensor " + name + ": value count does not match shape");
    ArchiveTensor t;
    t.dtype = DType::i8;
    t.shape = std::move(shape);
    t.i8 = std::move(values);
    tensors_[std::move(name)] = std::move(t);
}

const ArchiveTensor& TensorArchive::get(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ArchiveError("missing tensor " + std::string(name));
    return it->second;
}

std::span<const float> TensorArchive::f32(std::string_view name, const std::vector<std::int64_t>& shape) const {
    const auto& t = get(name);
    if (t.dtype != DType::f32) throw ArchiveError("tensor " + std::string(name) + " is not F32");
    if (t.shape != shape)
        throw ArchiveError("tensor " + std::string(name) + " has shape " + shape_string(t.shape) + ", expected " +
                           shape_string(shape));
    return t.f32;
}

std::span<const std::int8_t> TensorArchive::i8(std::string_view name, const std::vector<std::int64_t>& shape) const {
    const auto& t = get(name);
    if (t.dtype != DType::i8) throw ArchiveError("tensor " + std::string(name) + " is not I8");
    if (t.shape != shape)
        throw ArchiveError("tensor " + std::string(name) + " has shape " + shape_string(t.shape) + ", expected " +
                           shape_string(shape));
    return t.i8;
}

std::size_t TensorArchive::payload_bytes() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.byte_size();
    return n;
}

std::vector<char> TensorArchive::serialize() const {
    json header = json::object();
    header["__metadata__"] = metadata_;
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors_) {
        header[name] = {{"dtype", to_string(t.dtype)},
                        {"shape", t.shape},
                        {"data_offsets", {offset, offset + t.byte_size()}}};
        offset += t.byte_size();
    }
    const std::string text = header.dump();
    std::vector<char> bytes(8 + text.size() + offset);
    const std::uint64_t len = text.size();
    std::memcpy(bytes.data(), &len, 8);
    std::memcpy(bytes.data() + 8, text.data(), text.size());
    char* payload = bytes.data() + 8 + text.size();
    for (const auto& [name, t] : tensors_) {
        if (t.dtype == DType::f32) {
            std::memcpy(payload, t.f32.data(), t.byte_size());
        } else {
            std::memcpy(payload, t.i8.data(), t.byte_size());
        }
        payload += t.byte_size();
    }
    return bytes;
}

TensorArchive TensorArchive::deserialize(std::span<const char> bytes) {
    if (bytes.size() < 8) throw ArchiveError("archive shorter than its length prefix");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data(), 8);
    if (len > bytes.size() - 8) throw ArchiveError("archive header length exceeds file size");
    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
    } catch (const json::exception& e) {
        throw ArchiveError(std::string("archive header is not valid JSON: ") + e.what());
    }
    const std::span<const char> payload = bytes.subspan(8 + len);
    TensorArchive archive;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            for (const auto& [k, v] : entry.items()) archive.metadata_[k] = v.get<std::string>();
            continue;
        }
        try {
            const auto dtype = entry.at("dtype").get<std::string>();
            auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto offsets = entry.at("data_offsets").get<std::vector<std::size_t>>();
            if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > payload.size())
                throw ArchiveError("bad data offsets");
            const std::size_t n = shape_elements(shape);
            const std::size_t nbytes = offsets[1] - offsets[0];
            if (dtype == "F32") {
                if (nbytes != n * sizeof(float)) throw ArchiveError("byte size does not match shape");
                std::vector<float> values(n);
                std::memcpy(values.data(), payload.data() + offsets[0], nbytes);
                archive.put_f32(name, std::move(shape), std::move(values));
            } else if (dtype == "I8") {
                if (nbytes != n) throw ArchiveError("byte size does not match shape");
                std::vector<std::int8_t> values(n);
                std::memcpy(values.data(), payload.data() + offsets[0], nbytes);
                archive.put_i8(name, std::move(shape), std::move(values));
            } else {
                throw ArchiveError("unsupported dtype " + dtype);
            }
        } catch (const std::exception& e) {
            throw ArchiveError("tensor " + name + ": " + e.what());
        }
    }
    return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArchiveError("cannot write archive " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArchiveError("failed writing archive " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open archive " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::span<const float> ArchiveReader::f32(std::string_view name, const std::vector<std::int64_t>& shape) {
    auto values = archive_.f32(name, shape);
    used_.emplace(name);
    return values;
}

std::span<const std::int8_t> ArchiveReader::i8(std::string_view name, const std::vector<std::int64_t>& shape) {
    auto values = archive_.i8(name, shape);
    used_.emplace(name);
    return values;
}

const ArchiveTensor* ArchiveReader::find(std::string_view name) {
    auto it = archive_.tensors().find(name);
    if (it == archive_.tensors().end()) return nullptr;
    used_.emplace(name);
    return &it->second;
}

std::vector<std::string> ArchiveReader::unused() const {
    std::vector<std::string> names;
    for (const auto& [name, t] : archive_.tensors())
        if (!used_.contains(name)) names.push_back(name);
    return names;
}

}  // namespace skillrank
