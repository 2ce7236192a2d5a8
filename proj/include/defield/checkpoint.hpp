#pragma once

// Binary tensor container, little-endian:
//
//   repeated { name_len: u32, name: utf8, dtype: u8, ndim: u8, dims: u32 x ndim, payload }
//
// dtype 0 is float32. dtype 1 (uint64) holds integer state such as the
// iteration counter.

#include "defield/common.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace defield {

enum class DType : std::uint8_t { f32 = 0, u64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct TensorRecord {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    std::vector<std::byte> payload;

    std::size_t elements() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    template <typename S>
    static TensorRecord from_floats(std::string name, std::span<const S> data, std::vector<std::uint32_t> dims) {
        TensorRecord r{std::move(name), DType::f32, std::move(dims), {}};
        r.payload.resize(data.size() * 4);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float f = static_cast<float>(data[i]);
            std::memcpy(r.payload.data() + 4 * i, &f, 4);
        }
        return r;
    }

    static TensorRecord from_u64(std::string name, std::uint64_t value) {
        TensorRecord r{std::move(name), DType::u64, {1}, {}};
        r.payload.resize(8);
        std::memcpy(r.payload.data(), &value, 8);
        return r;
    }

    template <typename S>
    void to_floats(std::span<S> out) const {
        if (dtype != DType::f32) throw DataError("record '" + name + "' is not float32");
        if (out.size() != elements()) throw DataError("record '" + name + "' has the wrong element count");
        for (std::size_t i = 0; i < out.size(); ++i) {
            float f;
            std::memcpy(&f, payload.data() + 4 * i, 4);
            out[i] = static_cast<S>(f);
        }
    }

    std::uint64_t to_u64() const {
        if (dtype != DType::u64 || payload.size() != 8) throw DataError("record '" + name + "' is not a u64 scalar");
        std::uint64_t v;
        std::memcpy(&v, payload.data(), 8);
        return v;
    }
};

namespace detail {
template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& in, const std::string& what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError("truncated checkpoint while reading " + what);
    return v;
}
}  // namespace detail

inline void write_container(const std::filesystem::path& path, std::span<const TensorRecord> records) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    for (const auto& r : records) {
        if (r.payload.size() != r.elements() * dtype_size(r.dtype))
            throw std::logic_error("record '" + r.name + "' payload does not match its shape");
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dims.size()));
        for (auto d : r.dims) detail::put<std::uint32_t>(out, d);
        out.write(reinterpret_cast<const char*>(r.payload.data()), static_cast<std::streamsize>(r.payload.size()));
    }
    if (!out) throw DataError("short write to checkpoint " + path.string());
}

inline std::vector<TensorRecord> read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::vector<TensorRecord> records;
    while (in.peek() != std::char_traits<char>::eof()) {
        TensorRecord r;
        const auto len = detail::get<std::uint32_t>(in, "name length");
        if (len > 4096) throw DataError(path.string() + ": implausible record name length");
        r.name.resize(len);
        in.read(r.name.data(), len);
        const auto dtype = detail::get<std::uint8_t>(in, r.name);
        if (dtype > 1) throw DataError(path.string() + ": record '" + r.name + "' has unknown dtype");
        r.dtype = static_cast<DType>(dtype);
        const auto ndim = detail::get<std::uint8_t>(in, r.name);
        for (int i = 0; i < ndim; ++i) r.dims.push_back(detail::get<std::uint32_t>(in, r.name));
        r.payload.resize(r.elements() * dtype_size(r.dtype));
        in.read(reinterpret_cast<char*>(r.payload.data()), static_cast<std::streamsize>(r.payload.size()));
        if (!in) throw DataError(path.string() + ": truncated payload of '" + r.name + "'");
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace defield
