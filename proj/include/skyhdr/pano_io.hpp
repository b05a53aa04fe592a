#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>

#include "skyhdr/error.hpp"
#include "skyhdr/pano.hpp"

namespace skyhdr {

/// Writes to a temporary sibling and renames over the target, so readers
/// never see a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// PFM, colour ("PF"), scale -1.0 (little-endian), rows stored bottom to top.
void write_pfm(const std::filesystem::path& path, const FloatImage& img);
std::string encode_pfm(const FloatImage& img);
FloatImage read_pfm(const std::filesystem::path& path);
FloatImage decode_pfm(std::string_view bytes);

/// Binary PPM (P6), maxval 255, rows top to bottom.
void write_ppm(const std::filesystem::path& path, const Image<std::uint8_t>& img);
std::string encode_ppm(const Image<std::uint8_t>& img);
Image<std::uint8_t> read_ppm(const std::filesystem::path& path);
Image<std::uint8_t> decode_ppm(std::string_view bytes);

/// Little-endian binary serialization helpers shared by the cache and
/// checkpoint formats.
class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_arithmetic_v<T>);
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        out_.append(reinterpret_cast<const char*>(b), sizeof(T));
    }
    void put_bytes(std::string_view s) { out_.append(s); }
    const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    template <typename T>
    T get() {
        static_assert(std::is_arithmetic_v<T>);
        need(sizeof(T));
        unsigned char b[sizeof(T)];
        std::memcpy(b, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
    std::string_view get_bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw DataError("unexpected end of file (truncated?)");
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace skyhdr
