#include "skyhdr/pano_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

namespace fs = std::filesystem;

namespace skyhdr {

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw DataError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError("cannot rename into " + path.string());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

// Header tokens are separated by single whitespace; the last one is followed
// by exactly one whitespace byte before the raster.
struct HeaderParser {
    std::string_view data;
    std::size_t pos = 0;

    std::string token() {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
        if (start == pos) throw DataError("truncated image header");
        return std::string(data.substr(start, pos - start));
    }

    void end_of_header() {
        if (pos >= data.size()) throw DataError("truncated image header");
        ++pos;
    }
};

int parse_dim(const std::string& s) {
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size() || v <= 0 || v > (1 << 16)) throw DataError("");
        return int(v);
    } catch (...) {
        throw DataError("bad image dimension '" + s + "'");
    }
}

}  // namespace

std::string encode_pfm(const FloatImage& img) {
    ByteWriter w;
    w.put_bytes("PF\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                "\n-1.0\n");
    for (int r = img.height() - 1; r >= 0; --r)
        for (int c = 0; c < img.width(); ++c)
            for (int ch = 0; ch < 3; ++ch) w.put<float>(img(r, c, ch));
    return w.bytes();
}

void write_pfm(const fs::path& path, const FloatImage& img) {
    write_file_atomic(path, encode_pfm(img));
}

FloatImage decode_pfm(std::string_view bytes) {
    HeaderParser hp{bytes};
    if (hp.token() != "PF") throw DataError("not a colour PFM file");
    const int w = parse_dim(hp.token());
    const int h = parse_dim(hp.token());
    const std::string scale_tok = hp.token();
    hp.end_of_header();
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (...) {
        throw DataError("bad PFM scale '" + scale_tok + "'");
    }
    if (scale == 0.0) throw DataError("PFM scale must be nonzero");
    const bool little = scale < 0.0;
    ByteReader rd(bytes.substr(hp.pos));
    if (rd.remaining() != std::size_t(w) * h * 3 * 4)
        throw DataError("PFM raster size does not match its header");
    FloatImage img(w, h);
    for (int r = h - 1; r >= 0; --r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                std::uint32_t u = rd.get<std::uint32_t>();
                if (!little) u = __builtin_bswap32(u);
                img(r, c, ch) = std::bit_cast<float>(u);
            }
    return img;
}

FloatImage read_pfm(const fs::path& path) { return decode_pfm(read_file(path)); }

std::string encode_ppm(const Image<std::uint8_t>& img) {
    std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                      "\n255\n";
    auto v = img.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size());
    return out;
}

void write_ppm(const fs::path& path, const Image<std::uint8_t>& img) {
    write_file_atomic(path, encode_ppm(img));
}

Image<std::uint8_t> decode_ppm(std::string_view bytes) {
    HeaderParser hp{bytes};
    if (hp.token() != "P6") throw DataError("not a binary PPM (P6) file");
    const int w = parse_dim(hp.token());
    const int h = parse_dim(hp.token());
    if (hp.token() != "255") throw DataError("only maxval 255 PPM files are supported");
    hp.end_of_header();
    const std::string_view raster = bytes.substr(hp.pos);
    if (raster.size() != std::size_t(w) * h * 3)
        throw DataError("PPM raster size does not match its header");
    Image<std::uint8_t> img(w, h);
    std::copy(raster.begin(), raster.end(), reinterpret_cast<char*>(img.values().data()));
    return img;
}

Image<std::uint8_t> read_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }

}  // namespace skyhdr
