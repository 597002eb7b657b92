#include "hssnet/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

namespace hssnet {

void write_pgm(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw std::invalid_argument("write_pgm: expected [H,W] tensor");
    const i64 h = img.extent(0);
    const i64 w = img.extent(1);

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
    std::fprintf(f, "P5\n%lld %lld\n255\n", static_cast<long long>(w), static_cast<long long>(h));

    const std::vector<double>& d = img.data();
    std::vector<unsigned char> bytes(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, d[i]));
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
    if (std::fclose(f) != 0 || !ok) throw std::runtime_error("write_pgm: write failed for " + path);
}

namespace {

// Reads the next header token, skipping whitespace and '#' comment lines.
std::string next_token(const std::vector<unsigned char>& buf, size_t* pos) {
    while (*pos < buf.size()) {
        const unsigned char c = buf[*pos];
        if (c == '#') {
            while (*pos < buf.size() && buf[*pos] != '\n') ++*pos;
        } else if (std::isspace(c)) {
            ++*pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (*pos < buf.size() && !std::isspace(buf[*pos]) && buf[*pos] != '#') {
        tok.push_back(static_cast<char>(buf[(*pos)++]));
    }
    return tok;
}

long parse_long(const std::string& tok, const char* what) {
    if (tok.empty()) throw std::runtime_error(std::string("read_pgm: missing ") + what);
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size() || v <= 0) {
        throw std::runtime_error(std::string("read_pgm: bad ") + what + " '" + tok + "'");
    }
    return v;
}

}  // namespace

Tensor read_pgm(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> buf(size > 0 ? static_cast<size_t>(size) : 0);
    const bool ok = buf.empty() || std::fread(buf.data(), 1, buf.size(), f) == buf.size();
    std::fclose(f);
    if (!ok) throw std::runtime_error("read_pgm: read failed for " + path);

    size_t pos = 0;
    if (next_token(buf, &pos) != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path);
    const long w = parse_long(next_token(buf, &pos), "width");
    const long h = parse_long(next_token(buf, &pos), "height");
    const long maxval = parse_long(next_token(buf, &pos), "maxval");
    if (maxval > 255) throw std::runtime_error("read_pgm: only 8-bit PGM supported");
    ++pos;  // the single whitespace byte separating header and pixels

    const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
    if (pos + need > buf.size()) throw std::runtime_error("read_pgm: truncated pixel data");

    std::vector<double> v(need);
    for (size_t i = 0; i < need; ++i) {
        v[i] = static_cast<double>(buf[pos + i]) / static_cast<double>(maxval);
    }
    return Tensor::from({static_cast<i64>(h), static_cast<i64>(w)}, std::move(v));
}

}  // namespace hssnet
