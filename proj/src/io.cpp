// SPDX-License-Identifier: Apache-2.0
#include "scd/io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "scd/errors.hpp"

namespace scd::io {

namespace {

void write_bytes(std::ofstream& f, const void* p, size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

uint8_t to_byte(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(v * 255.0 + 0.5);
}

}  // namespace

void save_npy(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("save_npy: cannot open " + path.string());

    std::ostringstream hs;
    hs << "{'descr': '<f8', 'fortran_order': False, 'shape': (";
    for (size_t i = 0; i < t.shape.size(); ++i) hs << t.shape[i] << (t.shape.size() == 1 ? "," : (i + 1 < t.shape.size() ? ", " : ""));
    hs << "), }";
    std::string header = hs.str();
    // pad so that magic(6)+ver(2)+len(2)+header is a multiple of 64, ending in \n
    size_t unpadded = 10 + header.size() + 1;
    size_t pad = (64 - unpadded % 64) % 64;
    header += std::string(pad, ' ');
    header += '\n';

    const char magic[] = "\x93NUMPY";
    write_bytes(f, magic, 6);
    const uint8_t ver[2] = {1, 0};
    write_bytes(f, ver, 2);
    const uint16_t hlen = static_cast<uint16_t>(header.size());
    write_bytes(f, &hlen, 2);
    write_bytes(f, header.data(), header.size());
    write_bytes(f, t.data.data(), t.data.size() * sizeof(double));
    if (!f) throw IntegrityError("save_npy: write failed for " + path.string());
}

Tensor load_npy(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("load_npy: cannot open " + path.string());
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw IntegrityError("load_npy: bad magic in " + path.string());
    uint8_t ver[2];
    f.read(reinterpret_cast<char*>(ver), 2);
    uint16_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 2);
    std::string header(hlen, '\0');
    f.read(header.data(), hlen);
    if (!f) throw IntegrityError("load_npy: truncated header in " + path.string());
    if (header.find("'<f8'") == std::string::npos)
        throw IntegrityError("load_npy: only <f8 supported, got header: " + header);
    if (header.find("'fortran_order': False") == std::string::npos)
        throw IntegrityError("load_npy: fortran order not supported");

    auto lp = header.find('(');
    auto rp = header.find(')', lp);
    if (lp == std::string::npos || rp == std::string::npos)
        throw IntegrityError("load_npy: malformed shape in header");
    std::string dims = header.substr(lp + 1, rp - lp - 1);
    std::vector<int> shape;
    std::stringstream ss(dims);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        // trim
        size_t a = tok.find_first_not_of(" \t");
        if (a == std::string::npos) continue;
        size_t b = tok.find_last_not_of(" \t");
        shape.push_back(std::stoi(tok.substr(a, b - a + 1)));
    }
    if (shape.empty()) throw IntegrityError("load_npy: scalar arrays unsupported");

    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw IntegrityError("load_npy: truncated data in " + path.string());
    return t;
}

void save_pgm(const std::filesystem::path& path, const Tensor& gray) {
    if (gray.ndim() != 2) throw ArgumentError("save_pgm: expected [H,W], got " + gray.shape_str());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("save_pgm: cannot open " + path.string());
    f << "P5\n" << gray.dim(1) << " " << gray.dim(0) << "\n255\n";
    for (double v : gray.data) f.put(static_cast<char>(to_byte(v)));
}

void save_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3)
        throw ArgumentError("save_ppm: expected [3,H,W], got " + rgb.shape_str());
    const int h = rgb.dim(1), w = rgb.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("save_ppm: cannot open " + path.string());
    f << "P6\n" << w << " " << h << "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) f.put(static_cast<char>(to_byte(rgb.at3(c, y, x))));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("read_text_file: cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("write_text_file: cannot open " + path.string());
    f << text;
}

}  // namespace scd::io
