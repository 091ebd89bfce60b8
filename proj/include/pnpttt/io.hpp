// On-disk formats: denoiser checkpoints ("PNPTTT01"), dataset containers
// ("PNPTTTD1"), 8-bit PGM import/export, and RFC-4180 CSV field quoting.
// Binary payloads are little-endian f64 with a trailing FNV-1a 64 checksum so
// round-trips are bit-identical and corruption is detectable.
#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pnpttt/denoiser.hpp"
#include "pnpttt/image.hpp"

namespace pnpttt {

static_assert(std::endian::native == std::endian::little,
              "serialization code assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'P', 'N', 'P', 'T', 'T', 'T', '0', '1'};
inline constexpr char kDatasetMagic[8] = {'P', 'N', 'P', 'T', 'T', 'T', 'D', '1'};
inline constexpr uint32_t kFormatVersion = 1;

inline uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace detail {

struct ByteWriter {
    std::vector<uint8_t> buf;
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void u8(uint8_t v) { buf.push_back(v); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i32(int32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void f64s(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * 8);
    }
};

struct ByteReader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;
    explicit ByteReader(const std::vector<uint8_t>& b) : buf(b) {}
    void raw(void* p, size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("truncated file");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    int32_t i32() {
        int32_t v;
        raw(&v, 4);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::vector<double> f64s(uint64_t max_count = (1ull << 32)) {
        const uint64_t n = u64();
        if (n > max_count || pos + n * 8 > buf.size())
            throw std::runtime_error("array length out of range");
        std::vector<double> v(n);
        raw(v.data(), n * 8);
        return v;
    }
};

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw std::runtime_error("read failed: " + path);
    return bytes;
}

// append checksum of everything so far, then write
inline void seal_and_write(const std::string& path, ByteWriter& w) {
    const uint64_t sum = fnv1a64(w.buf.data(), w.buf.size());
    w.u64(sum);
    write_file(path, w.buf);
}

// verify trailing checksum, return reader over the payload
inline std::vector<uint8_t> open_sealed(const std::string& path, const char magic[8]) {
    std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() < 16) throw std::runtime_error("file too short: " + path);
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    const uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored != actual) throw std::runtime_error("checksum mismatch: " + path);
    if (std::memcmp(bytes.data(), magic, 8) != 0)
        throw std::runtime_error("bad magic: " + path);
    bytes.resize(bytes.size() - 8);
    return bytes;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const DenoiserParams& params) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 8);
    w.u32(kFormatVersion);
    const auto& c = params.config;
    w.i32(c.depth);
    w.i32(c.channels);
    w.i32(c.kernel_size);
    w.u8(c.residual ? 1 : 0);
    w.f64(c.lipschitz_target);
    w.i32(c.power_iters);
    w.i32(c.sn_ref_size);
    w.u32(static_cast<uint32_t>(params.layers.size()));
    for (const auto& k : params.layers) {
        w.i32(k.out_channels);
        w.i32(k.in_channels);
        w.i32(k.kh);
        w.i32(k.kw);
        w.f64s(k.weights);
        w.f64s(k.bias);
    }
    w.u32(static_cast<uint32_t>(params.sn_state.size()));
    for (const auto& st : params.sn_state) {
        w.f64s(st.u);
        w.f64(st.sigma);
    }
    detail::seal_and_write(path, w);
}

inline DenoiserParams load_checkpoint(const std::string& path) {
    const auto bytes = detail::open_sealed(path, kCheckpointMagic);
    detail::ByteReader r(bytes);
    r.pos = 8;
    const uint32_t version = r.u32();
    if (version != kFormatVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    DenoiserParams p;
    p.config.depth = r.i32();
    p.config.channels = r.i32();
    p.config.kernel_size = r.i32();
    p.config.residual = r.u8() != 0;
    p.config.lipschitz_target = r.f64();
    p.config.power_iters = r.i32();
    p.config.sn_ref_size = r.i32();
    validate_config(p.config);
    const uint32_t nl = r.u32();
    for (uint32_t l = 0; l < nl; ++l) {
        const int oc = r.i32(), ic = r.i32(), kh = r.i32(), kw = r.i32();
        ConvKernel k(oc, ic, kh, kw);
        k.weights = r.f64s();
        k.bias = r.f64s();
        if (k.weights.size() != static_cast<size_t>(oc) * ic * kh * kw ||
            k.bias.size() != static_cast<size_t>(oc))
            throw std::runtime_error("layer shape mismatch in " + path);
        p.layers.push_back(std::move(k));
    }
    const uint32_t ns = r.u32();
    if (ns != nl) throw std::runtime_error("sn_state count mismatch in " + path);
    for (uint32_t l = 0; l < ns; ++l) {
        LayerSnState st;
        st.u = r.f64s();
        st.sigma = r.f64();
        p.sn_state.push_back(std::move(st));
    }
    if (static_cast<int>(nl) != p.config.depth)
        throw std::runtime_error("layer count does not match config in " + path);
    return p;
}

enum class DatasetKind : uint8_t { phantom = 0, texture = 1, imported = 2 };

struct Dataset {
    DatasetKind kind = DatasetKind::imported;
    uint64_t seed = 0;
    std::vector<RealImage> images;  // all same shape
};

inline void save_dataset(const std::string& path, const Dataset& ds) {
    int h = 0, w = 0;
    if (!ds.images.empty()) {
        h = ds.images.front().height;
        w = ds.images.front().width;
        for (const auto& img : ds.images)
            if (img.height != h || img.width != w)
                throw std::invalid_argument("save_dataset: images must share one shape");
    }
    detail::ByteWriter bw;
    bw.raw(kDatasetMagic, 8);
    bw.u32(kFormatVersion);
    bw.u8(static_cast<uint8_t>(ds.kind));
    bw.u64(ds.seed);
    bw.u32(static_cast<uint32_t>(ds.images.size()));
    bw.u32(static_cast<uint32_t>(h));
    bw.u32(static_cast<uint32_t>(w));
    for (const auto& img : ds.images) bw.raw(img.data.data(), img.data.size() * 8);
    detail::seal_and_write(path, bw);
}

inline Dataset load_dataset(const std::string& path) {
    const auto bytes = detail::open_sealed(path, kDatasetMagic);
    detail::ByteReader r(bytes);
    r.pos = 8;
    if (r.u32() != kFormatVersion)
        throw std::runtime_error("unsupported dataset version in " + path);
    Dataset ds;
    ds.kind = static_cast<DatasetKind>(r.u8());
    ds.seed = r.u64();
    const uint32_t count = r.u32();
    const int h = static_cast<int>(r.u32());
    const int w = static_cast<int>(r.u32());
    for (uint32_t i = 0; i < count; ++i) {
        RealImage img(h, w);
        r.raw(img.data.data(), img.data.size() * 8);
        ds.images.push_back(std::move(img));
    }
    return ds;
}

// 8-bit binary PGM; values clamped to [0,1] and scaled to 0..255.
inline void write_pgm(const std::string& path, const RealImage& img) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    for (double v : img.data) {
        const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        f.put(static_cast<char>(static_cast<int>(c * 255.0 + 0.5)));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline RealImage read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    auto next_token = [&]() -> std::string {
        std::string tok;
        int ch;
        while ((ch = f.get()) != EOF) {
            if (ch == '#') {
                while ((ch = f.get()) != EOF && ch != '\n') {
                }
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(ch));
        }
        if (tok.empty()) throw std::runtime_error("malformed pgm header: " + path);
        return tok;
    };
    if (next_token() != "P5") throw std::runtime_error("not a binary pgm: " + path);
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
        throw std::runtime_error("unsupported pgm header: " + path);
    RealImage img(h, w);
    for (double& v : img.data) {
        const int ch = f.get();
        if (ch == EOF) throw std::runtime_error("truncated pgm: " + path);
        v = static_cast<double>(ch) / maxval;
    }
    return img;
}

// RFC-4180: quote when the field contains comma, quote, CR or LF; double
// embedded quotes.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

}  // namespace pnpttt
