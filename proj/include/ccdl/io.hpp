#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccdl/cdl.hpp"
#include "ccdl/dims.hpp"
#include "ccdl/errors.hpp"
#include "ccdl/prox.hpp"
#include "ccdl/tensor.hpp"

// On-disk formats. Tensors use a little-endian binary container ("CDLT"),
// dictionaries append a JSON metadata trailer to it, traces are plain CSV.

namespace ccdl {

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError("io: write failed");
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

inline void put_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 4);
}

inline void put_u64le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 8);
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw FormatError(std::string("io: truncated file while reading ") + what);
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
    std::uint8_t v = 0;
    get_bytes(is, &v, 1, what);
    return v;
}

inline std::uint32_t get_u32le(std::istream& is, const char* what) {
    unsigned char b[4];
    get_bytes(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64le(std::istream& is, const char* what) {
    unsigned char b[8];
    get_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

// Serialize the payload through an explicit little-endian byte buffer so the
// files read back identically on any host.
inline void write_tensor_body(std::ostream& os, const Tensor<double>& t) {
    if (t.rank() == 0 || t.rank() > 255)
        throw ParameterError("io: tensor rank must be in [1, 255]");
    put_bytes(os, "CDLT", 4);
    put_u8(os, 0x01);  // version
    put_u8(os, 0x01);  // dtype: float64
    put_u8(os, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64le(os, static_cast<std::uint64_t>(d));
    std::vector<unsigned char> buf(t.size() * 8);
    for (std::size_t i = 0; i < t.size(); ++i) {
        auto u = std::bit_cast<std::uint64_t>(t[i]);
        for (int b = 0; b < 8; ++b)
            buf[i * 8 + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xff);
    }
    if (!buf.empty()) put_bytes(os, buf.data(), buf.size());
}

inline Tensor<double> read_tensor_body(std::istream& is) {
    char magic[4];
    get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "CDLT", 4) != 0)
        throw FormatError("io: bad magic, not a CDLT tensor file");
    std::uint8_t version = get_u8(is, "version");
    if (version != 0x01)
        throw FormatError("io: unsupported CDLT version " + std::to_string(version));
    std::uint8_t dtype = get_u8(is, "dtype");
    if (dtype != 0x01)
        throw FormatError("io: unsupported dtype " + std::to_string(dtype));
    std::uint8_t ndim = get_u8(is, "ndim");
    if (ndim == 0) throw FormatError("io: zero-rank tensor");
    std::vector<std::size_t> shape(ndim);
    std::size_t total = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        std::uint64_t d = get_u64le(is, "dims");
        if (d == 0 || d > (std::uint64_t{1} << 32))
            throw FormatError("io: implausible dimension in header");
        if (total > (std::size_t{1} << 34) / d)
            throw FormatError("io: tensor too large");
        shape[i] = static_cast<std::size_t>(d);
        total *= shape[i];
    }
    Tensor<double> t(shape);
    std::vector<unsigned char> buf(total * 8);
    get_bytes(is, buf.data(), buf.size(), "payload");
    for (std::size_t i = 0; i < total; ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b)
            u |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
        t[i] = std::bit_cast<double>(u);
    }
    return t;
}

inline void expect_eof(std::istream& is, const char* what) {
    is.peek();
    if (!is.eof())
        throw FormatError(std::string("io: trailing bytes after ") + what);
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("io: cannot open '" + path + "' for writing");
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("io: cannot open '" + path + "' for reading");
    return is;
}

}  // namespace detail

inline void save_tensor(const std::string& path, const Tensor<double>& t) {
    auto os = detail::open_out(path);
    detail::write_tensor_body(os, t);
    os.flush();
    if (!os) throw IoError("io: write failed on '" + path + "'");
}

inline Tensor<double> load_tensor(const std::string& path) {
    auto is = detail::open_in(path);
    Tensor<double> t = detail::read_tensor_body(is);
    detail::expect_eof(is, "tensor payload");
    return t;
}

// A dictionary file is a CDLT tensor holding the filters followed by a JSON
// trailer (preceded by its u32 byte length) recording filter_shape, norm_mode
// and channel count.
struct DictionaryFile {
    Tensor<double> filters;
    ConstraintSet cset;
    std::size_t channels = 1;
};

inline void save_dictionary(const std::string& path, const Tensor<double>& filters,
                            const ConstraintSet& cs, std::size_t channels = 1) {
    if (channels == 0) throw ParameterError("io: channels must be positive");
    auto os = detail::open_out(path);
    detail::write_tensor_body(os, filters);
    nlohmann::json meta;
    meta["filter_shape"] = {cs.filt_rows, cs.filt_cols};
    meta["norm_mode"] = to_string(cs.mode);
    meta["channels"] = channels;
    std::string j = meta.dump();
    detail::put_u32le(os, static_cast<std::uint32_t>(j.size()));
    detail::put_bytes(os, j.data(), j.size());
    os.flush();
    if (!os) throw IoError("io: write failed on '" + path + "'");
}

inline void save_dictionary(const std::string& path, const Dictionary& D) {
    save_dictionary(path, D.filters, D.cset, 1);
}

inline DictionaryFile load_dictionary(const std::string& path) {
    auto is = detail::open_in(path);
    DictionaryFile df;
    df.filters = detail::read_tensor_body(is);
    std::uint32_t len = detail::get_u32le(is, "metadata length");
    std::string j(len, '\0');
    if (len > 0) detail::get_bytes(is, j.data(), len, "metadata");
    detail::expect_eof(is, "dictionary metadata");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(j);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("io: bad dictionary metadata: ") + e.what());
    }
    try {
        auto fs = meta.at("filter_shape");
        if (!fs.is_array() || fs.size() != 2)
            throw FormatError("io: filter_shape must be a two-element array");
        df.cset.filt_rows = fs.at(0).get<std::size_t>();
        df.cset.filt_cols = fs.at(1).get<std::size_t>();
        df.cset.mode = norm_mode_from_string(meta.at("norm_mode").get<std::string>());
        df.channels = meta.at("channels").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("io: bad dictionary metadata: ") + e.what());
    }
    std::size_t need = df.channels > 1 ? 4 : 3;
    if (df.filters.rank() != need)
        throw FormatError("io: dictionary tensor rank does not match channel count");
    if (df.channels > 1 && df.filters.shape(0) != df.channels)
        throw FormatError("io: dictionary tensor leading dimension does not match channels");
    df.cset.rows = df.filters.shape(need - 2);
    df.cset.cols = df.filters.shape(need - 1);
    df.cset.validate();
    return df;
}

inline constexpr const char* kTraceCsvHeader =
    "iter,time_s,objective,fidelity,l1,r_primal_x,r_dual_x,r_primal_d,r_dual_d";

inline void save_trace_csv(const std::string& path, const ConvergenceTrace& trace) {
    auto os = detail::open_out(path);
    os << kTraceCsvHeader << '\n';
    char buf[512];
    for (const TraceRow& r : trace.rows) {
        std::snprintf(buf, sizeof buf,
                      "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r.iter, r.time_s, r.objective, r.fidelity, r.l1, r.r_primal_x,
                      r.r_dual_x, r.r_primal_d, r.r_dual_d);
        os << buf;
    }
    os.flush();
    if (!os) throw IoError("io: write failed on '" + path + "'");
}

inline ConvergenceTrace load_trace_csv(const std::string& path) {
    auto is = detail::open_in(path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("io: empty trace file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTraceCsvHeader) throw FormatError("io: unexpected trace CSV header");
    ConvergenceTrace trace;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        TraceRow r;
        double cols[8];
        const char* p = line.c_str();
        char* end = nullptr;
        unsigned long long it = std::strtoull(p, &end, 10);
        if (end == p || *end != ',')
            throw FormatError("io: bad trace row at line " + std::to_string(lineno));
        r.iter = static_cast<std::size_t>(it);
        p = end + 1;
        for (int c = 0; c < 8; ++c) {
            cols[c] = std::strtod(p, &end);
            if (end == p)
                throw FormatError("io: bad trace row at line " + std::to_string(lineno));
            p = end;
            if (c < 7) {
                if (*p != ',')
                    throw FormatError("io: bad trace row at line " + std::to_string(lineno));
                ++p;
            }
        }
        if (*p != '\0')
            throw FormatError("io: trailing characters at line " + std::to_string(lineno));
        r.time_s = cols[0];
        r.objective = cols[1];
        r.fidelity = cols[2];
        r.l1 = cols[3];
        r.r_primal_x = cols[4];
        r.r_dual_x = cols[5];
        r.r_primal_d = cols[6];
        r.r_dual_d = cols[7];
        trace.rows.push_back(r);
    }
    return trace;
}

}  // namespace ccdl
