#pragma once

// Versioned binary container for training state: network parameters,
// batch-norm running statistics, optimizer velocities, RNG state and
// bookkeeping counters. All scalars are little-endian; doubles round-trip
// bit-exactly. Layout: "AAEC" magic, u32 version, then named chunks of
// [u16 name_len][name][u64 payload_len][payload].

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "aae/errors.hpp"
#include "aae/net.hpp"
#include "aae/rng.hpp"
#include "aae/tensor.hpp"

namespace aae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ByteWriter {
    std::string buf;

    void u8(std::uint8_t x) { buf.push_back(static_cast<char>(x)); }
    void u16(std::uint16_t x) {
        for (int i = 0; i < 2; ++i) buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
    }
    void u32(std::uint32_t x) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t x) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
    }
    void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf.append(s);
    }
    void tensor(const Tensor& t) {
        u64(t.rows);
        u64(t.cols);
        for (double x : t.v) f64(x);
    }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    explicit ByteReader(const std::string& b) : buf(b) {}

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw IngestError("checkpoint chunk truncated", pos);
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t x = 0;
        for (int i = 0; i < 2; ++i) x |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return x;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return x;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return x;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        std::uint64_t r = u64(), c = u64();
        need(r * c * 8);
        Tensor t(r, c);
        for (auto& x : t.v) x = f64();
        return t;
    }
    bool done() const { return pos == buf.size(); }
};

using ChunkMap = std::map<std::string, std::string>;

inline void write_container(std::ostream& out, const ChunkMap& chunks) {
    out.write("AAEC", 4);
    ByteWriter head;
    head.u32(kCheckpointVersion);
    out.write(head.buf.data(), static_cast<std::streamsize>(head.buf.size()));
    for (const auto& [name, payload] : chunks) {
        ByteWriter w;
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.buf.append(name);
        w.u64(payload.size());
        out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    }
}

inline ChunkMap read_container(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "AAEC", 4) != 0)
        throw IngestError("not a checkpoint container (bad magic)", 0);
    char vb[4] = {};
    in.read(vb, 4);
    if (in.gcount() != 4) throw IngestError("checkpoint truncated in version field", 4);
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(vb[i])) << (8 * i);
    if (version != kCheckpointVersion)
        throw IngestError("unsupported checkpoint version " + std::to_string(version), 4);

    ChunkMap chunks;
    std::uint64_t offset = 8;
    while (true) {
        char nb[2];
        in.read(nb, 2);
        if (in.gcount() == 0) break;  // clean end
        if (in.gcount() != 2) throw IngestError("checkpoint truncated in chunk header", offset);
        std::uint16_t nlen = static_cast<std::uint16_t>(static_cast<unsigned char>(nb[0])) |
                             (static_cast<std::uint16_t>(static_cast<unsigned char>(nb[1])) << 8);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        if (in.gcount() != nlen) throw IngestError("checkpoint truncated in chunk name", offset + 2);
        char lb[8];
        in.read(lb, 8);
        if (in.gcount() != 8) throw IngestError("checkpoint truncated in chunk length", offset + 2 + nlen);
        std::uint64_t plen = 0;
        for (int i = 0; i < 8; ++i) plen |= static_cast<std::uint64_t>(static_cast<unsigned char>(lb[i])) << (8 * i);
        std::string payload(plen, '\0');
        in.read(payload.data(), static_cast<std::streamsize>(plen));
        if (static_cast<std::uint64_t>(in.gcount()) != plen)
            throw IngestError("checkpoint truncated in chunk payload '" + name + "'",
                              offset + 2 + nlen + 8);
        offset += 2 + nlen + 8 + plen;
        chunks[name] = std::move(payload);
    }
    return chunks;
}

inline void put_model(ByteWriter& w, const MlpModel& m) {
    w.u32(static_cast<std::uint32_t>(m.layers.size()));
    for (const auto& l : m.layers) {
        w.u64(l.spec.in_dim);
        w.u64(l.spec.out_dim);
        w.u8(static_cast<std::uint8_t>(l.spec.activation));
        w.u8(l.spec.batch_norm ? 1 : 0);
        w.f64(l.spec.init_std);
        w.tensor(l.W);
        w.tensor(l.b);
        if (l.spec.batch_norm) {
            w.tensor(l.gamma);
            w.tensor(l.beta);
            w.tensor(l.run_mean);
            w.tensor(l.run_var);
        }
    }
}

inline MlpModel get_model(ByteReader& r) {
    MlpModel m;
    const std::uint32_t n = r.u32();
    m.layers.resize(n);
    for (auto& l : m.layers) {
        l.spec.in_dim = r.u64();
        l.spec.out_dim = r.u64();
        l.spec.activation = static_cast<Act>(r.u8());
        l.spec.batch_norm = r.u8() != 0;
        l.spec.init_std = r.f64();
        l.W = r.tensor();
        l.b = r.tensor();
        if (l.spec.batch_norm) {
            l.gamma = r.tensor();
            l.beta = r.tensor();
            l.run_mean = r.tensor();
            l.run_var = r.tensor();
        }
    }
    return m;
}

inline void put_velocities(ByteWriter& w, const SgdOptimizer& opt) {
    w.u32(static_cast<std::uint32_t>(opt.velocities().size()));
    for (const auto& v : opt.velocities()) w.tensor(v);
}

inline void get_velocities(ByteReader& r, SgdOptimizer& opt) {
    const std::uint32_t n = r.u32();
    if (n != opt.velocities().size())
        throw ConfigError("checkpoint velocity count " + std::to_string(n) +
                          " does not match optimizer with " +
                          std::to_string(opt.velocities().size()) + " parameters");
    for (auto& v : opt.velocities()) {
        Tensor t = r.tensor();
        if (!t.same_shape(v))
            throw ConfigError("checkpoint velocity shape " + shape_str(t) +
                              " does not match parameter " + shape_str(v));
        v = std::move(t);
    }
}

inline void put_rng(ByteWriter& w, const Rng& rng) {
    for (auto word : rng.state()) w.u64(word);
}

inline Rng get_rng(ByteReader& r) {
    Rng::State st;
    for (auto& word : st) word = r.u64();
    return Rng::from_state(st);
}

inline void save_chunks_file(const std::string& path, const ChunkMap& chunks) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open checkpoint for writing: " + path, 0);
    write_container(out, chunks);
    if (!out) throw IngestError("checkpoint write failed: " + path, 0);
}

inline ChunkMap load_chunks_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open checkpoint: " + path, 0);
    return read_container(in);
}

}  // namespace aae
