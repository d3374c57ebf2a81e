#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dpmlat/common.hpp"
#include "dpmlat/rng.hpp"

namespace dpmlat {

// ---------------------------------------------------------------------------
// Latent code z = (x_T, eps_T, ..., eps_1): all Gaussian randomness a
// stochastic reverse chain consumes. Total dimension d_I * (T + 1).
//
// Binary container: magic "DPML", u32 version, u32 d_I, u32 T, then the
// coordinates as little-endian 64-bit floats in pack() order.
// ---------------------------------------------------------------------------

struct LatentCode {
    int data_dim = 0;
    int steps = 0;
    Vec x_T;
    std::vector<Vec> eps;  // eps[0] = eps_T, ..., eps[T-1] = eps_1

    // eps consumed at chain step t (t = T..1).
    Vec& eps_at(int t) { return eps[static_cast<std::size_t>(steps - t)]; }
    const Vec& eps_at(int t) const { return eps[static_cast<std::size_t>(steps - t)]; }

    int total_dim() const { return data_dim * (steps + 1); }

    void validate() const {
        if (data_dim < 1 || steps < 1) throw ValidationError("latent", "d_I and T must be >= 1");
        if (static_cast<int>(x_T.size()) != data_dim)
            throw DimensionMismatch("latent", "x_T size vs data_dim");
        if (static_cast<int>(eps.size()) != steps)
            throw DimensionMismatch("latent", "eps count vs steps");
        for (const auto& e : eps)
            if (static_cast<int>(e.size()) != data_dim)
                throw DimensionMismatch("latent", "eps slot size vs data_dim");
    }

    Vec pack() const {
        validate();
        Vec out;
        out.reserve(static_cast<std::size_t>(total_dim()));
        out.insert(out.end(), x_T.begin(), x_T.end());
        for (const auto& e : eps) out.insert(out.end(), e.begin(), e.end());
        return out;
    }

    static LatentCode unpack(const Vec& flat, int data_dim, int steps) {
        if (static_cast<int>(flat.size()) != data_dim * (steps + 1))
            throw DimensionMismatch("latent", "flat size vs d_I*(T+1)");
        LatentCode z;
        z.data_dim = data_dim;
        z.steps = steps;
        auto it = flat.begin();
        z.x_T.assign(it, it + data_dim);
        it += data_dim;
        z.eps.resize(static_cast<std::size_t>(steps));
        for (auto& e : z.eps) {
            e.assign(it, it + data_dim);
            it += data_dim;
        }
        return z;
    }
};

// z ~ N(0, I) of dimension d_I * (T + 1) from the supplied stream.
inline LatentCode sample_latent(int data_dim, int steps, Rng& rng) {
    if (data_dim < 1 || steps < 1) throw ValidationError("latent", "d_I and T must be >= 1");
    LatentCode z;
    z.data_dim = data_dim;
    z.steps = steps;
    z.x_T = rng.normal_vec(static_cast<std::size_t>(data_dim));
    z.eps.resize(static_cast<std::size_t>(steps));
    for (auto& e : z.eps) e = rng.normal_vec(static_cast<std::size_t>(data_dim));
    return z;
}

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32_le(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw ValidationError("latent", "truncated container");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
}

inline void put_f64_le(std::string& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64_le(const std::string& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw ValidationError("latent", "truncated container");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

}  // namespace detail

inline std::string latent_to_bytes(const LatentCode& z) {
    Vec flat = z.pack();
    std::string out;
    out.reserve(16 + flat.size() * 8);
    out += "DPML";
    detail::put_u32_le(out, 1u);
    detail::put_u32_le(out, static_cast<std::uint32_t>(z.data_dim));
    detail::put_u32_le(out, static_cast<std::uint32_t>(z.steps));
    for (double x : flat) detail::put_f64_le(out, x);
    return out;
}

inline LatentCode latent_from_bytes(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "DPML") != 0)
        throw ValidationError("latent", "bad magic");
    std::size_t pos = 4;
    std::uint32_t version = detail::get_u32_le(bytes, pos);
    if (version != 1u) throw ValidationError("latent", "unsupported container version");
    int d = static_cast<int>(detail::get_u32_le(bytes, pos));
    int T = static_cast<int>(detail::get_u32_le(bytes, pos));
    Vec flat(static_cast<std::size_t>(d) * static_cast<std::size_t>(T + 1));
    for (auto& x : flat) x = detail::get_f64_le(bytes, pos);
    if (pos != bytes.size()) throw ValidationError("latent", "trailing bytes in container");
    return LatentCode::unpack(flat, d, T);
}

inline void save_latent(const LatentCode& z, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("latent", "cannot open " + path);
    std::string bytes = latent_to_bytes(z);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline LatentCode load_latent(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("latent", "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return latent_from_bytes(bytes);
}

}  // namespace dpmlat
