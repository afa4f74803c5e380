#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/rng.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   magic   "ADVSYN1\n"                                    8 bytes
//   version u32 (currently 1)
//   meta    u64 count, then per entry:
//             u32 name length, name bytes, u64 value
//   tensors u64 count, then per entry:
//             u32 name length, name bytes,
//             u8 dtype (0 = f64), u32 rank, u32 dims[rank],
//             payload: size doubles as little-endian u64 bit patterns
//   checksum u64, FNV-1a 64 over every preceding byte
//
// Entries are written in name order (std::map), so save -> load -> save is
// byte-identical. Doubles ride in meta as bit patterns via put_f64/get_f64.
class Checkpoint {
  public:
    static constexpr char kMagic[8] = {'A', 'D', 'V', 'S', 'Y', 'N', '1', '\n'};
    static constexpr uint32_t kVersion = 1;

    std::map<std::string, uint64_t> meta;
    std::map<std::string, Tensor> tensors;

    void put_f64(const std::string& name, double v) { meta[name] = std::bit_cast<uint64_t>(v); }

    double get_f64(const std::string& name) const {
        return std::bit_cast<double>(require_meta(name));
    }

    uint64_t require_meta(const std::string& name) const {
        auto it = meta.find(name);
        if (it == meta.end()) throw DataError("checkpoint: missing meta entry '" + name + "'");
        return it->second;
    }

    const Tensor& require_tensor(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
        return it->second;
    }

    std::string serialize() const {
        std::string buf;
        buf.append(kMagic, sizeof(kMagic));
        append_u32(buf, kVersion);
        append_u64(buf, meta.size());
        for (const auto& [name, value] : meta) {
            append_name(buf, name);
            append_u64(buf, value);
        }
        append_u64(buf, tensors.size());
        for (const auto& [name, t] : tensors) {
            append_name(buf, name);
            buf.push_back('\0');  // dtype 0 = f64
            append_u32(buf, static_cast<uint32_t>(t.rank()));
            for (int d : t.shape()) append_u32(buf, static_cast<uint32_t>(d));
            for (int64_t i = 0; i < t.size(); ++i) {
                append_u64(buf, std::bit_cast<uint64_t>(t[i]));
            }
        }
        append_u64(buf, fnv1a(buf));
        return buf;
    }

    void save(const std::string& path) const {
        const std::string buf = serialize();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("checkpoint: cannot write " + path);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw DataError("checkpoint: write failed for " + path);
    }

    static Checkpoint deserialize(const std::string& buf, const std::string& origin) {
        if (buf.size() < sizeof(kMagic) + 4 + 8 + 8 + 8) {
            throw DataError("checkpoint: " + origin + " is truncated");
        }
        if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
            throw DataError("checkpoint: " + origin + " has wrong magic bytes");
        }
        const uint64_t stored = read_u64(buf, buf.size() - 8);
        const uint64_t computed = fnv1a(std::string_view(buf.data(), buf.size() - 8));
        if (stored != computed) {
            throw DataError("checkpoint: " + origin + " failed checksum validation (stored " +
                            std::to_string(stored) + ", computed " + std::to_string(computed) +
                            ")");
        }
        size_t pos = sizeof(kMagic);
        const uint32_t version = read_u32(buf, pos);
        pos += 4;
        if (version != kVersion) {
            throw DataError("checkpoint: " + origin + " has unsupported version " +
                            std::to_string(version));
        }
        Checkpoint ck;
        auto need = [&buf, &origin](size_t at, size_t n) {
            if (at + n > buf.size()) throw DataError("checkpoint: " + origin + " is truncated");
        };
        need(pos, 8);
        const uint64_t n_meta = read_u64(buf, pos);
        pos += 8;
        for (uint64_t i = 0; i < n_meta; ++i) {
            std::string name = read_name(buf, pos, origin);
            need(pos, 8);
            ck.meta[name] = read_u64(buf, pos);
            pos += 8;
        }
        need(pos, 8);
        const uint64_t n_tensors = read_u64(buf, pos);
        pos += 8;
        for (uint64_t i = 0; i < n_tensors; ++i) {
            std::string name = read_name(buf, pos, origin);
            if (pos >= buf.size()) throw DataError("checkpoint: " + origin + " is truncated");
            const uint8_t dtype = static_cast<uint8_t>(buf[pos++]);
            if (dtype != 0) {
                throw DataError("checkpoint: " + origin + " tensor '" + name +
                                "' has unsupported dtype " + std::to_string(dtype));
            }
            need(pos, 4);
            const uint32_t rank = read_u32(buf, pos);
            pos += 4;
            if (rank > 8) throw DataError("checkpoint: " + origin + " has implausible rank");
            std::vector<int> shape;
            int64_t count = 1;
            for (uint32_t d = 0; d < rank; ++d) {
                need(pos, 4);
                const uint32_t dim = read_u32(buf, pos);
                pos += 4;
                shape.push_back(static_cast<int>(dim));
                count *= dim;
            }
            if (pos + static_cast<size_t>(count) * 8 > buf.size()) {
                throw DataError("checkpoint: " + origin + " is truncated");
            }
            Tensor t(shape);
            for (int64_t k = 0; k < count; ++k) {
                t[k] = std::bit_cast<double>(read_u64(buf, pos));
                pos += 8;
            }
            ck.tensors.emplace(std::move(name), std::move(t));
        }
        if (pos != buf.size() - 8) {
            throw DataError("checkpoint: " + origin + " has trailing garbage");
        }
        return ck;
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("checkpoint: cannot open " + path);
        std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return deserialize(buf, path);
    }

    // rng state rides as two meta entries
    void put_rng(const std::string& name, const Rng& rng) {
        meta[name + "/seed"] = rng.seed();
        meta[name + "/state"] = rng.state();
    }

    Rng get_rng(const std::string& name) const {
        Rng rng(require_meta(name + "/seed"));
        rng.set_state(require_meta(name + "/state"));
        return rng;
    }

  private:
    static void append_u32(std::string& buf, uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    static void append_u64(std::string& buf, uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    static void append_name(std::string& buf, const std::string& name) {
        append_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
    }
    static uint32_t read_u32(const std::string& buf, size_t pos) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        return v;
    }
    static uint64_t read_u64(const std::string& buf, size_t pos) {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        return v;
    }
    static std::string read_name(const std::string& buf, size_t& pos, const std::string& origin) {
        if (pos + 4 > buf.size()) throw DataError("checkpoint: " + origin + " is truncated");
        const uint32_t len = read_u32(buf, pos);
        pos += 4;
        if (len > 4096 || pos + len > buf.size()) {
            throw DataError("checkpoint: " + origin + " has a corrupt name field");
        }
        std::string name = buf.substr(pos, len);
        pos += len;
        return name;
    }
    static uint64_t fnv1a(std::string_view data) {
        uint64_t h = 14695981039346656037ULL;
        for (char c : data) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ULL;
        }
        return h;
    }
};

}  // namespace advsyn
