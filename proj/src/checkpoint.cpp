// SPDX-License-Identifier: Apache-2.0

#include "cyb/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace cyb {

namespace {

constexpr char kMagic[8] = {'C', 'Y', 'B', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffull));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<std::uint32_t>(ckpt.metadata_json.size()));
    out += ckpt.metadata_json;
    put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        std::size_t total = 1;
        for (long d : t.shape) {
            put_u64(out, static_cast<std::uint64_t>(d));
            total *= static_cast<std::size_t>(d);
        }
        if (total != t.data.size()) {
            throw std::invalid_argument("tensor shape does not match data size: " + t.name);
        }
        for (float f : t.data) put_f32(out, f);
    }
    put_u32(out, static_cast<std::uint32_t>(ckpt.counters.size()));
    for (const auto& [name, value] : ckpt.counters) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u64(out, static_cast<std::uint64_t>(value));
    }

    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
    }
    fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    Reader r{buf, sizeof(kMagic)};
    Checkpoint ckpt;
    ckpt.metadata_json = r.str();
    const std::uint32_t n_tensors = r.u32();
    ckpt.tensors.resize(n_tensors);
    for (auto& t : ckpt.tensors) {
        t.name = r.str();
        const std::uint32_t ndim = r.u32();
        t.shape.resize(ndim);
        std::size_t total = 1;
        for (auto& d : t.shape) {
            d = static_cast<long>(r.u64());
            total *= static_cast<std::size_t>(d);
        }
        t.data.resize(total);
        for (auto& x : t.data) x = r.f32();
    }
    const std::uint32_t n_counters = r.u32();
    for (std::uint32_t i = 0; i < n_counters; ++i) {
        std::string name = r.str();
        ckpt.counters[name] = static_cast<long long>(r.u64());
    }
    return ckpt;
}

}  // namespace cyb
