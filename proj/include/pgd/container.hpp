#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pgd/heatmap.hpp"
#include "pgd/image.hpp"

namespace pgd {

/// PGDH heatmap container errors, one kind per failure mode.
class container_error : public io_error {
public:
    enum class Kind { bad_magic, bad_version, truncated, trailing };

    container_error(Kind kind, const std::string& msg) : io_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32le(out, bits);
}

inline float get_f32le(const unsigned char* p) {
    const std::uint32_t bits = get_u32le(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

} // namespace detail

constexpr std::uint32_t kContainerVersion = 1;

/// Serialize a stack into the PGDH byte layout: "PGDH", u32 version, u32 K,
/// u32 H, u32 W (little-endian), then K*H*W IEEE-754 float32 values,
/// channel-major then row-major.
inline std::string encode_container(const HeatmapStack& stack) {
    std::string out;
    out.reserve(20 + stack.values.size() * 4);
    out += "PGDH";
    detail::put_u32le(out, kContainerVersion);
    detail::put_u32le(out, static_cast<std::uint32_t>(stack.channels));
    detail::put_u32le(out, static_cast<std::uint32_t>(stack.height));
    detail::put_u32le(out, static_cast<std::uint32_t>(stack.width));
    for (double v : stack.values)
        detail::put_f32le(out, static_cast<float>(v));
    return out;
}

inline HeatmapStack decode_container(const std::string& bytes, const std::string& origin = "PGDH") {
    if (bytes.size() < 4 || bytes.compare(0, 4, "PGDH") != 0)
        throw container_error(container_error::Kind::bad_magic, origin + ": bad magic");
    if (bytes.size() < 20)
        throw container_error(container_error::Kind::truncated, origin + ": truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t version = detail::get_u32le(p + 4);
    if (version != kContainerVersion)
        throw container_error(container_error::Kind::bad_version,
                              origin + ": unsupported version " + std::to_string(version));
    HeatmapStack stack;
    stack.channels = static_cast<int>(detail::get_u32le(p + 8));
    stack.height = static_cast<int>(detail::get_u32le(p + 12));
    stack.width = static_cast<int>(detail::get_u32le(p + 16));
    const std::size_t count = static_cast<std::size_t>(stack.channels) * stack.height * stack.width;
    if (bytes.size() < 20 + count * 4)
        throw container_error(container_error::Kind::truncated, origin + ": truncated payload");
    if (bytes.size() > 20 + count * 4)
        throw container_error(container_error::Kind::trailing, origin + ": trailing bytes");
    stack.values.resize(count);
    for (std::size_t idx = 0; idx < count; ++idx)
        stack.values[idx] = detail::get_f32le(p + 20 + idx * 4);
    return stack;
}

inline void save_container(const std::string& path, const HeatmapStack& stack) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw io_error(path + ": cannot open for writing");
    const std::string bytes = encode_container(stack);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw io_error(path + ": write failed");
}

inline HeatmapStack load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw io_error(path + ": cannot open file");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_container(bytes, path);
}

} // namespace pgd
