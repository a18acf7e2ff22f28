#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgd/container.hpp"
#include "pgd/pgfe.hpp"

namespace pgd {

/// FusionParams file layout: one JSON header line (dims, scalars, block
/// names in order), a newline, then one block per matrix/vector as
/// u32 rows, u32 cols (little-endian) followed by rows*cols float32
/// little-endian values.
inline void save_fusion_params(const std::string& path, const FusionParams& p) {
    validate_fusion_params(p);
    nlohmann::json header{
        {"version", 1},
        {"channels", p.channels},
        {"physics_channels", p.physics_channels},
        {"hidden", p.hidden},
        {"lambda", p.lambda},
        {"alpha", p.alpha},
        {"beta", p.beta},
        {"gamma", p.gamma},
        {"delta", p.delta},
        {"blocks",
         {"w_q_proj", "w_linear", "b_linear", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"}},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw io_error(path + ": cannot open for writing");
    out << header.dump() << "\n";

    auto write_block = [&](const std::vector<double>& v, int rows, int cols) {
        std::string bytes;
        detail::put_u32le(bytes, static_cast<std::uint32_t>(rows));
        detail::put_u32le(bytes, static_cast<std::uint32_t>(cols));
        for (double x : v)
            detail::put_f32le(bytes, static_cast<float>(x));
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };
    write_block(p.w_q_proj, p.physics_channels, p.channels);
    write_block(p.w_linear, p.channels, p.channels);
    write_block(p.b_linear, 1, p.channels);
    write_block(p.ffn_w1, p.channels, p.hidden);
    write_block(p.ffn_b1, 1, p.hidden);
    write_block(p.ffn_w2, p.hidden, p.channels);
    write_block(p.ffn_b2, 1, p.channels);
    if (!out)
        throw io_error(path + ": write failed");
}

inline FusionParams load_fusion_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw io_error(path + ": cannot open file");
    std::string line;
    if (!std::getline(in, line))
        throw io_error(path + ": missing header");
    const nlohmann::json header = nlohmann::json::parse(line);
    if (header.at("version").get<int>() != 1)
        throw io_error(path + ": unsupported fusion params version");

    FusionParams p;
    p.channels = header.at("channels").get<int>();
    p.physics_channels = header.at("physics_channels").get<int>();
    p.hidden = header.at("hidden").get<int>();
    p.lambda = header.at("lambda").get<double>();
    p.alpha = header.at("alpha").get<double>();
    p.beta = header.at("beta").get<double>();
    p.gamma = header.at("gamma").get<double>();
    p.delta = header.at("delta").get<double>();

    auto read_block = [&](std::vector<double>& v, int rows, int cols, const char* what) {
        unsigned char dims[8];
        in.read(reinterpret_cast<char*>(dims), 8);
        if (in.gcount() != 8)
            throw io_error(path + ": truncated block header for " + what);
        const auto r = detail::get_u32le(dims);
        const auto c = detail::get_u32le(dims + 4);
        if (static_cast<int>(r) != rows || static_cast<int>(c) != cols)
            throw io_error(path + ": block dimension mismatch for " + what);
        std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols * 4);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in.gcount()) != buf.size())
            throw io_error(path + ": truncated block payload for " + what);
        v.resize(static_cast<std::size_t>(rows) * cols);
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = detail::get_f32le(buf.data() + i * 4);
    };
    read_block(p.w_q_proj, p.physics_channels, p.channels, "w_q_proj");
    read_block(p.w_linear, p.channels, p.channels, "w_linear");
    read_block(p.b_linear, 1, p.channels, "b_linear");
    read_block(p.ffn_w1, p.channels, p.hidden, "ffn_w1");
    read_block(p.ffn_b1, 1, p.hidden, "ffn_b1");
    read_block(p.ffn_w2, p.hidden, p.channels, "ffn_w2");
    read_block(p.ffn_b2, 1, p.channels, "ffn_b2");
    validate_fusion_params(p);
    return p;
}

} // namespace pgd
