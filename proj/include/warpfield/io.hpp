#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "warpfield/engine.hpp"
#include "warpfield/field.hpp"
#include "warpfield/landmarks.hpp"
#include "warpfield/volume.hpp"

namespace warpfield {

/// Shortest decimal with `sig` significant digits; the one formatting used
/// for every human-readable number we emit.
inline std::string fmt_g(double v, int sig = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", sig, v);
    return buf;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// "key = value" lines; '#' starts a comment; blank lines skipped
inline bool parse_kv(const std::string& line, std::string& key, std::string& value) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') return false;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw std::runtime_error("expected key = value, got: " + t);
    key = trim(t.substr(0, eq));
    value = trim(t.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("empty key in line: " + t);
    return true;
}

inline double parse_real(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw std::runtime_error("bad " + what + ": " + s);
    return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') throw std::runtime_error("bad " + what + ": " + s);
    return v;
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

inline void append_f32_le(std::string& buf, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    buf.push_back(static_cast<char>(u & 0xff));
    buf.push_back(static_cast<char>((u >> 8) & 0xff));
    buf.push_back(static_cast<char>((u >> 16) & 0xff));
    buf.push_back(static_cast<char>((u >> 24) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
    const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_binary_file(const std::string& path, const std::string& content) {
    write_text_file(path, content);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct GridHeader {
    Dims3 dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    int channels = 1;
    std::string payload;  // raw file name, sibling of the header
};

inline std::string payload_name(const std::string& header_path) {
    return std::filesystem::path(header_path).filename().string() + ".raw";
}

inline std::string header_text(const GridHeader& h) {
    std::string s = "warpfield grid 1\n";
    s += "dims = " + std::to_string(h.dims[0]) + " " + std::to_string(h.dims[1]) + " " +
         std::to_string(h.dims[2]) + "\n";
    s += "spacing = " + fmt_g(h.spacing[0], 9) + " " + fmt_g(h.spacing[1], 9) + " " +
         fmt_g(h.spacing[2], 9) + "\n";
    s += "dtype = f32\n";
    s += "order = x-fastest\n";
    s += "channels = " + std::to_string(h.channels) + "\n";
    s += "payload = " + h.payload + "\n";
    return s;
}

inline GridHeader parse_header(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "warpfield grid 1")
        throw std::runtime_error("bad grid header magic in " + path);
    GridHeader h;
    bool have_dims = false, have_payload = false;
    std::string key, value;
    while (std::getline(in, line)) {
        if (!parse_kv(line, key, value)) continue;
        if (key == "dims") {
            const auto t = split_ws(value);
            if (t.size() != 3) throw std::runtime_error("bad dims in " + path);
            for (int d = 0; d < 3; ++d) h.dims[d] = static_cast<int>(parse_int(t[d], "dims"));
            have_dims = true;
        } else if (key == "spacing") {
            const auto t = split_ws(value);
            if (t.size() != 3) throw std::runtime_error("bad spacing in " + path);
            for (int d = 0; d < 3; ++d) h.spacing[d] = parse_real(t[d], "spacing");
        } else if (key == "dtype") {
            if (value != "f32") throw std::runtime_error("unsupported dtype: " + value);
        } else if (key == "order") {
            if (value != "x-fastest") throw std::runtime_error("unsupported order: " + value);
        } else if (key == "channels") {
            h.channels = static_cast<int>(parse_int(value, "channels"));
        } else if (key == "payload") {
            h.payload = value;
            have_payload = true;
        } else {
            throw std::runtime_error("unknown grid header key: " + key);
        }
    }
    if (!have_dims || !have_payload) throw std::runtime_error("incomplete grid header in " + path);
    if (h.channels != 1 && h.channels != 3) throw std::runtime_error("unsupported channel count in " + path);
    return h;
}

inline std::string payload_path(const std::string& header_path, const GridHeader& h) {
    return (std::filesystem::path(header_path).parent_path() / h.payload).string();
}

inline std::vector<double> read_payload(const std::string& header_path, const GridHeader& h,
                                        std::size_t expected_values) {
    const std::string raw = read_text_file(payload_path(header_path, h));
    if (raw.size() != expected_values * 4)
        throw std::runtime_error("payload size mismatch for " + header_path);
    std::vector<double> out(expected_values);
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    for (std::size_t i = 0; i < expected_values; ++i) out[i] = read_f32_le(p + 4 * i);
    return out;
}

}  // namespace detail

/// Header at `path`, raw little-endian f32 payload in a sibling file named
/// after the header.
inline void write_volume(const std::string& path, const Volume& v) {
    detail::GridHeader h;
    h.dims = v.dims;
    h.spacing = v.spacing;
    h.channels = 1;
    h.payload = detail::payload_name(path);
    std::string raw;
    raw.reserve(v.size() * 4);
    for (double x : v.data) detail::append_f32_le(raw, static_cast<float>(x));
    detail::write_text_file(path, detail::header_text(h));
    detail::write_binary_file(detail::payload_path(path, h), raw);
}

inline Volume read_volume(const std::string& path) {
    const auto h = detail::parse_header(path);
    if (h.channels != 1) throw std::runtime_error("expected a 1-channel volume: " + path);
    Volume v(h.dims, 0.0, h.spacing);
    v.data = detail::read_payload(path, h, v.size());
    return v;
}

/// Displacement fields use the same container with three interleaved
/// channels per voxel (x, y, z components).
inline void write_field(const std::string& path, const DisplacementField& f,
                        const Vec3& spacing = Vec3{1.0, 1.0, 1.0}) {
    detail::GridHeader h;
    h.dims = f.dims;
    h.spacing = spacing;
    h.channels = 3;
    h.payload = detail::payload_name(path);
    std::string raw;
    raw.reserve(f.size() * 12);
    for (const Vec3& v : f.vectors)
        for (int c = 0; c < 3; ++c) detail::append_f32_le(raw, static_cast<float>(v[c]));
    detail::write_text_file(path, detail::header_text(h));
    detail::write_binary_file(detail::payload_path(path, h), raw);
}

inline DisplacementField read_field(const std::string& path) {
    const auto h = detail::parse_header(path);
    if (h.channels != 3) throw std::runtime_error("expected a 3-channel field: " + path);
    DisplacementField f(h.dims);
    const auto values = detail::read_payload(path, h, f.size() * 3);
    for (std::size_t q = 0; q < f.size(); ++q)
        for (int c = 0; c < 3; ++c) f.vectors[q][c] = values[3 * q + c];
    return f;
}

/// Landmark CSV: "id,x,y,z" per line, voxel coordinates, '#' comments.
/// Values round-trip exactly at 9 significant digits.
inline void write_landmarks(const std::string& path, const LandmarkSet& lms) {
    std::string s = "# id,x,y,z\n";
    for (const auto& lm : lms.points) {
        s += std::to_string(lm.id);
        for (int c = 0; c < 3; ++c) s += "," + fmt_g(lm.coord[c], 9);
        s += "\n";
    }
    detail::write_text_file(path, s);
}

inline LandmarkSet read_landmarks(const std::string& path) {
    std::istringstream in(detail::read_text_file(path));
    LandmarkSet out;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::vector<std::string> parts;
        std::string cur;
        std::istringstream ls(t);
        while (std::getline(ls, cur, ',')) parts.push_back(detail::trim(cur));
        if (parts.size() != 4) throw std::runtime_error("bad landmark line: " + t);
        Landmark lm;
        lm.id = detail::parse_int(parts[0], "landmark id");
        for (int c = 0; c < 3; ++c) lm.coord[c] = detail::parse_real(parts[c + 1], "landmark coordinate");
        out.points.push_back(lm);
    }
    if (!out.has_unique_ids()) throw std::runtime_error("duplicate landmark id in " + path);
    return out;
}

/// EngineConfig as a "key = value" text file; unknown keys are rejected.
inline EngineConfig read_engine_config(const std::string& path) {
    std::istringstream in(detail::read_text_file(path));
    EngineConfig cfg;
    std::string line, key, value;
    while (std::getline(in, line)) {
        if (!detail::parse_kv(line, key, value)) continue;
        if (key == "mode") {
            if (value == "pretrain")
                cfg.objective.mode = Mode::pretrain;
            else if (value == "train")
                cfg.objective.mode = Mode::train;
            else if (value == "finetune")
                cfg.objective.mode = Mode::finetune;
            else
                throw std::runtime_error("bad config value for mode: " + value);
        } else if (key == "sigma") {
            cfg.objective.sigma = detail::parse_real(value, "sigma");
        } else if (key == "mu") {
            cfg.objective.mu = detail::parse_real(value, "mu");
        } else if (key == "lambda") {
            cfg.objective.lambda = detail::parse_real(value, "lambda");
        } else if (key == "window") {
            cfg.objective.window = static_cast<int>(detail::parse_int(value, "window"));
        } else if (key == "level_count") {
            cfg.objective.level_count = static_cast<int>(detail::parse_int(value, "level_count"));
        } else if (key == "iters_per_level") {
            cfg.iters_per_level = static_cast<int>(detail::parse_int(value, "iters_per_level"));
        } else if (key == "step_size") {
            cfg.step_size = detail::parse_real(value, "step_size");
        } else if (key == "optimizer") {
            if (value == "gradient-descent")
                cfg.optimizer = Optimizer::gradient_descent;
            else if (value == "adaptive-moment")
                cfg.optimizer = Optimizer::adaptive_moment;
            else
                throw std::runtime_error("bad config value for optimizer: " + value);
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(detail::parse_int(value, "seed"));
        } else if (key == "finetune_iters") {
            cfg.finetune_iters = static_cast<int>(detail::parse_int(value, "finetune_iters"));
        } else if (key == "finetune_step") {
            cfg.finetune_step = detail::parse_real(value, "finetune_step");
        } else {
            throw std::runtime_error("unknown config key: " + key);
        }
    }
    cfg.validate();
    return cfg;
}

/// Registration report as line-oriented key=value text, 6 significant
/// digits, no timestamps — byte-identical across reruns.
inline std::string report_text(const RegistrationReport& rep) {
    std::string s;
    s += "mode=" + to_string(rep.mode) + "\n";
    s += "levels=" + std::to_string(rep.levels.size()) + "\n";
    s += "final_loss=" + fmt_g(rep.final_loss) + "\n";
    s += "self_loss=" + fmt_g(rep.self_loss_final) + "\n";
    s += "njd=" + std::to_string(rep.njd) + "\n";
    if (rep.has_landmarks) {
        s += "mae_before=" + fmt_g(rep.mae_before) + "\n";
        s += "mae_after=" + fmt_g(rep.mae_after) + "\n";
    }
    for (const auto& lv : rep.levels) {
        const std::string p = "level" + std::to_string(lv.level) + ".";
        s += p + "dims=" + std::to_string(lv.dims[0]) + " " + std::to_string(lv.dims[1]) + " " +
             std::to_string(lv.dims[2]) + "\n";
        s += p + "ncc_promoted=" + fmt_g(lv.ncc_promoted) + "\n";
        s += p + "ncc_final=" + fmt_g(lv.ncc_final) + "\n";
        s += p + "loss_initial=" + fmt_g(lv.loss_initial) + "\n";
        s += p + "loss_final=" + fmt_g(lv.loss_final) + "\n";
        s += p + "accepted=" + std::to_string(lv.accepted) + "\n";
        s += p + "rejected=" + std::to_string(lv.rejected) + "\n";
    }
    return s;
}

}  // namespace warpfield
