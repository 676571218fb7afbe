#include "snsteg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace snsteg {

namespace {

void put_floats(std::string& out, std::span<const float> values) {
    for (float v : values) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
}

void get_floats(const std::string& in, std::size_t& pos, std::span<float> dst) {
    if (in.size() - pos < dst.size() * 4) throw FormatError("checkpoint: truncated array data");
    for (float& v : dst) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
        v = std::bit_cast<float>(bits);
        pos += 4;
    }
}

std::string read_line(const std::string& in, std::size_t& pos) {
    const std::size_t nl = in.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("checkpoint: unexpected end of file");
    std::string line = in.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
}

void put_array(std::string& out, const std::string& name, const Shape& s, std::span<const float> v) {
    out += "array " + name + " " + std::to_string(s.n) + " " + std::to_string(s.c) + " " +
           std::to_string(s.h) + " " + std::to_string(s.w) + "\n";
    put_floats(out, v);
    out += "\n";
}

}  // namespace

std::string encode_checkpoint(TrainState& state, const std::map<std::string, std::string>& meta) {
    Network<float>& net = state.net;
    std::map<std::string, std::string> cfg = net.config().to_map();
    cfg["seed"] = std::to_string(net.seed());
    cfg["epoch"] = std::to_string(net.epoch());
    cfg["stats_initialized"] = state.stats_initialized ? "1" : "0";
    for (const auto& [k, v] : meta) {
        if (v.find('\n') != std::string::npos) throw ConfigError("checkpoint meta value for " + k + " spans lines");
        cfg["meta." + k] = v;
    }

    std::string out = std::string(kCheckpointMagic) + "\n";
    out += "config " + std::to_string(cfg.size()) + "\n";
    for (const auto& [k, v] : cfg) out += k + "=" + v + "\n";

    auto params = net.params();
    auto stats = net.state_arrays();
    const bool with_velocity = state.velocity.size() == params.size();
    out += "arrays " + std::to_string(params.size() * (with_velocity ? 2 : 1) + stats.size()) + "\n";
    for (const auto& p : params) put_array(out, p.name, p.shape, p.value);
    for (const auto& s : stats) put_array(out, s.name, Shape{s.value.size(), 1, 1, 1}, s.value);
    if (with_velocity)
        for (std::size_t i = 0; i < params.size(); ++i)
            put_array(out, "velocity/" + params[i].name, params[i].shape, state.velocity[i]);
    out += "end\n";
    return out;
}

Checkpoint decode_checkpoint(const std::string& in) {
    std::size_t pos = 0;
    if (read_line(in, pos) != kCheckpointMagic) throw FormatError("checkpoint: bad magic (expected SNSTEG1)");
    std::istringstream head(read_line(in, pos));
    std::string tag;
    std::size_t count = 0;
    if (!(head >> tag >> count) || tag != "config") throw FormatError("checkpoint: missing config block");
    std::map<std::string, std::string> cfg;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string line = read_line(in, pos);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint: config line without '=': " + line);
        cfg[line.substr(0, eq)] = line.substr(eq + 1);
    }
    Checkpoint ck;
    std::map<std::string, std::string> net_keys;
    for (const auto& [k, v] : cfg) {
        if (k.rfind("meta.", 0) == 0)
            ck.meta[k.substr(5)] = v;
        else if (k != "seed" && k != "epoch" && k != "stats_initialized")
            net_keys[k] = v;
    }
    if (!cfg.count("seed") || !cfg.count("epoch")) throw FormatError("checkpoint: config lacks seed or epoch");
    const NetworkConfig nc = NetworkConfig::from_map(net_keys);
    ck.state = TrainState(nc, std::stoull(cfg["seed"]));
    ck.state.net.set_epoch(std::stoull(cfg["epoch"]));
    ck.state.stats_initialized = cfg["stats_initialized"] == "1";

    auto params = ck.state.net.params();
    auto stats = ck.state.net.state_arrays();
    std::map<std::string, std::span<float>> slots;
    std::map<std::string, Shape> shapes;
    for (const auto& p : params) {
        slots[p.name] = p.value;
        shapes[p.name] = p.shape;
    }
    for (const auto& s : stats) {
        slots[s.name] = s.value;
        shapes[s.name] = Shape{s.value.size(), 1, 1, 1};
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        slots["velocity/" + params[i].name] = ck.state.velocity[i];
        shapes["velocity/" + params[i].name] = params[i].shape;
    }

    std::istringstream arr(read_line(in, pos));
    if (!(arr >> tag >> count) || tag != "arrays") throw FormatError("checkpoint: missing arrays block");
    std::size_t loaded = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream h(read_line(in, pos));
        std::string name;
        Shape s;
        if (!(h >> tag >> name >> s.n >> s.c >> s.h >> s.w) || tag != "array")
            throw FormatError("checkpoint: malformed array header");
        auto it = slots.find(name);
        if (it == slots.end()) throw FormatError("checkpoint: unexpected array " + name);
        if (!(shapes[name] == s))
            throw FormatError("checkpoint: array " + name + " has shape " + s.str() + ", network expects " +
                              shapes[name].str());
        get_floats(in, pos, it->second);
        if (read_line(in, pos) != "") throw FormatError("checkpoint: array " + name + " overruns its shape");
        if (name.rfind("velocity/", 0) != 0) ++loaded;
    }
    if (loaded != params.size() + stats.size())
        throw FormatError("checkpoint: expected " + std::to_string(params.size() + stats.size()) +
                          " parameter and statistics arrays, found " + std::to_string(loaded));
    if (read_line(in, pos) != "end") throw FormatError("checkpoint: missing end marker");
    if (ck.state.stats_initialized) ck.state.net.mark_norm_stats_ready();
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, TrainState& state,
                     const std::map<std::string, std::string>& meta) {
    const std::string bytes = encode_checkpoint(state, meta);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("checkpoint write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_checkpoint(buf.str());
}

}  // namespace snsteg
