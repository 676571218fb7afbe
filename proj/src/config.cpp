#include "snsteg/config.hpp"

#include <fstream>
#include <sstream>

namespace snsteg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

}  // namespace

RunConfig RunConfig::parse(std::istream& is) {
    RunConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse(in);
}

void RunConfig::merge(const RunConfig& over) {
    for (const auto& [k, v] : over.values_) values_[k] = v;
}

const std::string& RunConfig::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

std::string RunConfig::str(const std::string& key) const { return raw(key); }

double RunConfig::real(const std::string& key) const {
    const std::string& v = raw(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
}

std::size_t RunConfig::size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

std::uint64_t RunConfig::u64(const std::string& key) const {
    const std::string& v = raw(key);
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
    try {
        return std::stoull(v);
    } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is out of range");
    }
}

bool RunConfig::flag(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> RunConfig::reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(raw(key))) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError("config key '" + key + "': '" + item + "' is not a number");
        }
    }
    return out;
}

std::vector<std::string> RunConfig::strs(const std::string& key) const { return split_list(raw(key)); }

std::string RunConfig::to_text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << to_text();
}

RunConfig default_run_config() {
    RunConfig c;
    const NetworkConfig net;
    for (const auto& [k, v] : net.to_map()) c.set(k, v);
    const OptimConfig o;
    c.set("epochs", std::to_string(o.epochs));
    c.set("batch_size", std::to_string(o.batch_size));
    c.set("lr_high", "0.01");
    c.set("lr_low", "0.001");
    c.set("lr_drop", "0.75");
    c.set("momentum", "0.9");
    c.set("weight_decay", "0.0001");
    c.set("seed", "1");
    c.set("sn_init_samples", "200");
    c.set("record_alt_bn", "1");
    c.set("reshuffle_eval", "0");
    c.set("train_covers", "512");
    c.set("test_covers", "256");
    c.set("smoothing", "5");
    c.set("rate", "0.4");
    c.set("data_seed", "7");
    return c;
}

NetworkConfig network_config_from(const RunConfig& cfg) {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : NetworkConfig{}.to_map())
        kv[k] = cfg.has(k) ? cfg.str(k) : v;
    NetworkConfig n = NetworkConfig::from_map(kv);
    n.validate();
    return n;
}

TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig t;
    t.net = network_config_from(cfg);
    t.optim.epochs = cfg.size("epochs");
    t.optim.batch_size = cfg.size("batch_size");
    t.optim.lr_high = cfg.real("lr_high");
    t.optim.lr_low = cfg.real("lr_low");
    t.optim.drop_fraction = cfg.real("lr_drop");
    t.optim.momentum = cfg.real("momentum");
    t.optim.weight_decay = cfg.real("weight_decay");
    t.seed = cfg.u64("seed");
    t.sn_init_samples = cfg.size("sn_init_samples");
    t.record_alt_bn = cfg.flag("record_alt_bn");
    t.reshuffle_eval = cfg.has("reshuffle_eval") && cfg.flag("reshuffle_eval");
    t.optim.validate();
    return t;
}

}  // namespace snsteg
