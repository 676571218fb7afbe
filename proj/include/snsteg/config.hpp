#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "snsteg/training.hpp"

namespace snsteg {

/// Flat key=value settings. Blank lines and lines starting with '#' are ignored.
class RunConfig {
public:
    static RunConfig parse(std::istream& is);
    static RunConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    /// Keys of `over` replace ours.
    void merge(const RunConfig& over);

    std::string str(const std::string& key) const;
    double real(const std::string& key) const;
    std::size_t size(const std::string& key) const;
    std::uint64_t u64(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<double> reals(const std::string& key) const;
    std::vector<std::string> strs(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    std::string to_text() const;
    void save(const std::filesystem::path& path) const;

private:
    const std::string& raw(const std::string& key) const;
    std::map<std::string, std::string> values_;
};

/// Defaults shared by train, eval and every experiment (desk scale).
RunConfig default_run_config();

NetworkConfig network_config_from(const RunConfig& cfg);
TrainConfig train_config_from(const RunConfig& cfg);

}  // namespace snsteg
