#pragma once

// Flat key=value run configuration. Every key has a default; a file may set
// any subset (# starts a comment) and command-line flags override the file.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace spinv::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct KeySpec {
    std::string name;
    std::string fallback;
    std::string help;
    std::string basis;  // where the default comes from
};

const std::vector<KeySpec>& config_keys();

class RunConfig {
public:
    RunConfig();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    bool is_set(const std::string& key) const;  // set by file or flag

    const std::string& str(const std::string& key) const;
    double num(const std::string& key) const;
    int integer(const std::string& key) const;
    std::uint64_t u64(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<double> num_list(const std::string& key) const;
    std::vector<std::string> str_list(const std::string& key) const;

    // Effective configuration as key=value lines, sorted by key.
    std::string dump() const;

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> explicit_;
};

}  // namespace spinv::cli
