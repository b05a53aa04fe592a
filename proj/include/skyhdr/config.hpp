#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace skyhdr {

/// Flat "section.key = value" settings. Lines starting with '#' are comments.
/// Every key must be declared in the schema; unknown keys are rejected.
struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

class Config {
public:
    explicit Config(std::vector<ConfigKey> schema);

    /// The schema used by the command-line tool.
    static Config standard();

    const std::vector<ConfigKey>& schema() const { return schema_; }
    bool has_key(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    /// "key=value"
    void set_override(const std::string& assignment);
    void load_text(const std::string& text, const std::string& origin = "config");
    void load_file(const std::string& path);
    /// Applies a named profile ("desk" or "paper").
    void apply_profile(const std::string& name);

    std::string get(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_ints(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;

    /// Current values in schema order, one "key = value" per line.
    std::string dump() const;
    /// Keys with defaults and help text, for --help.
    std::string describe_keys() const;

private:
    std::vector<ConfigKey> schema_;
    std::map<std::string, std::string> values_;
};

}  // namespace skyhdr
