#pragma once
// Run configuration: a single key=value tree with every tunable knob. Files
// and command-line overrides are validated against the default tree, so a
// typo'd key is an error instead of a silent no-op.

#include <string>

#include <json.hpp>

namespace mvps::data {

class Config {
public:
    Config();

    static nlohmann::json defaults();

    // JSON file merged over defaults; unknown keys / wrong types throw SchemaError.
    static Config from_file(const std::string& path);

    // "section.key=value"; value parsed as JSON when possible, else string.
    void apply_override(const std::string& dotted_assignment);

    template <class T>
    T get(const std::string& dotted_path) const {
        return at(dotted_path).get<T>();
    }

    const nlohmann::json& tree() const { return tree_; }
    std::string dump(int indent = 2) const { return tree_.dump(indent); }

    // Re-validates and merges an arbitrary tree (used by checkpoint restore).
    void merge(const nlohmann::json& src);

private:
    const nlohmann::json& at(const std::string& dotted_path) const;
    nlohmann::json tree_;
};

}  // namespace mvps::data
