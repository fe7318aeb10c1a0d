#pragma once

// Experiment configuration trees: YAML-subset loading with `_include_yml`
// inheritance, dotted command-line overrides, and schema validation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace pidskit {

class ConfigNode;
using ConfigMap = std::map<std::string, ConfigNode>;
using ConfigList = std::vector<ConfigNode>;

class ConfigNode {
public:
    enum class Kind { Null, Int, Float, Bool, String, List, Map };

    ConfigNode() = default;
    ConfigNode(std::int64_t v) : value_(v) {}
    ConfigNode(int v) : value_(static_cast<std::int64_t>(v)) {}
    ConfigNode(double v) : value_(v) {}
    ConfigNode(bool v) : value_(v) {}
    ConfigNode(std::string v) : value_(std::move(v)) {}
    ConfigNode(const char* v) : value_(std::string(v)) {}
    ConfigNode(ConfigList v) : value_(std::move(v)) {}
    ConfigNode(ConfigMap v) : value_(std::move(v)) {}

    Kind kind() const { return static_cast<Kind>(value_.index()); }
    bool is_map() const { return kind() == Kind::Map; }
    bool is_list() const { return kind() == Kind::List; }
    bool is_scalar() const { return !is_map() && !is_list(); }

    std::int64_t as_int() const;
    // Ints widen to double.
    double as_double() const;
    bool as_bool() const;
    const std::string& as_string() const;
    const ConfigList& as_list() const;
    const ConfigMap& as_map() const;
    ConfigMap& as_map();

    // Dotted lookup relative to this node; nullptr when any segment is absent.
    const ConfigNode* find(std::string_view dotted) const;

    bool operator==(const ConfigNode&) const = default;

private:
    std::variant<std::monostate, std::int64_t, double, bool, std::string, ConfigList, ConfigMap>
        value_;
};

std::string_view kind_name(ConfigNode::Kind k);

// Scalar rendering used in logs, overrides and canonical forms. Floats use the
// shortest representation that round-trips.
std::string render_scalar(const ConfigNode& node);

// Interprets an unquoted scalar token the way the YAML loader does.
ConfigNode infer_scalar(std::string_view text);

struct ConfigTree {
    ConfigNode root{ConfigMap{}};
    std::vector<std::filesystem::path> source_chain;

    const ConfigNode* find(std::string_view dotted) const { return root.find(dotted); }
    const ConfigNode& at(std::string_view dotted) const;

    std::int64_t get_int(std::string_view dotted) const;
    double get_double(std::string_view dotted) const;
    bool get_bool(std::string_view dotted) const;
    std::string get_string(std::string_view dotted) const;
    // Accepts either a YAML sequence or a comma-separated string ("edges, tgn_last_neighbor").
    std::vector<std::string> get_list(std::string_view dotted) const;

    std::int64_t get_int_or(std::string_view dotted, std::int64_t fallback) const;
    double get_double_or(std::string_view dotted, double fallback) const;
    bool get_bool_or(std::string_view dotted, bool fallback) const;
    std::string get_string_or(std::string_view dotted, std::string fallback) const;

    bool operator==(const ConfigTree& other) const { return root == other.root; }
};

struct OverrideSet {
    std::vector<std::pair<std::string, std::string>> entries;

    void add(std::string path, std::string raw) { entries.emplace_back(std::move(path), std::move(raw)); }
    bool empty() const { return entries.empty(); }
};

inline constexpr std::string_view kIncludeKey = "_include_yml";

// Parses one document without include resolution. Keys may contain '.' only
// with `dotted_keys` (sweep files name parameters by dotted path).
ConfigNode parse_yaml_file(const std::filesystem::path& path, bool dotted_keys = false);
ConfigNode parse_yaml_string(std::string_view text, bool dotted_keys = false);

// Child scalars and lists replace, child maps merge recursively.
ConfigNode deep_merge(const ConfigNode& base, const ConfigNode& child);

ConfigTree load_config(const std::filesystem::path& path, const std::filesystem::path& search_dir);

// Loads `<config_dir>/<system>.yml`.
ConfigTree load_system_config(std::string_view system, const std::filesystem::path& config_dir);

// Every path must already exist; values are coerced to the existing leaf's kind.
ConfigTree apply_overrides(const ConfigTree& cfg, const OverrideSet& ov);

// Parses `--a.b=value` tokens. Tokens without a dot in the key are rejected.
OverrideSet parse_override_args(const std::vector<std::string>& args);

struct Violation {
    std::string path;
    std::string reason;
};

struct LeafRule {
    enum class Type { Int, Float, Bool, String, Methods };
    std::string path;
    Type type;
    bool required = true;
    std::vector<std::string> allowed;  // for String and Methods
    std::optional<double> min;
    std::optional<double> max;
};

struct StageSchema {
    std::vector<std::string> required_sections;
    std::vector<LeafRule> leaves;
};

// The seven stage sections plus every leaf the pipeline reads.
const StageSchema& default_schema();

std::vector<Violation> validate_config(const ConfigTree& cfg, const StageSchema& schema);

}  // namespace pidskit
