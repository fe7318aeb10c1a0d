#include "pidskit/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pidskit/errors.hpp"

namespace pidskit {
namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (!s.empty() && s.front() == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e || b == e) return std::nullopt;
    return v;
}

std::optional<double> parse_float(std::string_view s) {
    double v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (!s.empty() && s.front() == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e || b == e || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<bool> parse_bool(std::string_view s) {
    const std::string l = lower(s);
    if (l == "true") return true;
    if (l == "false") return false;
    return std::nullopt;
}

void check_key(const std::string& key, const fs::path& file, bool dotted_keys) {
    if (key.empty()) throw ConfigError(file.string() + ": empty key");
    if (!dotted_keys && key.find('.') != std::string::npos)
        throw ConfigError(file.string() + ": key '" + key + "' contains '.'");
}

ConfigNode from_yaml(const YAML::Node& n, const fs::path& file, bool dotted_keys) {
    switch (n.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return {};
        case YAML::NodeType::Scalar:
            // Quoted scalars carry the non-specific "!" tag and stay strings.
            if (n.Tag() == "!") return ConfigNode(n.Scalar());
            return infer_scalar(n.Scalar());
        case YAML::NodeType::Sequence: {
            ConfigList out;
            for (const auto& item : n) out.push_back(from_yaml(item, file, dotted_keys));
            return out;
        }
        case YAML::NodeType::Map: {
            ConfigMap out;
            for (const auto& kv : n) {
                const std::string key = kv.first.as<std::string>();
                check_key(key, file, dotted_keys);
                out[key] = from_yaml(kv.second, file, dotted_keys);
            }
            return out;
        }
    }
    return {};
}

ConfigNode coerce(const ConfigNode& prior, std::string_view raw, const std::string& path) {
    auto fail = [&](std::string_view want) -> ConfigNode {
        throw ConfigError("override " + path + ": cannot coerce '" + std::string(raw) + "' to " +
                          std::string(want));
    };
    switch (prior.kind()) {
        case ConfigNode::Kind::Int:
            if (auto v = parse_int(trim(raw))) return *v;
            return fail("int");
        case ConfigNode::Kind::Float:
            if (auto v = parse_float(trim(raw))) return *v;
            return fail("float");
        case ConfigNode::Kind::Bool:
            if (auto v = parse_bool(trim(raw))) return *v;
            return fail("bool");
        case ConfigNode::Kind::String:
            return ConfigNode(std::string(raw));
        case ConfigNode::Kind::Null:
            return infer_scalar(trim(raw));
        case ConfigNode::Kind::List: {
            ConfigList out;
            std::string_view rest = raw;
            while (true) {
                const auto comma = rest.find(',');
                const auto item = trim(rest.substr(0, comma));
                if (!item.empty()) out.push_back(infer_scalar(item));
                if (comma == std::string_view::npos) break;
                rest.remove_prefix(comma + 1);
            }
            return out;
        }
        case ConfigNode::Kind::Map:
            return fail("a scalar (path names a section)");
    }
    return {};
}

ConfigTree load_recursive(const fs::path& path, const fs::path& search_dir,
                          std::vector<fs::path> chain) {
    const fs::path canon = fs::weakly_canonical(path);
    for (const auto& seen : chain) {
        if (seen == canon) {
            std::string msg = "include cycle: ";
            for (const auto& c : chain) msg += c.filename().string() + " -> ";
            msg += canon.filename().string();
            throw ConfigError(msg);
        }
    }
    chain.push_back(canon);
    ConfigNode doc = parse_yaml_file(path);
    if (!doc.is_map()) {
        if (doc.kind() == ConfigNode::Kind::Null) doc = ConfigMap{};
        else throw ConfigError(path.string() + ": top level must be a map");
    }

    auto& m = doc.as_map();
    auto inc = m.find(std::string(kIncludeKey));
    if (inc == m.end()) return ConfigTree{std::move(doc), std::move(chain)};

    const std::string base_name = inc->second.kind() == ConfigNode::Kind::String
                                      ? inc->second.as_string()
                                      : render_scalar(inc->second);
    m.erase(inc);
    ConfigTree base = load_recursive(search_dir / (base_name + ".yml"), search_dir, chain);
    ConfigTree out;
    out.root = deep_merge(base.root, doc);
    // Include-walk order: the requested file first, its deepest base last.
    out.source_chain = std::move(base.source_chain);
    return out;
}

}  // namespace

std::int64_t ConfigNode::as_int() const {
    if (auto p = std::get_if<std::int64_t>(&value_)) return *p;
    throw ConfigError("expected int, found " + std::string(kind_name(kind())));
}

double ConfigNode::as_double() const {
    if (auto p = std::get_if<double>(&value_)) return *p;
    if (auto p = std::get_if<std::int64_t>(&value_)) return static_cast<double>(*p);
    throw ConfigError("expected float, found " + std::string(kind_name(kind())));
}

bool ConfigNode::as_bool() const {
    if (auto p = std::get_if<bool>(&value_)) return *p;
    throw ConfigError("expected bool, found " + std::string(kind_name(kind())));
}

const std::string& ConfigNode::as_string() const {
    if (auto p = std::get_if<std::string>(&value_)) return *p;
    throw ConfigError("expected string, found " + std::string(kind_name(kind())));
}

const ConfigList& ConfigNode::as_list() const {
    if (auto p = std::get_if<ConfigList>(&value_)) return *p;
    throw ConfigError("expected list, found " + std::string(kind_name(kind())));
}

const ConfigMap& ConfigNode::as_map() const {
    if (auto p = std::get_if<ConfigMap>(&value_)) return *p;
    throw ConfigError("expected map, found " + std::string(kind_name(kind())));
}

ConfigMap& ConfigNode::as_map() {
    if (auto p = std::get_if<ConfigMap>(&value_)) return *p;
    throw ConfigError("expected map, found " + std::string(kind_name(kind())));
}

const ConfigNode* ConfigNode::find(std::string_view dotted) const {
    const ConfigNode* cur = this;
    while (!dotted.empty()) {
        if (!cur->is_map()) return nullptr;
        const auto dot = dotted.find('.');
        const std::string seg(dotted.substr(0, dot));
        const auto& m = cur->as_map();
        auto it = m.find(seg);
        if (it == m.end()) return nullptr;
        cur = &it->second;
        if (dot == std::string_view::npos) break;
        dotted.remove_prefix(dot + 1);
    }
    return cur;
}

std::string_view kind_name(ConfigNode::Kind k) {
    switch (k) {
        case ConfigNode::Kind::Null: return "null";
        case ConfigNode::Kind::Int: return "int";
        case ConfigNode::Kind::Float: return "float";
        case ConfigNode::Kind::Bool: return "bool";
        case ConfigNode::Kind::String: return "string";
        case ConfigNode::Kind::List: return "list";
        case ConfigNode::Kind::Map: return "map";
    }
    return "?";
}

std::string render_scalar(const ConfigNode& node) {
    switch (node.kind()) {
        case ConfigNode::Kind::Null: return "null";
        case ConfigNode::Kind::Int: return std::to_string(node.as_int());
        case ConfigNode::Kind::Float: {
            char buf[64];
            auto [p, ec] = std::to_chars(buf, buf + sizeof buf, node.as_double());
            return std::string(buf, p);
        }
        case ConfigNode::Kind::Bool: return node.as_bool() ? "true" : "false";
        case ConfigNode::Kind::String: return node.as_string();
        case ConfigNode::Kind::List: {
            std::string out;
            for (const auto& item : node.as_list()) {
                if (!out.empty()) out += ",";
                out += render_scalar(item);
            }
            return out;
        }
        case ConfigNode::Kind::Map: return "{...}";
    }
    return {};
}

ConfigNode infer_scalar(std::string_view text) {
    const std::string_view t = trim(text);
    if (t.empty() || t == "~" || lower(t) == "null") return {};
    if (auto b = parse_bool(t)) return *b;
    if (auto i = parse_int(t)) return *i;
    if (auto f = parse_float(t)) return *f;
    return ConfigNode(std::string(t));
}

const ConfigNode& ConfigTree::at(std::string_view dotted) const {
    const ConfigNode* n = find(dotted);
    if (!n) throw ConfigError("missing config key: " + std::string(dotted));
    return *n;
}

std::int64_t ConfigTree::get_int(std::string_view d) const {
    try {
        return at(d).as_int();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(d) + ": " + e.what());
    }
}

double ConfigTree::get_double(std::string_view d) const {
    try {
        return at(d).as_double();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(d) + ": " + e.what());
    }
}

bool ConfigTree::get_bool(std::string_view d) const {
    try {
        return at(d).as_bool();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(d) + ": " + e.what());
    }
}

std::string ConfigTree::get_string(std::string_view d) const {
    const ConfigNode& n = at(d);
    if (!n.is_scalar()) throw ConfigError(std::string(d) + ": expected a scalar");
    return render_scalar(n);
}

std::vector<std::string> ConfigTree::get_list(std::string_view d) const {
    const ConfigNode& n = at(d);
    std::vector<std::string> out;
    if (n.is_list()) {
        for (const auto& item : n.as_list()) out.push_back(render_scalar(item));
        return out;
    }
    if (n.kind() == ConfigNode::Kind::Null) return out;
    const std::string s = render_scalar(n);
    std::string_view rest = s;
    while (true) {
        const auto comma = rest.find(',');
        const auto item = trim(rest.substr(0, comma));
        if (!item.empty()) out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    return out;
}

std::int64_t ConfigTree::get_int_or(std::string_view d, std::int64_t fallback) const {
    return find(d) ? get_int(d) : fallback;
}
double ConfigTree::get_double_or(std::string_view d, double fallback) const {
    return find(d) ? get_double(d) : fallback;
}
bool ConfigTree::get_bool_or(std::string_view d, bool fallback) const {
    return find(d) ? get_bool(d) : fallback;
}
std::string ConfigTree::get_string_or(std::string_view d, std::string fallback) const {
    return find(d) ? get_string(d) : fallback;
}

ConfigNode parse_yaml_file(const fs::path& path, bool dotted_keys) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return from_yaml(YAML::Load(ss.str()), path, dotted_keys);
    } catch (const YAML::Exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

ConfigNode parse_yaml_string(std::string_view text, bool dotted_keys) {
    try {
        return from_yaml(YAML::Load(std::string(text)), "<string>", dotted_keys);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("<string>: ") + e.what());
    }
}

ConfigNode deep_merge(const ConfigNode& base, const ConfigNode& child) {
    if (!base.is_map() || !child.is_map()) return child;
    ConfigNode out = base;
    auto& m = out.as_map();
    for (const auto& [k, v] : child.as_map()) {
        auto it = m.find(k);
        if (it == m.end()) m.emplace(k, v);
        else it->second = deep_merge(it->second, v);
    }
    return out;
}

ConfigTree load_config(const fs::path& path, const fs::path& search_dir) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    return load_recursive(path, search_dir, {});
}

ConfigTree load_system_config(std::string_view system, const fs::path& config_dir) {
    const fs::path p = config_dir / (std::string(system) + ".yml");
    if (!fs::exists(p)) throw ConfigError("unknown system '" + std::string(system) + "' (no " + p.string() + ")");
    return load_config(p, config_dir);
}

ConfigTree apply_overrides(const ConfigTree& cfg, const OverrideSet& ov) {
    ConfigTree out = cfg;
    for (const auto& [path, raw] : ov.entries) {
        if (path.empty()) throw ConfigError("empty override path");
        ConfigNode* cur = &out.root;
        std::string_view rest = path;
        while (true) {
            const auto dot = rest.find('.');
            const std::string seg(rest.substr(0, dot));
            if (!cur->is_map()) throw ConfigError("unknown config path: " + path);
            auto& m = cur->as_map();
            auto it = m.find(seg);
            if (it == m.end()) throw ConfigError("unknown config path: " + path);
            cur = &it->second;
            if (dot == std::string_view::npos) break;
            rest.remove_prefix(dot + 1);
        }
        *cur = coerce(*cur, raw, path);
    }
    return out;
}

OverrideSet parse_override_args(const std::vector<std::string>& args) {
    OverrideSet ov;
    for (const auto& a : args) {
        if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument: " + a);
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("override needs a value: " + a);
        std::string key = a.substr(2, eq - 2);
        if (key.find('.') == std::string::npos) throw ConfigError("unknown flag: --" + key);
        ov.add(std::move(key), a.substr(eq + 1));
    }
    return ov;
}

namespace {

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
    return out;
}

StageSchema build_schema() {
    using T = LeafRule::Type;
    StageSchema s;
    s.required_sections = {"construction", "transformation", "featurization", "batching",
                           "training",     "evaluation",     "triage"};
    const std::vector<std::string> attrs_subject = {"type", "path", "cmd_line"};
    const std::vector<std::string> attrs_file = {"type", "path"};
    const std::vector<std::string> attrs_net = {"type", "remote_ip", "remote_port"};
    s.leaves = {
        {"construction.time_window_size", T::Int, true, {}, 1, std::nullopt},
        {"construction.node_features.subject", T::Methods, true, attrs_subject},
        {"construction.node_features.file", T::Methods, true, attrs_file},
        {"construction.node_features.netflow", T::Methods, true, attrs_net},
        {"construction.train_end_frac", T::Float, true, {}, 0.0, 1.0},
        {"construction.val_end_frac", T::Float, true, {}, 0.0, 1.0},

        {"transformation.used_methods", T::Methods, true,
         {"none", "undirected", "remove_redundant", "dag", "pseudo_root"}},

        {"featurization.used_method", T::String, true, {"word2vec", "fasttext", "hfh"}},
        {"featurization.emb_dim", T::Int, true, {}, 8, std::nullopt},
        {"featurization.epochs", T::Int, true, {}, 1, std::nullopt},
        {"featurization.seed", T::Int, true, {}, 0, std::nullopt},
        {"featurization.word2vec.alpha", T::Float, true, {}, 0.0, 1.0},
        {"featurization.word2vec.window_size", T::Int, true, {}, 1, std::nullopt},
        {"featurization.word2vec.negative", T::Int, true, {}, 1, std::nullopt},
        {"featurization.word2vec.min_count", T::Int, true, {}, 1, std::nullopt},
        {"featurization.fasttext.alpha", T::Float, true, {}, 0.0, 1.0},
        {"featurization.fasttext.window_size", T::Int, true, {}, 1, std::nullopt},
        {"featurization.fasttext.negative", T::Int, true, {}, 1, std::nullopt},
        {"featurization.fasttext.min_count", T::Int, true, {}, 1, std::nullopt},

        {"batching.global_batching.used_method", T::String, true, {"none", "edges", "minutes"}},
        {"batching.global_batching.batch_size", T::Int, true, {}, 1, std::nullopt},
        {"batching.intra_graph_batching.used_methods", T::Methods, true,
         {"none", "edges", "minutes", "tgn_last_neighbor"}},
        {"batching.intra_graph_batching.batch_size", T::Int, true, {}, 1, std::nullopt},
        {"batching.intra_graph_batching.tgn_last_neighbor.k", T::Int, true, {}, 1, std::nullopt},
        {"batching.inter_graph_batching.used_method", T::String, true, {"none", "graph_batching"}},
        {"batching.inter_graph_batching.batch_size", T::Int, true, {}, 1, std::nullopt},

        {"training.lr", T::Float, true, {}, 0.0, std::nullopt},
        {"training.node_hid_dim", T::Int, true, {}, 4, std::nullopt},
        {"training.num_epochs", T::Int, true, {}, 1, std::nullopt},
        {"training.seed", T::Int, true, {}, 0, std::nullopt},
        {"training.encoder.used_methods", T::Methods, true,
         {"linear", "sage", "tgn", "graph_attention", "none"}},
        {"training.encoder.sage.activation", T::String, true, {"relu", "tanh"}},
        {"training.encoder.sage.num_layers", T::Int, true, {}, 1, 2},
        {"training.encoder.linear.activation", T::String, true, {"relu", "tanh"}},
        {"training.decoder.used_methods", T::Methods, true, {"mlp"}},
        {"training.objective.used_methods", T::Methods, true,
         {"edge_type", "node_type", "feat_recon"}},

        {"evaluation.used_method", T::String, true, {"node_evaluation"}},
        {"evaluation.node_evaluation.threshold_method", T::String, true,
         {"max_val_loss", "fixed", "kmeans"}},
        {"evaluation.node_evaluation.fixed_threshold", T::Float, true, {}, 0.0, std::nullopt},
        {"evaluation.node_evaluation.kmeans_iters", T::Int, true, {}, 1, std::nullopt},
        {"evaluation.node_evaluation.score_reduce", T::String, true, {"max", "mean"}},
        {"evaluation.node_evaluation.top_k", T::Int, true, {}, 1, std::nullopt},
        {"evaluation.node_evaluation.use_kmeans", T::Bool, false},

        {"triage.used_method", T::String, true, {"none", "score", "depimpact"}},
        {"triage.use_kmeans", T::Bool, false},
    };
    return s;
}

void check_leaf(const ConfigNode& n, const LeafRule& rule, std::vector<Violation>& out) {
    using T = LeafRule::Type;
    auto bad = [&](std::string reason) { out.push_back({rule.path, std::move(reason)}); };
    auto check_range = [&](double v) {
        if (rule.min && v < *rule.min) bad("value " + render_scalar(n) + " below minimum " + render_scalar(ConfigNode(*rule.min)));
        if (rule.max && v > *rule.max) bad("value " + render_scalar(n) + " above maximum " + render_scalar(ConfigNode(*rule.max)));
    };
    switch (rule.type) {
        case T::Int:
            if (n.kind() != ConfigNode::Kind::Int) return bad("expected int, found " + std::string(kind_name(n.kind())));
            check_range(static_cast<double>(n.as_int()));
            return;
        case T::Float:
            if (n.kind() != ConfigNode::Kind::Float && n.kind() != ConfigNode::Kind::Int)
                return bad("expected float, found " + std::string(kind_name(n.kind())));
            check_range(n.as_double());
            return;
        case T::Bool:
            if (n.kind() != ConfigNode::Kind::Bool) bad("expected bool, found " + std::string(kind_name(n.kind())));
            return;
        case T::String: {
            if (!n.is_scalar() || n.kind() == ConfigNode::Kind::Null)
                return bad("expected string, found " + std::string(kind_name(n.kind())));
            const std::string v = render_scalar(n);
            if (!rule.allowed.empty() &&
                std::find(rule.allowed.begin(), rule.allowed.end(), v) == rule.allowed.end())
                bad("'" + v + "' not one of: " + join(rule.allowed));
            return;
        }
        case T::Methods: {
            if (n.is_map()) return bad("expected a method list, found map");
            ConfigTree tmp;
            tmp.root = ConfigMap{{"v", n}};
            for (const auto& v : tmp.get_list("v")) {
                if (!rule.allowed.empty() &&
                    std::find(rule.allowed.begin(), rule.allowed.end(), v) == rule.allowed.end())
                    bad("'" + v + "' not one of: " + join(rule.allowed));
            }
            return;
        }
    }
}

}  // namespace

const StageSchema& default_schema() {
    static const StageSchema s = build_schema();
    return s;
}

std::vector<Violation> validate_config(const ConfigTree& cfg, const StageSchema& schema) {
    std::vector<Violation> out;
    std::set<std::string> missing_sections;
    for (const auto& sec : schema.required_sections) {
        const ConfigNode* n = cfg.find(sec);
        if (!n) {
            out.push_back({sec, "required section missing"});
            missing_sections.insert(sec);
        } else if (!n->is_map()) {
            out.push_back({sec, "section must be a map"});
            missing_sections.insert(sec);
        }
    }
    for (const auto& rule : schema.leaves) {
        const std::string section = rule.path.substr(0, rule.path.find('.'));
        if (missing_sections.count(section)) continue;
        const ConfigNode* n = cfg.find(rule.path);
        if (!n) {
            if (rule.required) out.push_back({rule.path, "required key missing"});
            continue;
        }
        check_leaf(*n, rule, out);
    }
    if (out.empty()) {
        const double tr = cfg.get_double("construction.train_end_frac");
        const double va = cfg.get_double("construction.val_end_frac");
        if (!(tr < va)) out.push_back({"construction.val_end_frac", "must exceed train_end_frac"});
        const auto dim = cfg.get_int("featurization.emb_dim");
        if (cfg.get_string("featurization.used_method") == "hfh" && dim % 4 != 0)
            out.push_back({"featurization.emb_dim", "feature hashing needs a multiple of 4"});
    }
    return out;
}

}  // namespace pidskit
