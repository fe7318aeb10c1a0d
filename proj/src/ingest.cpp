#include "pidskit/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <sstream>

#include "json.hpp"
#include "pidskit/errors.hpp"

namespace pidskit {

namespace {

constexpr std::int64_t kMinuteNs = 60'000'000'000;
const char* const kAttrKeys[] = {"type", "path", "cmd_line", "remote_ip", "remote_port"};

std::string to_lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::optional<Entity> parse_entity(const nlohmann::json& j) {
    if (!j.is_object()) return std::nullopt;
    auto id = j.find("id");
    auto kind = j.find("kind");
    if (id == j.end() || !id->is_string() || kind == j.end() || !kind->is_string()) return std::nullopt;
    Entity e;
    e.id = to_lower(id->get<std::string>());
    if (!is_entity_id(e.id)) return std::nullopt;
    auto k = parse_kind(kind->get<std::string>());
    if (!k) return std::nullopt;
    e.kind = *k;
    for (const char* key : kAttrKeys) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) continue;
        if (it->is_string()) e.attrs[key] = it->get<std::string>();
        else if (it->is_number_integer()) e.attrs[key] = std::to_string(it->get<std::int64_t>());
        else return std::nullopt;
    }
    if (!e.attrs.count("type")) return std::nullopt;
    return e;
}

}  // namespace

bool is_known_dataset(std::string_view name) {
    return std::find(kKnownDatasets.begin(), kKnownDatasets.end(), name) != kKnownDatasets.end();
}

bool is_entity_id(std::string_view s) {
    if (s.size() != 32) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
    });
}

std::optional<ProvEvent> parse_event_line(std::string_view line) {
    const auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    auto id = j.find("id");
    auto ts = j.find("ts");
    auto op = j.find("op");
    auto src = j.find("src");
    auto dst = j.find("dst");
    if (id == j.end() || ts == j.end() || op == j.end() || src == j.end() || dst == j.end())
        return std::nullopt;
    if (!id->is_number_unsigned() && !(id->is_number_integer() && id->get<std::int64_t>() >= 0))
        return std::nullopt;
    if (!ts->is_number_integer() || !op->is_string()) return std::nullopt;

    ProvEvent e;
    e.event_id = id->get<std::uint64_t>();
    e.ts = ts->get<std::int64_t>();
    if (e.ts <= 0) return std::nullopt;
    auto parsed_op = parse_op(op->get<std::string>());
    if (!parsed_op) return std::nullopt;
    e.op = *parsed_op;
    auto s = parse_entity(*src);
    auto d = parse_entity(*dst);
    if (!s || !d) return std::nullopt;
    e.src = std::move(*s);
    e.dst = std::move(*d);
    if (e.src.id == e.dst.id && e.op != Op::Mmap && e.op != Op::Clone) return std::nullopt;
    return e;
}

std::string format_event_line(const ProvEvent& e) {
    auto entity = [](const Entity& en) {
        nlohmann::ordered_json j;
        j["id"] = en.id;
        j["kind"] = std::string(kind_name(en.kind));
        for (const char* key : kAttrKeys) {
            auto it = en.attrs.find(key);
            if (it != en.attrs.end()) j[key] = it->second;
        }
        return j;
    };
    nlohmann::ordered_json j;
    j["id"] = e.event_id;
    j["ts"] = e.ts;
    j["op"] = std::string(op_name(e.op));
    j["src"] = entity(e.src);
    j["dst"] = entity(e.dst);
    return j.dump();
}

std::optional<ProvEvent> EventReader::next() {
    while (std::getline(in_, line_)) {
        if (line_.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (auto ev = parse_event_line(line_)) {
            ++parsed_;
            return ev;
        }
        ++skipped_;
    }
    if (in_.bad()) throw DataError("event stream unreadable");
    return std::nullopt;
}

void EventReader::finish() const {
    const std::size_t total = parsed_ + skipped_;
    if (total > 0 && skipped_ * 100 > total) {
        throw DataError("too many malformed event lines: " + std::to_string(skipped_) + " of " +
                        std::to_string(total) + " (wrong format?)");
    }
}

ParseSummary parse_events(std::istream& in) {
    EventReader reader(in);
    ParseSummary out;
    while (auto ev = reader.next()) out.events.push_back(std::move(*ev));
    reader.finish();
    out.parsed = reader.parsed();
    out.skipped = reader.skipped();
    return out;
}

ParseSummary parse_events_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open event file: " + path.string());
    return parse_events(in);
}

std::vector<ProvGraph> build_windows(std::vector<ProvEvent> events, int window_minutes) {
    if (events.empty()) throw DataError("empty event stream");
    if (window_minutes < 1) throw DataError("window size must be at least one minute");

    std::int64_t running_max = events.front().ts;
    for (const auto& e : events) {
        if (e.ts < running_max - kReorderSlackNs)
            throw DataError("event " + std::to_string(e.event_id) +
                            " is out of order beyond the 60 s slack");
        running_max = std::max(running_max, e.ts);
    }
    std::stable_sort(events.begin(), events.end(), [](const ProvEvent& a, const ProvEvent& b) {
        if (a.ts != b.ts) return a.ts < b.ts;
        return a.event_id < b.event_id;
    });

    const std::int64_t w = static_cast<std::int64_t>(window_minutes) * kMinuteNs;
    const std::int64_t t0 = events.front().ts - events.front().ts % kMinuteNs;

    std::vector<ProvGraph> out;
    std::int64_t current = -1;
    for (const auto& e : events) {
        const std::int64_t k = (e.ts - t0) / w;
        if (k != current) {
            out.emplace_back();
            out.back().window_start = t0 + k * w;
            out.back().window_end = t0 + (k + 1) * w;
            current = k;
        }
        ProvGraph& g = out.back();
        const auto s = g.upsert_node(Node{e.src.id, 0, e.src.kind, e.src.attrs});
        const auto d = g.upsert_node(Node{e.dst.id, 0, e.dst.kind, e.dst.attrs});
        g.add_edge(Edge{s, d, e.op, e.ts, e.event_id, EdgeFlag::None});
    }
    return out;
}

GroundTruth parse_ground_truth(std::istream& in, std::string dataset_id) {
    GroundTruth gt;
    gt.dataset_id = std::move(dataset_id);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("label line " + std::to_string(lineno) + ": expected <node-id>,<attack-id>");
        std::string id = to_lower(line.substr(0, comma));
        if (!is_entity_id(id))
            throw DataError("label line " + std::to_string(lineno) + ": unknown node-id syntax '" + id + "'");
        int attack = 0;
        try {
            std::size_t used = 0;
            attack = std::stoi(line.substr(comma + 1), &used);
            if (used != line.size() - comma - 1) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DataError("label line " + std::to_string(lineno) + ": bad attack id");
        }
        auto [it, inserted] = gt.malicious.emplace(id, attack);
        if (!inserted && it->second != attack)
            throw DataError("conflicting labels for node " + id + ": attacks " +
                            std::to_string(it->second) + " and " + std::to_string(attack));
    }
    return gt;
}

GroundTruth load_ground_truth(const std::filesystem::path& path, std::string dataset_id) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label file: " + path.string());
    return parse_ground_truth(in, std::move(dataset_id));
}

std::pair<std::int64_t, std::int64_t> split_boundaries(const std::vector<ProvGraph>& windows,
                                                       double train_frac, double val_frac) {
    if (windows.empty()) throw DataError("no windows to split");
    const std::int64_t lo = windows.front().window_start;
    const std::int64_t hi = windows.back().window_end;
    const double span = static_cast<double>(hi - lo);
    return {lo + static_cast<std::int64_t>(span * train_frac),
            lo + static_cast<std::int64_t>(span * val_frac)};
}

DatasetSplit split_dataset(std::vector<ProvGraph> windows, const GroundTruth& gt,
                           std::int64_t train_end, std::int64_t val_end) {
    if (windows.empty()) throw DataError("no windows to split");
    if (!(train_end < val_end)) throw DataError("split boundaries must satisfy train_end < val_end");
    const std::int64_t lo = windows.front().window_start;
    const std::int64_t hi = windows.back().window_end;
    if (train_end <= lo || val_end >= hi)
        throw DataError("split boundaries must lie inside the dataset's time span");

    DatasetSplit out;
    out.train_end = train_end;
    out.val_end = val_end;
    for (auto& w : windows) {
        auto& bucket = w.window_start < train_end ? out.train
                       : w.window_start < val_end ? out.val
                                                  : out.test;
        bucket.push_back(std::move(w));
    }
    if (out.train.empty()) throw DataError("empty train span");
    if (out.val.empty()) throw DataError("empty validation span");
    if (out.test.empty()) throw DataError("empty test span");

    auto check = [&](const std::vector<ProvGraph>& part, std::string_view name) {
        for (const auto& g : part)
            for (const auto& n : g.nodes())
                if (gt.contains(base_id(n.id)))
                    throw DataError("attack leakage: labeled node " + n.id + " appears in the " +
                                    std::string(name) + " window starting at " +
                                    std::to_string(g.window_start));
    };
    check(out.train, "train");
    check(out.val, "validation");
    return out;
}

}  // namespace pidskit
