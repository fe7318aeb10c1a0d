#include "pidskit/triage.hpp"

#include <charconv>
#include <sstream>

#include "pidskit/io.hpp"

namespace pidskit {

TriageResult triage_by_score(const ScoreReport& report) {
    TriageResult t;
    for (auto& entry : ranked(report.scores))
        if (entry.second > report.threshold) t.ranked.push_back(std::move(entry));
    return t;
}

void write_triage(const TriageResult& t, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "rank,node_id,score\n";
    char buf[64];
    for (std::size_t i = 0; i < t.ranked.size(); ++i) {
        auto res = std::to_chars(buf, buf + sizeof buf, t.ranked[i].second);
        out << (i + 1) << ',' << t.ranked[i].first << ',' << std::string_view(buf, res.ptr - buf) << '\n';
    }
    write_text_file(path, out.str());
}

}  // namespace pidskit
