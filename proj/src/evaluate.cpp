#include "pidskit/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pidskit/errors.hpp"
#include "pidskit/io.hpp"

namespace pidskit {

namespace {

std::string shortest(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

struct Acc {
    double max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    std::size_t n = 0;

    void add(double v) {
        max = std::max(max, v);
        sum += v;
        ++n;
    }
    double get(Reduce r) const { return r == Reduce::Max ? max : sum / static_cast<double>(n); }
};

}  // namespace

ScoreMap reduce_scores(const std::vector<std::pair<std::string, double>>& assigned, Reduce reduce) {
    std::map<std::string, Acc> acc;
    for (const auto& [id, v] : assigned) acc[id].add(v);
    ScoreMap out;
    for (const auto& [id, a] : acc) out.emplace(id, a.get(reduce));
    return out;
}

ScoreMap score_nodes(std::vector<Parameter>& params, const ModelConfig& cfg, const std::vector<Batch>& batches,
                     NodeFeaturizer& feat, Reduce reduce) {
    std::map<std::string, Acc> acc;
    for (const auto& b : batches) {
        const auto& g = b.graph;
        const auto r = batch_loss(params, cfg, g, node_features(g, feat), false);
        for (std::size_t i = 0; i < r.items.size(); ++i) {
            const double loss = r.item_loss[i];
            if (r.edge_items) {
                const auto& e = g.edges()[r.items[i]];
                acc[std::string(base_id(g.nodes()[e.src].id))].add(loss);
                acc[std::string(base_id(g.nodes()[e.dst].id))].add(loss);
            } else {
                acc[std::string(base_id(g.nodes()[r.items[i]].id))].add(loss);
            }
        }
    }
    ScoreMap out;
    for (const auto& [id, a] : acc) out.emplace(id, a.get(reduce));
    return out;
}

double threshold_fixed(double v) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("fixed threshold must be a finite non-negative value");
    return v;
}

double threshold_max_val(const ScoreMap& val_scores) {
    if (val_scores.empty()) throw DataError("max_val_loss threshold: empty validation scores");
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& [id, v] : val_scores) m = std::max(m, v);
    return m;
}

double threshold_kmeans(const std::vector<double>& scores, int iters) {
    if (scores.empty()) throw DataError("kmeans threshold: no scores");
    const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
    if (*mn == *mx) throw DataError("kmeans threshold: fewer than 2 distinct scores");
    double c0 = *mn, c1 = *mx;
    std::vector<char> assign(scores.size(), 2);
    for (int it = 0; it < std::max(iters, 1); ++it) {
        bool changed = false;
        double s0 = 0.0, s1 = 0.0;
        std::size_t n0 = 0, n1 = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const char a = std::abs(scores[i] - c0) <= std::abs(scores[i] - c1) ? 0 : 1;
            if (a != assign[i]) changed = true;
            assign[i] = a;
            if (a == 0) s0 += scores[i], ++n0;
            else s1 += scores[i], ++n1;
        }
        if (!changed) break;
        if (n0) c0 = s0 / static_cast<double>(n0);
        if (n1) c1 = s1 / static_cast<double>(n1);
    }
    return (c0 + c1) / 2.0;
}

ScoreReport make_report(ScoreMap scores, const GroundTruth& gt, double threshold, int epoch) {
    ScoreReport r;
    for (const auto& [id, v] : scores) {
        if (!std::isfinite(v)) throw PipelineError("non-finite score for node " + id);
        auto it = gt.malicious.find(id);
        if (it != gt.malicious.end()) r.labels.emplace(id, it->second);
    }
    r.scores = std::move(scores);
    r.threshold = threshold;
    r.epoch = epoch;
    return r;
}

std::vector<std::pair<std::string, double>> ranked(const ScoreMap& scores) {
    std::vector<std::pair<std::string, double>> v(scores.begin(), scores.end());
    // Map order is ascending id, so a stable sort on score keeps id order within ties.
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return v;
}

double average_precision(const std::vector<bool>& ranked_labels) {
    std::size_t pos = 0, hits = 0;
    for (bool l : ranked_labels) pos += l;
    if (pos == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < ranked_labels.size(); ++k) {
        if (!ranked_labels[k]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return sum / static_cast<double>(pos);
}

double auc_roc(const std::vector<double>& scores, const std::vector<bool>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = static_cast<double>(i + j + 2) / 2.0;  // 1-based average rank
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]]) {
                pos_rank_sum += avg;
                ++pos;
            }
        i = j + 1;
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return 0.0;
    const double u = pos_rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

ScoreMap normalize_scores(const ScoreMap& scores) {
    ScoreMap out;
    if (scores.empty()) return out;
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (const auto& [id, v] : scores) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const double span = mx - mn;
    for (const auto& [id, v] : scores) out.emplace(id, span > 0.0 ? (v - mn) / span : 0.0);
    return out;
}

MetricSet compute_metrics(const ScoreReport& report) {
    MetricSet m;
    std::map<int, std::pair<std::size_t, std::size_t>> per_attack;  // detected, total
    for (const auto& [id, v] : report.scores) {
        const bool detected = v > report.threshold;
        auto lab = report.labels.find(id);
        const bool positive = lab != report.labels.end();
        if (positive) {
            auto& pa = per_attack[lab->second];
            ++pa.second;
            if (detected) ++pa.first;
        }
        if (detected && positive) ++m.tp;
        else if (detected) ++m.fp;
        else if (positive) ++m.fn;
        else ++m.tn;
    }
    auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
    m.precision = ratio(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fp));
    m.recall = ratio(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fn));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    for (const auto& [attack, dt] : per_attack)
        m.attack_recall[attack] = ratio(static_cast<double>(dt.first), static_cast<double>(dt.second));

    const std::size_t pos = report.labels.size();
    const std::size_t neg = report.scores.size() - pos;
    if (pos > 0 && neg > 0) {
        const auto r = ranked(report.scores);
        std::vector<bool> labels;
        std::vector<double> scores;
        for (const auto& [id, v] : r) {
            labels.push_back(report.labels.count(id) != 0);
            scores.push_back(v);
        }
        m.average_precision = average_precision(labels);
        m.auc_roc = auc_roc(scores, labels);

        const auto norm = normalize_scores(report.scores);
        double sa = 0.0, sb = 0.0;
        for (const auto& [id, v] : norm) (report.labels.count(id) ? sa : sb) += v;
        m.discrimination = sa / static_cast<double>(pos) - sb / static_cast<double>(neg);
    }
    return m;
}

std::vector<std::pair<std::string, double>> MetricSet::named() const {
    std::vector<std::pair<std::string, double>> v = {
        {"tp", static_cast<double>(tp)},
        {"fp", static_cast<double>(fp)},
        {"tn", static_cast<double>(tn)},
        {"fn", static_cast<double>(fn)},
        {"precision", precision},
        {"recall", recall},
        {"f1", f1},
    };
    if (average_precision) v.emplace_back("average_precision", *average_precision);
    if (auc_roc) v.emplace_back("auc_roc", *auc_roc);
    if (discrimination) v.emplace_back("discrimination", *discrimination);
    for (const auto& [attack, r] : attack_recall) v.emplace_back("attack_" + std::to_string(attack) + "_recall", r);
    return v;
}

std::string metrics_jsonl(int epoch, const MetricSet& m) {
    std::string out;
    for (const auto& [name, value] : m.named()) {
        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["metric"] = name;
        j["value"] = value;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void export_plot_data(const ScoreReport& report, const std::filesystem::path& dir, std::size_t top_k) {
    const auto norm = normalize_scores(report.scores);

    std::map<std::string, std::vector<std::uint64_t>> hist;
    hist["benign"].assign(kHistogramBins, 0);
    for (const auto& [id, attack] : report.labels) hist["attack_" + std::to_string(attack)].assign(kHistogramBins, 0);
    for (const auto& [id, v] : norm) {
        auto lab = report.labels.find(id);
        const std::string series = lab == report.labels.end() ? "benign" : "attack_" + std::to_string(lab->second);
        const int bin = std::min(kHistogramBins - 1, static_cast<int>(std::floor(v * kHistogramBins)));
        ++hist[series][static_cast<std::size_t>(bin)];
    }
    std::ostringstream h;
    h << "series,bin,lo,hi,count\n";
    for (const auto& [series, counts] : hist)
        for (int b = 0; b < kHistogramBins; ++b)
            h << series << ',' << b << ',' << shortest(static_cast<double>(b) / kHistogramBins) << ','
              << shortest(static_cast<double>(b + 1) / kHistogramBins) << ',' << counts[b] << '\n';
    write_text_file(dir / "score_histogram.csv", h.str());

    std::ostringstream t;
    t << "rank,node_id,score,label\n";
    const auto r = ranked(report.scores);
    for (std::size_t i = 0; i < r.size() && i < top_k; ++i) {
        auto lab = report.labels.find(r[i].first);
        t << (i + 1) << ',' << r[i].first << ',' << shortest(norm.at(r[i].first)) << ','
          << (lab == report.labels.end() ? std::string("benign") : "attack_" + std::to_string(lab->second)) << '\n';
    }
    write_text_file(dir / "top_ranked.csv", t.str());
}

}  // namespace pidskit
