// SPDX-License-Identifier: Apache-2.0
#include "skillrank/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <boost/math/distributions/students_t.hpp>
#include <spdlog/spdlog.h>

namespace skillrank {

// ---------------------------------------------------------------------------
// Qrels

void Qrels::add(const std::string& query_id, const std::string& doc_id, int grade) {
    if (grade < 0 || grade > 2) throw std::invalid_argument("grade " + std::to_string(grade) + " outside {0,1,2}");
    auto& docs = grades_[query_id];
    if (!docs.emplace(doc_id, grade).second)
        throw std::invalid_argument("duplicate judgment for (" + query_id + ", " + doc_id + ")");
}

int Qrels::grade(std::string_view query_id, std::string_view doc_id) const {
    auto q = grades_.find(query_id);
    if (q == grades_.end()) return 0;
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second;
}

bool Qrels::has_query(std::string_view query_id) const { return grades_.find(query_id) != grades_.end(); }

const std::map<std::string, int, std::less<>>* Qrels::judgments(std::string_view query_id) const {
    auto q = grades_.find(query_id);
    return q == grades_.end() ? nullptr : &q->second;
}

std::vector<std::string> Qrels::query_ids() const {
    std::vector<std::string> ids;
    for (const auto& [q, docs] : grades_) ids.push_back(q);
    return ids;
}

std::size_t Qrels::relevant_count(std::string_view query_id) const {
    const auto* docs = judgments(query_id);
    if (!docs) return 0;
    return static_cast<std::size_t>(std::count_if(docs->begin(), docs->end(), [](const auto& e) { return e.second >= 1; }));
}

std::size_t Qrels::size() const {
    std::size_t n = 0;
    for (const auto& [q, docs] : grades_) n += docs.size();
    return n;
}

// ---------------------------------------------------------------------------
// Exchange formats

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> parts;
    std::string tok;
    while (in >> tok) parts.push_back(tok);
    return parts;
}

FormatError line_error(std::size_t line_no, const std::string& msg) {
    return FormatError("line " + std::to_string(line_no) + ": " + msg);
}

}  // namespace

Qrels parse_qrels(std::istream& in) {
    Qrels qrels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto parts = split_ws(line);
        if (parts.empty()) continue;
        if (parts.size() != 4) throw line_error(line_no, "expected 'qid 0 docid grade'");
        int grade = 0;
        try {
            std::size_t used = 0;
            grade = std::stoi(parts[3], &used);
            if (used != parts[3].size()) throw std::invalid_argument(parts[3]);
        } catch (const std::exception&) {
            throw line_error(line_no, "grade '" + parts[3] + "' is not an integer");
        }
        try {
            qrels.add(parts[0], parts[2], grade);
        } catch (const std::invalid_argument& e) {
            throw line_error(line_no, e.what());
        }
    }
    return qrels;
}

Qrels load_qrels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open qrels file " + path.string());
    return parse_qrels(in);
}

Run parse_run(std::istream& in) {
    struct Row {
        long rank;
        ScoredEntry entry;
    };
    std::map<std::string, std::vector<Row>, std::less<>> rows;
    std::map<std::string, std::unordered_set<std::string>, std::less<>> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto parts = split_ws(line);
        if (parts.empty()) continue;
        if (parts.size() != 6) throw line_error(line_no, "expected 'qid Q0 docid rank score tag'");
        Row row{};
        try {
            row.rank = std::stol(parts[3]);
            row.entry.score = std::stod(parts[4]);
        } catch (const std::exception&) {
            throw line_error(line_no, "rank or score is not numeric");
        }
        if (!std::isfinite(row.entry.score)) throw line_error(line_no, "score is not finite");
        row.entry.doc_id = parts[2];
        if (!seen[parts[0]].insert(parts[2]).second)
            throw line_error(line_no, "duplicate document " + parts[2] + " for query " + parts[0]);
        rows[parts[0]].push_back(std::move(row));
    }
    Run run;
    for (auto& [qid, list] : rows) {
        std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
        ScoredList sl;
        sl.query_id = qid;
        for (auto& r : list) sl.entries.push_back(std::move(r.entry));
        try {
            check_scored_list(sl);
        } catch (const std::invalid_argument& e) {
            throw FormatError(std::string("run: ") + e.what());
        }
        run.emplace(qid, std::move(sl));
    }
    return run;
}

Run load_run(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open run file " + path.string());
    return parse_run(in);
}

void write_run(std::ostream& out, const Run& run, std::string_view tag) {
    out << std::setprecision(10);
    for (const auto& [qid, list] : run)
        for (std::size_t i = 0; i < list.entries.size(); ++i)
            out << qid << " Q0 " << list.entries[i].doc_id << ' ' << (i + 1) << ' ' << list.entries[i].score << ' '
                << tag << '\n';
}

void write_qrels(std::ostream& out, const Qrels& qrels) {
    for (const auto& qid : qrels.query_ids())
        for (const auto& [doc, grade] : *qrels.judgments(qid)) out << qid << " 0 " << doc << ' ' << grade << '\n';
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

double gain_of(int grade, Gain gain) {
    return gain == Gain::exponential ? std::exp2(static_cast<double>(grade)) - 1.0 : static_cast<double>(grade);
}

void require_k(std::size_t k) {
    if (k < 1) throw std::invalid_argument("metric cutoff k must be >= 1");
}

}  // namespace

double ndcg_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k,
                 Gain gain) {
    require_k(k);
    const auto* docs = qrels.judgments(query_id);
    if (!docs) return 0.0;
    std::vector<int> ideal;
    for (const auto& [doc, g] : *docs)
        if (g > 0) ideal.push_back(g);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i)
        idcg += gain_of(ideal[i], gain) / std::log2(static_cast<double>(i) + 2.0);
    if (idcg == 0.0) return 0.0;
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i)
        dcg += gain_of(qrels.grade(query_id, ranking[i]), gain) / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

double mrr_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k) {
    require_k(k);
    for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i)
        if (qrels.grade(query_id, ranking[i]) >= 1) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

double map_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k) {
    require_k(k);
    const std::size_t relevant = qrels.relevant_count(query_id);
    if (relevant == 0) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
        if (qrels.grade(query_id, ranking[i]) >= 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(std::min(relevant, k));
}

double recall_at_k(std::span<const std::string> ranking, const Qrels& qrels, std::string_view query_id, std::size_t k) {
    require_k(k);
    const std::size_t relevant = qrels.relevant_count(query_id);
    if (relevant == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i)
        if (qrels.grade(query_id, ranking[i]) >= 1) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant);
}

std::string MetricSpec::name() const {
    static constexpr const char* names[] = {"ndcg", "mrr", "map", "recall"};
    return std::string(names[static_cast<int>(kind)]) + "@" + std::to_string(k);
}

MetricSpec MetricSpec::parse(std::string_view text) {
    auto at = text.find('@');
    if (at == std::string_view::npos) throw std::invalid_argument("metric must look like name@k: " + std::string(text));
    std::string name(text.substr(0, at));
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    MetricSpec m;
    if (name == "ndcg") m.kind = MetricKind::ndcg;
    else if (name == "mrr") m.kind = MetricKind::mrr;
    else if (name == "map") m.kind = MetricKind::map;
    else if (name == "recall" || name == "r") m.kind = MetricKind::recall;
    else throw std::invalid_argument("unknown metric " + name);
    const std::string k(text.substr(at + 1));
    std::size_t used = 0;
    long value = 0;
    try {
        value = std::stol(k, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != k.size() || value < 1) throw std::invalid_argument("metric cutoff must be a positive integer: " + k);
    m.k = static_cast<std::size_t>(value);
    return m;
}

std::vector<MetricSpec> parse_metric_list(std::string_view text) {
    std::vector<MetricSpec> metrics;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        auto item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        if (!item.empty()) metrics.push_back(MetricSpec::parse(item));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (metrics.empty()) throw std::invalid_argument("no metrics given");
    return metrics;
}

double compute_metric(const MetricSpec& metric, std::span<const std::string> ranking, const Qrels& qrels,
                      std::string_view query_id, Gain gain) {
    switch (metric.kind) {
    case MetricKind::ndcg: return ndcg_at_k(ranking, qrels, query_id, metric.k, gain);
    case MetricKind::mrr: return mrr_at_k(ranking, qrels, query_id, metric.k);
    case MetricKind::map: return map_at_k(ranking, qrels, query_id, metric.k);
    case MetricKind::recall: return recall_at_k(ranking, qrels, query_id, metric.k);
    }
    return 0.0;
}

std::vector<double> EvalReport::column(std::size_t metric_index) const {
    std::vector<double> values;
    values.reserve(query_ids.size());
    for (const auto& q : query_ids) values.push_back(per_query.at(q).at(metric_index));
    return values;
}

EvalReport evaluate_run(const Run& run, const Qrels& qrels, const std::vector<MetricSpec>& metrics, Gain gain) {
    EvalReport report;
    report.metrics = metrics;
    report.query_ids = qrels.query_ids();
    const bool shared = std::any_of(report.query_ids.begin(), report.query_ids.end(),
                                    [&](const std::string& q) { return run.find(q) != run.end(); });
    if (!shared) throw std::invalid_argument("run and qrels share no query");
    report.means.assign(metrics.size(), 0.0);
    for (const auto& q : report.query_ids) {
        std::vector<double> values(metrics.size(), 0.0);
        if (auto it = run.find(q); it != run.end()) {
            const auto ranking = it->second.doc_ids();
            for (std::size_t m = 0; m < metrics.size(); ++m) values[m] = compute_metric(metrics[m], ranking, qrels, q, gain);
        } else {
            report.warnings.push_back("query " + q + " missing from run; scored 0");
            spdlog::warn("query {} missing from run; scored 0", q);
        }
        for (std::size_t m = 0; m < metrics.size(); ++m) report.means[m] += values[m];
        report.per_query.emplace(q, std::move(values));
    }
    for (auto& mean : report.means) mean /= static_cast<double>(report.query_ids.size());
    return report;
}

// ---------------------------------------------------------------------------
// Statistics

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, double alpha, std::size_t comparisons) {
    if (a.size() != b.size()) throw std::invalid_argument("paired t-test needs equal-length samples");
    if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least two pairs");
    if (comparisons < 1) throw std::invalid_argument("comparison count must be >= 1");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);

    TTestResult r;
    r.df = n - 1;
    r.threshold = alpha / static_cast<double>(comparisons);
    const double var = ss / static_cast<double>(n - 1);
    if (var == 0.0) {
        r.t = 0.0;
        r.p = 1.0;
        r.significant = false;
        return r;
    }
    r.t = mean / std::sqrt(var / static_cast<double>(n));
    const boost::math::students_t dist(static_cast<double>(r.df));
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
    r.significant = r.p < r.threshold;
    return r;
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("kendall_tau needs equal-length samples");
    const std::size_t n = x.size();
    long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0) {
                ++ties_x;
            } else if (dy == 0.0) {
                ++ties_y;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double denom = std::sqrt(static_cast<double>(concordant + discordant + ties_x) *
                                   static_cast<double>(concordant + discordant + ties_y));
    return denom == 0.0 ? 0.0 : static_cast<double>(concordant - discordant) / denom;
}

}  // namespace skillrank
