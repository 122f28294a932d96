#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "notelm/common.hpp"

namespace notelm {

// A metric that cannot be measured (e.g. F1 when precision and recall are
// both null) is carried as an empty optional, never collapsed to 0. It
// serializes as an empty CSV field / JSON null.
using Metric = std::optional<double>;

struct ScoredTruth {
    double score;
    bool truth;  // true = positive class
};

// Mann-Whitney AUC with midrank tie correction, O(n log n).
// Returns nullopt when only one class is present.
inline Metric auc(const std::vector<ScoredTruth>& items) {
    size_t n = items.size();
    size_t n_pos = 0;
    for (const auto& it : items) n_pos += it.truth ? 1 : 0;
    size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return items[a].score < items[b].score; });

    // midranks: tied scores share the average of their 1-based rank range
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && items[order[j + 1]].score == items[order[i]].score) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t k = i; k <= j; ++k) {
            if (items[order[k]].truth) rank_sum_pos += midrank;
        }
        i = j + 1;
    }

    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct Confusion {
    size_t tp = 0, fp = 0, fn = 0, tn = 0;
    Metric precision;
    Metric recall;
    Metric f1;
};

inline Confusion confusion(const std::vector<std::pair<bool, bool>>& predicted_truth) {
    if (predicted_truth.empty()) throw Error("confusion: empty input");
    Confusion c;
    for (auto [pred, truth] : predicted_truth) {
        if (pred && truth) ++c.tp;
        else if (pred && !truth) ++c.fp;
        else if (!pred && truth) ++c.fn;
        else ++c.tn;
    }
    if (c.tp + c.fp > 0)
        c.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0)
        c.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    // F1 is undefined when P and R are both zero or either is undefined
    if (c.precision && c.recall && (*c.precision > 0.0 || *c.recall > 0.0)) {
        c.f1 = 2.0 * *c.precision * *c.recall / (*c.precision + *c.recall);
    }
    return c;
}

struct EvalRecord {
    size_t iteration = 0;
    Metric auc;
    Metric f1;
    Metric precision;
    Metric recall;
    size_t n_on_vocab = 0;
};

struct LearningCurve {
    size_t case_labels = 0;
    std::vector<EvalRecord> points;  // ordered by iteration

    const EvalRecord& best_by_auc() const {
        return *std::max_element(points.begin(), points.end(),
                                 [](const EvalRecord& a, const EvalRecord& b) {
                                     return a.auc.value_or(-1.0) < b.auc.value_or(-1.0);
                                 });
    }
    const EvalRecord& best_by_f1() const {
        return *std::max_element(points.begin(), points.end(),
                                 [](const EvalRecord& a, const EvalRecord& b) {
                                     return a.f1.value_or(-1.0) < b.f1.value_or(-1.0);
                                 });
    }
};

inline LearningCurve make_learning_curve(size_t case_labels, std::vector<EvalRecord> points) {
    if (points.empty()) throw Error("LearningCurve: no evaluation points");
    for (size_t i = 1; i < points.size(); ++i) {
        if (points[i].iteration < points[i - 1].iteration)
            throw Error("LearningCurve: points not ordered by iteration");
    }
    return LearningCurve{case_labels, std::move(points)};
}

struct SummaryRow {
    size_t case_labels;
    Metric best_auc;
    Metric best_f1;
    size_t iterations_to_best_auc;
};

inline std::vector<SummaryRow> summarize(const std::vector<LearningCurve>& curves) {
    if (curves.empty()) throw Error("summarize: no curves");
    std::vector<SummaryRow> rows;
    rows.reserve(curves.size());
    for (const auto& c : curves) {
        const auto& ba = c.best_by_auc();
        const auto& bf = c.best_by_f1();
        rows.push_back({c.case_labels, ba.auc, bf.f1, ba.iteration});
    }
    return rows;
}

// --- CSV serialization ------------------------------------------------------

inline std::string metric_to_csv(const Metric& m) {
    return m ? format_double(*m) : std::string{};
}

inline std::string curve_to_csv(const LearningCurve& curve) {
    std::string out = "iteration,auc,f1,precision,recall,n_on_vocab\n";
    for (const auto& p : curve.points) {
        out += std::to_string(p.iteration);
        out += ',';
        out += metric_to_csv(p.auc);
        out += ',';
        out += metric_to_csv(p.f1);
        out += ',';
        out += metric_to_csv(p.precision);
        out += ',';
        out += metric_to_csv(p.recall);
        out += ',';
        out += std::to_string(p.n_on_vocab);
        out += '\n';
    }
    return out;
}

inline std::vector<EvalRecord> curve_from_csv(const std::string& csv) {
    std::vector<EvalRecord> points;
    size_t pos = 0;
    bool header = true;
    while (pos < csv.size()) {
        size_t eol = csv.find('\n', pos);
        if (eol == std::string::npos) eol = csv.size();
        std::string_view line(csv.data() + pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        std::vector<std::string_view> fields;
        size_t f = 0;
        while (true) {
            size_t comma = line.find(',', f);
            if (comma == std::string_view::npos) {
                fields.push_back(line.substr(f));
                break;
            }
            fields.push_back(line.substr(f, comma - f));
            f = comma + 1;
        }
        if (fields.size() != 6) throw ParseError("curve csv: expected 6 fields");
        auto parse_metric = [](std::string_view s) -> Metric {
            if (s.empty()) return std::nullopt;
            double v;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size())
                throw ParseError("curve csv: bad number");
            return v;
        };
        EvalRecord r;
        r.iteration = static_cast<size_t>(std::stoull(std::string(fields[0])));
        r.auc = parse_metric(fields[1]);
        r.f1 = parse_metric(fields[2]);
        r.precision = parse_metric(fields[3]);
        r.recall = parse_metric(fields[4]);
        r.n_on_vocab = static_cast<size_t>(std::stoull(std::string(fields[5])));
        points.push_back(r);
    }
    return points;
}

}  // namespace notelm
