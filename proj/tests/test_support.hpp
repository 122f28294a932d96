#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "notelm/corpus.hpp"
#include "notelm/tensor.hpp"

namespace test_support {

// Central finite-difference check: perturbs every element of every listed
// tensor and compares (f(x+h) - f(x-h)) / 2h against the analytic gradient.
// Returns the worst relative error over all elements.
struct FdReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
};

inline FdReport finite_difference_check(
    const std::vector<std::pair<std::string, notelm::Tensor<double>*>>& params,
    const std::vector<notelm::Tensor<double>>& analytic_grads,
    const std::function<double()>& loss_fn, double h = 1e-5) {
    FdReport report;
    for (size_t p = 0; p < params.size(); ++p) {
        notelm::Tensor<double>& t = *params[p].second;
        const notelm::Tensor<double>& g = analytic_grads[p];
        for (size_t i = 0; i < t.numel(); ++i) {
            double saved = t.data[i];
            t.data[i] = saved + h;
            double up = loss_fn();
            t.data[i] = saved - h;
            double down = loss_fn();
            t.data[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = g.data[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            double rel = std::abs(numeric - analytic) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = params[p].first;
                report.worst_index = i;
            }
        }
    }
    return report;
}

// Golden labeling table: every letter the partition rule names, the T
// category boundaries, and the X/Y ranges that fall to default exclusion.
inline const std::vector<std::pair<std::string, notelm::TraumaLabel>>& golden_icd10_table() {
    using notelm::TraumaLabel;
    static const std::vector<std::pair<std::string, TraumaLabel>> table = {
        // trauma: S, V, T01-T35
        {"S00", TraumaLabel::Trauma},
        {"S06.0", TraumaLabel::Trauma},
        {"S52.5", TraumaLabel::Trauma},
        {"S72.1", TraumaLabel::Trauma},
        {"S99", TraumaLabel::Trauma},
        {"V01", TraumaLabel::Trauma},
        {"V18.0", TraumaLabel::Trauma},
        {"V43.5", TraumaLabel::Trauma},
        {"V99", TraumaLabel::Trauma},
        {"T1", TraumaLabel::Trauma},
        {"T14.0", TraumaLabel::Trauma},
        {"T20", TraumaLabel::Trauma},
        {"T35", TraumaLabel::Trauma},
        {"T35.9", TraumaLabel::Trauma},
        {"t9", TraumaLabel::Trauma},  // case-normalized
        // non-trauma: A C D E G H I J L N
        {"A09", TraumaLabel::NonTrauma},
        {"A41.9", TraumaLabel::NonTrauma},
        {"C34.9", TraumaLabel::NonTrauma},
        {"D50.9", TraumaLabel::NonTrauma},
        {"E11.6", TraumaLabel::NonTrauma},
        {"E86", TraumaLabel::NonTrauma},
        {"G43.0", TraumaLabel::NonTrauma},
        {"H66.0", TraumaLabel::NonTrauma},
        {"H81.1", TraumaLabel::NonTrauma},
        {"I10", TraumaLabel::NonTrauma},
        {"I48", TraumaLabel::NonTrauma},
        {"J18.9", TraumaLabel::NonTrauma},
        {"J45.9", TraumaLabel::NonTrauma},
        {"L03.1", TraumaLabel::NonTrauma},
        {"N39.0", TraumaLabel::NonTrauma},
        // excluded letters the rule enumerates
        {"F32.9", TraumaLabel::Excluded},
        {"M54.5", TraumaLabel::Excluded},
        {"O80", TraumaLabel::Excluded},
        {"P07", TraumaLabel::Excluded},
        {"Q21.0", TraumaLabel::Excluded},
        {"U07.1", TraumaLabel::Excluded},
        {"Z00", TraumaLabel::Excluded},
        // letters in neither list fall to default exclusion
        {"B20", TraumaLabel::Excluded},
        {"K35.2", TraumaLabel::Excluded},
        {"R51", TraumaLabel::Excluded},
        {"W54", TraumaLabel::Excluded},
        // T boundaries: T00 below the trauma range, T36-T98 above it
        {"T0", TraumaLabel::Excluded},
        {"T00", TraumaLabel::Excluded},
        {"T36", TraumaLabel::Excluded},
        {"T36.0", TraumaLabel::Excluded},
        {"T98", TraumaLabel::Excluded},
        // X40-X57 / Y10-Y98 and their neighbours all sit outside both lists
        {"X39", TraumaLabel::Excluded},
        {"X40", TraumaLabel::Excluded},
        {"X57", TraumaLabel::Excluded},
        {"X58", TraumaLabel::Excluded},
        {"Y09", TraumaLabel::Excluded},
        {"Y10", TraumaLabel::Excluded},
        {"Y98", TraumaLabel::Excluded},
    };
    return table;
}

}  // namespace test_support
