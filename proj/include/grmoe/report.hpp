#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>
#include <system_error>
#include <vector>

#include "grmoe/errors.hpp"
#include "grmoe/rng.hpp"
#include "grmoe/synthetic.hpp"

namespace grmoe {

// Neumaier-compensated accumulator: mean-of-many error stays at ulp scale
// instead of growing with the count, so token-level identities (uniform gate
// entropy == log N) survive averaging over thousands of tokens.
struct KahanSum {
    double sum = 0.0;
    double comp = 0.0;

    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            comp += (sum - t) + v;
        else
            comp += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + comp; }
};

// Seed-level aggregation for benchmark tables: population statistics per
// metric plus the collapse rate (collapsed seeds / total seeds).
struct Stat {
    double mean = 0.0;
    double std = 0.0;  // population convention
    double min = 0.0;
    double max = 0.0;
};

inline Stat stat_of(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("stat_of: empty");
    // Summing in sorted order makes the result independent of row order.
    std::sort(values.begin(), values.end());
    Stat s;
    s.min = values.front();
    s.max = values.back();
    double acc = 0.0;
    for (double v : values) acc += v;
    s.mean = acc / values.size();
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / values.size());
    return s;
}

struct Aggregate {
    Stat acc, cv, entropy;
    double collapse_rate = 0.0;
    int n = 0;
};

inline Aggregate aggregate(const std::vector<EvalMetrics>& rows) {
    if (rows.empty()) throw InvalidArgument("aggregate: empty");
    std::vector<double> acc, cv, entropy;
    int collapsed = 0;
    for (const EvalMetrics& m : rows) {
        acc.push_back(m.assignment_accuracy);
        cv.push_back(m.load_cv);
        entropy.push_back(m.mean_entropy);
        collapsed += m.collapsed ? 1 : 0;
    }
    Aggregate a;
    a.acc = stat_of(std::move(acc));
    a.cv = stat_of(std::move(cv));
    a.entropy = stat_of(std::move(entropy));
    a.collapse_rate = static_cast<double>(collapsed) / rows.size();
    a.n = static_cast<int>(rows.size());
    return a;
}

inline double cv_of_loads(const std::vector<double>& loads) {
    if (loads.empty()) throw InvalidArgument("cv_of_loads: empty");
    double mean = 0.0;
    for (double l : loads) mean += l;
    mean /= loads.size();
    if (mean == 0.0) throw InvalidArgument("cv_of_loads: zero mean");
    double var = 0.0;
    for (double l : loads) var += (l - mean) * (l - mean);
    return std::sqrt(var / loads.size()) / mean;
}

// Bootstrap standard error of the across-seed mean of per-seed load CVs:
// seeds are resampled with replacement, the statistic is the resample's mean
// CV, and the spread of that statistic across resamples is returned.
inline double bootstrap_cv_stderr(const std::vector<std::vector<double>>& loads, int resamples,
                                  Rng& rng) {
    if (loads.size() < 2) throw InvalidArgument("bootstrap_cv_stderr: need >= 2 seeds");
    if (resamples < 200) throw InvalidArgument("bootstrap_cv_stderr: resamples >= 200");
    const int s = static_cast<int>(loads.size());
    std::vector<double> cvs(s);
    for (int i = 0; i < s; ++i) cvs[i] = cv_of_loads(loads[i]);

    std::vector<double> stats(resamples);
    for (int r = 0; r < resamples; ++r) {
        double acc = 0.0;
        for (int i = 0; i < s; ++i) {
            int j = static_cast<int>(rng.uniform() * s);
            if (j >= s) j = s - 1;
            acc += cvs[j];
        }
        stats[r] = acc / s;
    }
    double mean = 0.0;
    for (double v : stats) mean += v;
    mean /= resamples;
    double var = 0.0;
    for (double v : stats) var += (v - mean) * (v - mean);
    return std::sqrt(var / resamples);
}

// Shortest decimal form that round-trips the exact double, so tables are both
// readable and faithful, and reruns produce byte-identical files.
inline std::string csv_double(double v) {
    char buf[32];
    const std::to_chars_result res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace grmoe
