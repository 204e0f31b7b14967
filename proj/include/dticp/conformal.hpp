#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "core.hpp"

namespace dticp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ============================================================================
// Nonconformity scores
// ============================================================================
enum class ScoreKind { AbsoluteResidual, NormalizedResidual };

inline double score(double y, double y_hat, ScoreKind kind = ScoreKind::AbsoluteResidual,
                    std::optional<double> sigma = std::nullopt) {
    const double r = std::fabs(y - y_hat);
    if (kind == ScoreKind::AbsoluteResidual) return r;
    if (!sigma || !(*sigma > 0.0) || !std::isfinite(*sigma))
        throw DomainError("normalized score requires a positive finite sigma");
    return r / *sigma;
}

// ============================================================================
// Conformal quantile
// ============================================================================
struct QuantileThreshold {
    double value = kInf;
    std::size_t n_cal = 0;
    double alpha = 0.1;

    bool unbounded() const noexcept { return std::isinf(value); }
};

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
}

// One-based rank ceil((1 - alpha)(n + 1)). The 1e-9 slack absorbs binary
// representation error in alpha (0.7 is stored as 0.69999...).
inline std::size_t conformal_rank(std::size_t n, double alpha) {
    const double t = (1.0 - alpha) * static_cast<double>(n + 1);
    return static_cast<std::size_t>(std::ceil(t - 1e-9));
}

// The k-th smallest score, or +inf when k exceeds the number of scores.
inline QuantileThreshold conformal_quantile(std::span<const double> scores, double alpha) {
    check_alpha(alpha);
    QuantileThreshold q{kInf, scores.size(), alpha};
    const std::size_t k = conformal_rank(scores.size(), alpha);
    if (k == 0 || k > scores.size()) {
        if (k == 0 && !scores.empty()) q.value = *std::min_element(scores.begin(), scores.end());
        return q;
    }
    std::vector<double> buf(scores.begin(), scores.end());
    std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k - 1), buf.end());
    q.value = buf[k - 1];
    return q;
}

// ============================================================================
// Intervals
// ============================================================================
// Symmetric interval stored as centre and half-width; the endpoints are derived.
// width() is exactly 2 * half_width.
struct PredictionInterval {
    double center = 0.0;
    double half_width = kInf;

    double lower() const noexcept { return std::isinf(half_width) ? -kInf : center - half_width; }
    double upper() const noexcept { return std::isinf(half_width) ? kInf : center + half_width; }
    double width() const noexcept { return 2.0 * half_width; }
    bool bounded() const noexcept { return !std::isinf(half_width); }
    bool contains(double y) const noexcept { return lower() <= y && y <= upper(); }
};

inline PredictionInterval mcp_interval(double y_hat, const QuantileThreshold& q,
                                       ScoreKind kind = ScoreKind::AbsoluteResidual,
                                       std::optional<double> sigma = std::nullopt) {
    if (kind == ScoreKind::AbsoluteResidual) {
        if (sigma) throw ConfigError("sigma supplied for absolute-residual scores");
        return {y_hat, q.value};
    }
    if (!sigma) throw ConfigError("normalized scores require sigma at prediction time");
    if (!(*sigma > 0.0) || !std::isfinite(*sigma)) throw DomainError("sigma must be positive and finite");
    return {y_hat, q.unbounded() ? kInf : q.value * *sigma};
}

// ============================================================================
// Calibration data
// ============================================================================
// A calibration score tagged with the table row it came from.
struct CalScore {
    std::size_t row = 0;
    double value = 0.0;

    friend bool operator==(const CalScore&, const CalScore&) = default;
};

inline std::vector<double> values_of(std::span<const CalScore> s) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i].value;
    return out;
}

inline QuantileThreshold quantile_of(std::span<const CalScore> s, double alpha) {
    const auto v = values_of(s);
    return conformal_quantile(v, alpha);
}

// Union of two row-sorted score lists; rows present in both are kept once.
inline std::vector<CalScore> union_by_row(std::span<const CalScore> a, std::span<const CalScore> b) {
    std::vector<CalScore> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out),
                   [](const CalScore& x, const CalScore& y) { return x.row < y.row; });
    return out;
}

inline std::vector<CalScore> intersect_by_row(std::span<const CalScore> a, std::span<const CalScore> b) {
    std::vector<CalScore> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out),
                          [](const CalScore& x, const CalScore& y) { return x.row < y.row; });
    return out;
}

// Scores for the given rows (sorted by row). `sigma`, when non-empty, is
// aligned with `rows` and switches to normalized scores.
inline std::vector<CalScore> calibration_scores(const InteractionTable& table, std::span<const std::size_t> rows,
                                                ScoreKind kind = ScoreKind::AbsoluteResidual,
                                                std::span<const double> sigma = {}) {
    if (kind == ScoreKind::NormalizedResidual && sigma.size() != rows.size())
        throw ConfigError("normalized scores need one sigma per calibration row");
    std::vector<CalScore> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rec = table[rows[i]];
        if (!rec.prediction)
            throw ValidationError("calibration row " + std::to_string(rows[i]) + " has no prediction");
        const auto s = kind == ScoreKind::NormalizedResidual ? std::optional<double>(sigma[i]) : std::nullopt;
        out.push_back({rows[i], score(rec.label, *rec.prediction, kind, s)});
    }
    std::sort(out.begin(), out.end(), [](const CalScore& a, const CalScore& b) { return a.row < b.row; });
    return out;
}

// What the interval stage is allowed to see about a test row: no label.
struct PairQuery {
    DrugId drug;
    ProteinId protein;
    double prediction = 0.0;
    std::optional<double> sigma;
};

inline std::vector<PairQuery> make_queries(const InteractionTable& table, std::span<const std::size_t> rows) {
    std::vector<PairQuery> out;
    out.reserve(rows.size());
    for (auto r : rows) {
        const auto& rec = table[r];
        if (!rec.prediction) throw ValidationError("test row " + std::to_string(r) + " has no prediction");
        out.push_back({rec.drug, rec.protein, *rec.prediction, std::nullopt});
    }
    return out;
}

struct IntervalPrediction {
    PredictionInterval interval;
    QuantileThreshold threshold;
};

// ============================================================================
// Marginal CP
// ============================================================================
struct MarginalCalibration {
    std::vector<CalScore> scores;
    double alpha = 0.1;
    ScoreKind kind = ScoreKind::AbsoluteResidual;
    QuantileThreshold threshold;
};

inline MarginalCalibration calibrate_mcp(const InteractionTable& table, std::span<const std::size_t> cal_rows,
                                         double alpha, ScoreKind kind = ScoreKind::AbsoluteResidual,
                                         std::span<const double> sigma = {}) {
    check_alpha(alpha);
    MarginalCalibration m;
    m.scores = calibration_scores(table, cal_rows, kind, sigma);
    m.alpha = alpha;
    m.kind = kind;
    m.threshold = quantile_of(m.scores, alpha);
    return m;
}

inline std::vector<IntervalPrediction> predict_intervals_mcp(const MarginalCalibration& calib,
                                                             std::span<const PairQuery> queries) {
    std::vector<IntervalPrediction> out;
    out.reserve(queries.size());
    for (const auto& q : queries)
        out.push_back({mcp_interval(q.prediction, calib.threshold, calib.kind, q.sigma), calib.threshold});
    return out;
}

// ============================================================================
// Group-conditioned (Mondrian) CP
// ============================================================================
// Score lists are sorted by row.
struct GroupCalibration {
    std::map<DrugId, std::vector<CalScore>> per_drug;
    std::map<ProteinId, std::vector<CalScore>> per_protein;
    std::vector<CalScore> global_scores;
    double alpha = 0.1;
    ScoreKind kind = ScoreKind::AbsoluteResidual;
};

inline GroupCalibration build_group_calibration(const InteractionTable& table, std::span<const std::size_t> cal_rows,
                                                double alpha, ScoreKind kind = ScoreKind::AbsoluteResidual,
                                                std::span<const double> sigma = {}) {
    check_alpha(alpha);
    GroupCalibration g;
    g.alpha = alpha;
    g.kind = kind;
    g.global_scores = calibration_scores(table, cal_rows, kind, sigma);
    for (const auto& s : g.global_scores) {
        g.per_drug[table[s.row].drug].push_back(s);
        g.per_protein[table[s.row].protein].push_back(s);
    }
    return g;
}

// Both entities seen: quantile of the union of their groups (a row matching
// both counted once). One seen: that group. Neither: all calibration scores.
inline QuantileThreshold gcp_threshold(const GroupCalibration& calib, const DrugId& drug, const ProteinId& protein) {
    auto d = calib.per_drug.find(drug);
    auto p = calib.per_protein.find(protein);
    const bool has_d = d != calib.per_drug.end();
    const bool has_p = p != calib.per_protein.end();
    if (has_d && has_p) return quantile_of(union_by_row(d->second, p->second), calib.alpha);
    if (has_d) return quantile_of(d->second, calib.alpha);
    if (has_p) return quantile_of(p->second, calib.alpha);
    return quantile_of(calib.global_scores, calib.alpha);
}

inline std::vector<IntervalPrediction> predict_intervals_gcp(const GroupCalibration& calib,
                                                             std::span<const PairQuery> queries) {
    std::vector<IntervalPrediction> out;
    out.reserve(queries.size());
    std::optional<QuantileThreshold> global;
    for (const auto& q : queries) {
        QuantileThreshold t;
        if (!calib.per_drug.count(q.drug) && !calib.per_protein.count(q.protein)) {
            if (!global) global = quantile_of(calib.global_scores, calib.alpha);
            t = *global;
        } else {
            t = gcp_threshold(calib, q.drug, q.protein);
        }
        out.push_back({mcp_interval(q.prediction, t, calib.kind, q.sigma), t});
    }
    return out;
}

} // namespace dticp
