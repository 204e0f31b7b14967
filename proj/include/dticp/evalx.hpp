#pragma once
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ccp.hpp"
#include "conformal.hpp"
#include "core.hpp"

namespace dticp {

// ============================================================================
// Coverage and width
// ============================================================================
inline double coverage(std::span<const PredictionInterval> intervals, std::span<const double> labels) {
    if (intervals.size() != labels.size()) throw ValidationError("interval and label counts differ");
    if (intervals.empty()) throw ValidationError("coverage of an empty test set");
    std::size_t covered = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) covered += intervals[i].contains(labels[i]) ? 1 : 0;
    return static_cast<double>(covered) / static_cast<double>(intervals.size());
}

struct WidthSummary {
    double mean = 0.0;  // +inf when any interval is unbounded
    std::size_t n_unbounded = 0;
};

inline WidthSummary mean_width(std::span<const PredictionInterval> intervals) {
    if (intervals.empty()) throw ValidationError("mean width of an empty interval set");
    WidthSummary w;
    double acc = 0.0;
    for (const auto& iv : intervals) {
        if (!iv.bounded()) {
            ++w.n_unbounded;
            continue;
        }
        acc += iv.width();
    }
    w.mean = w.n_unbounded > 0 ? kInf : acc / static_cast<double>(intervals.size());
    return w;
}

struct SubgroupCoverage {
    std::size_t n = 0;
    std::size_t covered = 0;
    double coverage() const { return n == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(n); }
};

using SubgroupMap = std::map<std::string, SubgroupCoverage>;

inline SubgroupMap subgroup_coverage(std::span<const PredictionInterval> intervals, std::span<const double> labels,
                                     std::span<const std::string> group_of) {
    if (intervals.size() != labels.size() || intervals.size() != group_of.size())
        throw ValidationError("interval, label and group counts differ");
    SubgroupMap out;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        auto& g = out[group_of[i]];
        ++g.n;
        g.covered += intervals[i].contains(labels[i]) ? 1 : 0;
    }
    return out;
}

// ============================================================================
// Mean absolute coverage gap
// ============================================================================
enum class SubgroupKind { Drug, Protein, Cluster };

inline const char* to_string(SubgroupKind k) {
    switch (k) {
        case SubgroupKind::Drug: return "drug";
        case SubgroupKind::Protein: return "protein";
        case SubgroupKind::Cluster: return "cluster";
    }
    return "?";
}

struct MacgReport {
    SubgroupKind kind = SubgroupKind::Drug;
    double macg = 0.0;
    double std_gap = 0.0;
    std::size_t n_subgroups = 0;
    double alpha = 0.1;
};

// Unweighted mean of |coverage_i - (1 - alpha)| over subgroups with at least
// `min_size` rows. std_gap is the population standard deviation of the gaps
// (sample deviation when `sample_std`).
inline MacgReport macg(const SubgroupMap& groups, double alpha, SubgroupKind kind = SubgroupKind::Drug,
                       std::size_t min_size = 1, bool sample_std = false) {
    check_alpha(alpha);
    std::vector<double> gaps;
    for (const auto& [_, g] : groups)
        if (g.n >= std::max<std::size_t>(min_size, 1)) gaps.push_back(std::fabs(g.coverage() - (1.0 - alpha)));
    if (gaps.empty()) throw DegenerateInputError("MACG over zero subgroups");
    MacgReport r;
    r.kind = kind;
    r.alpha = alpha;
    r.n_subgroups = gaps.size();
    double sum = 0.0;
    for (double g : gaps) sum += g;
    r.macg = sum / static_cast<double>(gaps.size());
    double ss = 0.0;
    for (double g : gaps) ss += (g - r.macg) * (g - r.macg);
    const std::size_t denom = sample_std ? gaps.size() - 1 : gaps.size();
    r.std_gap = denom == 0 ? 0.0 : std::sqrt(ss / static_cast<double>(denom));
    return r;
}

inline double combined_macg(const MacgReport& drug, const MacgReport& protein) {
    if (drug.alpha != protein.alpha) throw ValidationError("combined MACG over reports at different alpha");
    return (drug.macg + protein.macg) / 2.0;
}

struct CoverageReport {
    double alpha = 0.1;
    std::size_t n_test = 0;
    double coverage = 0.0;
    WidthSummary width;
    SubgroupMap per_drug;
    SubgroupMap per_protein;
    MacgReport macg_drug;
    MacgReport macg_protein;
    double combined = 0.0;
};

// Everything the evaluation stage reports for one interval set.
inline CoverageReport evaluate_intervals(const InteractionTable& table, std::span<const std::size_t> rows,
                                         std::span<const PredictionInterval> intervals, double alpha) {
    if (rows.size() != intervals.size()) throw ValidationError("row and interval counts differ");
    std::vector<double> labels(rows.size());
    std::vector<std::string> drugs(rows.size()), proteins(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        labels[i] = table[rows[i]].label;
        drugs[i] = table[rows[i]].drug.token;
        proteins[i] = table[rows[i]].protein.token;
    }
    CoverageReport r;
    r.alpha = alpha;
    r.n_test = rows.size();
    r.coverage = coverage(intervals, labels);
    r.width = mean_width(intervals);
    r.per_drug = subgroup_coverage(intervals, labels, drugs);
    r.per_protein = subgroup_coverage(intervals, labels, proteins);
    r.macg_drug = macg(r.per_drug, alpha, SubgroupKind::Drug);
    r.macg_protein = macg(r.per_protein, alpha, SubgroupKind::Protein);
    r.combined = combined_macg(r.macg_drug, r.macg_protein);
    return r;
}

inline std::vector<PredictionInterval> intervals_of(std::span<const IntervalPrediction> p) {
    std::vector<PredictionInterval> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i].interval;
    return out;
}

// ============================================================================
// (gamma, K) grid search
// ============================================================================
struct GridSpec {
    std::vector<double> gammas{0.25, 0.5, 0.75};
    std::vector<std::size_t> ks{1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
};

struct GridCell {
    double gamma = 0.0;
    std::size_t n_clusters = 0;
    double macg_drug = kInf;
    double macg_protein = kInf;
    double combined = kInf;
    bool feasible = false;
};

struct GridSearchResult {
    std::vector<GridCell> evaluated;  // (gamma, K) lexicographic
    double best_gamma = 0.0;
    std::size_t best_k = 0;
    double objective = kInf;
};

struct GridInputs {
    const InteractionTable& table;
    std::span<const std::size_t> cal_rows;
    std::span<const std::size_t> eval_rows;
    CcpMethod method = CcpMethod::NC;
    std::span<const double> alphas;
    std::uint64_t seed = 0;
    const DrugFeatures* drug_features = nullptr;
    const ProteinFeatures* protein_features = nullptr;
    ClusterPooling pooling = ClusterPooling::Union;
};

// One cell: calibrate once, then drug / protein MACG on the evaluation rows,
// averaged over the alphas. Degenerate cells come back infeasible.
inline GridCell evaluate_grid_cell(const GridInputs& in, double gamma, std::size_t k) {
    GridCell cell{gamma, k};
    CcpConfig cfg;
    cfg.method = in.method;
    cfg.gamma = gamma;
    cfg.n_clusters = k;
    cfg.seed = in.seed;
    cfg.allow_any_gamma = true;
    cfg.pooling = in.pooling;
    cfg.alpha = in.alphas.empty() ? 0.1 : in.alphas.front();
    try {
        CcpModel model = in.method == CcpMethod::FC
                             ? calibrate_ccp_fc(in.table, in.cal_rows, *in.drug_features, *in.protein_features, cfg)
                             : calibrate_ccp_nc(in.table, in.cal_rows, cfg);
        const auto queries = make_queries(in.table, in.eval_rows);
        double md = 0.0, mp = 0.0;
        for (double a : in.alphas) {
            model.alpha = a;
            model.config.alpha = a;
            const auto pred = predict_intervals_ccp(model, queries, in.drug_features, in.protein_features);
            const auto rep = evaluate_intervals(in.table, in.eval_rows, intervals_of(pred), a);
            md += rep.macg_drug.macg;
            mp += rep.macg_protein.macg;
        }
        const double n = static_cast<double>(in.alphas.size());
        cell.macg_drug = md / n;
        cell.macg_protein = mp / n;
        cell.combined = (cell.macg_drug + cell.macg_protein) / 2.0;
        cell.feasible = true;
    } catch (const DegenerateInputError&) {
        cell = GridCell{gamma, k};
    }
    return cell;
}

// Ties on the objective go to the smaller K, then the smaller gamma.
inline bool better_cell(const GridCell& a, const GridCell& b) {
    if (a.combined != b.combined) return a.combined < b.combined;
    if (a.n_clusters != b.n_clusters) return a.n_clusters < b.n_clusters;
    return a.gamma < b.gamma;
}

inline GridSearchResult grid_search(const GridInputs& in, const GridSpec& grid = {}) {
    if (in.method == CcpMethod::NN) throw ConfigError("grid search applies to CCP-NC and CCP-FC only");
    if (in.alphas.empty()) throw ConfigError("grid search needs at least one alpha");
    if (in.method == CcpMethod::FC && (!in.drug_features || !in.protein_features))
        throw ConfigError("CCP-FC grid search needs drug and protein features");
    if (in.eval_rows.empty()) throw DegenerateInputError("grid search needs evaluation rows");
    std::vector<double> gammas = grid.gammas;
    std::vector<std::size_t> ks = grid.ks;
    std::sort(gammas.begin(), gammas.end());
    std::sort(ks.begin(), ks.end());

    GridSearchResult r;
    const GridCell* best = nullptr;
    for (double g : gammas)
        for (auto k : ks) r.evaluated.push_back(evaluate_grid_cell(in, g, k));
    for (const auto& c : r.evaluated)
        if (!best || better_cell(c, *best)) best = &c;
    r.best_gamma = best->gamma;
    r.best_k = best->n_clusters;
    r.objective = best->combined;
    return r;
}

// ============================================================================
// Reliability curves
// ============================================================================
struct ReliabilityPoint {
    double alpha = 0.0;
    double expected = 0.0;
    double observed = 0.0;
};

// `runner` produces the test intervals at a given alpha from a fixed split and model.
inline std::vector<ReliabilityPoint> reliability_curve(
    const std::function<std::vector<PredictionInterval>(double)>& runner, std::span<const double> labels,
    std::span<const double> alphas) {
    if (alphas.empty()) throw ConfigError("reliability curve needs at least one alpha");
    std::vector<ReliabilityPoint> out;
    for (double a : alphas) {
        check_alpha(a);
        const auto iv = runner(a);
        out.push_back({a, 1.0 - a, coverage(iv, labels)});
    }
    return out;
}

} // namespace dticp
