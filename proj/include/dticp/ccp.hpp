#pragma once
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "clustering.hpp"
#include "conformal.hpp"
#include "core.hpp"
#include "rng.hpp"

namespace dticp {

enum class CcpMethod { NC, FC, NN };

inline const char* to_string(CcpMethod m) {
    switch (m) {
        case CcpMethod::NC: return "CCP-NC";
        case CcpMethod::FC: return "CCP-FC";
        case CcpMethod::NN: return "CCP-NN";
    }
    return "?";
}

// How the drug-cluster and protein-cluster score sets are combined when both
// sides resolve. Union is the default; Intersection is an analysis variant.
enum class ClusterPooling { Union, Intersection };

struct CcpConfig {
    CcpMethod method = CcpMethod::NC;
    double gamma = 0.5;
    std::size_t n_clusters = 5;
    std::size_t n_neighbors = 20;
    double alpha = 0.1;
    std::uint64_t seed = 0;
    bool allow_any_gamma = false;
    ClusterPooling pooling = ClusterPooling::Union;

    void validate() const {
        check_alpha(alpha);
        if (method != CcpMethod::NN) {
            const bool on_grid = gamma == 0.25 || gamma == 0.5 || gamma == 0.75;
            if (!on_grid && !allow_any_gamma)
                throw ConfigError("gamma must be one of 0.25, 0.5, 0.75 (set allow_any_gamma to override)");
            if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
            if (n_clusters == 0) throw ConfigError("n_clusters must be positive");
        } else if (n_neighbors == 0) {
            throw ConfigError("n_neighbors must be positive");
        }
    }
};

// ============================================================================
// gamma split of the calibration rows
// ============================================================================
struct GammaSplit {
    std::vector<std::size_t> cluster_subset;   // sorted
    std::vector<std::size_t> quantile_subset;  // sorted
};

inline GammaSplit gamma_split(std::span<const std::size_t> cal_rows, double gamma, std::uint64_t seed) {
    if (cal_rows.size() < 2) throw DegenerateInputError("gamma split needs at least 2 calibration rows");
    std::vector<std::size_t> rows(cal_rows.begin(), cal_rows.end());
    Rng rng(seed);
    rng.shuffle(rows);
    const auto n_cluster = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(rows.size()) + 1e-9));
    if (n_cluster == 0 || n_cluster >= rows.size()) {
        throw DegenerateInputError("gamma split of " + std::to_string(rows.size()) + " rows at gamma " +
                                   format_double(gamma) + " leaves an empty subset");
    }
    GammaSplit out;
    out.cluster_subset.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_cluster));
    out.quantile_subset.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_cluster), rows.end());
    std::sort(out.cluster_subset.begin(), out.cluster_subset.end());
    std::sort(out.quantile_subset.begin(), out.quantile_subset.end());
    return out;
}

// ============================================================================
// Cluster-conditioned model (NC and FC)
// ============================================================================
struct CcpModel {
    CcpConfig config;
    GammaSplit subsets;
    std::map<DrugId, std::size_t> drug_cluster_of;
    std::map<ProteinId, std::size_t> protein_cluster_of;
    std::optional<KMeansModel> drug_kmeans;
    std::optional<KMeansModel> protein_kmeans;
    // Quantile-subset scores per cluster, sorted by row.
    std::vector<std::vector<CalScore>> drug_cluster_scores;
    std::vector<std::vector<CalScore>> protein_cluster_scores;
    std::vector<CalScore> global_scores;
    double alpha = 0.1;
};

namespace detail {

inline std::uint64_t kmeans_seed(std::uint64_t seed, EntityKind side) {
    return derive_seed(seed, side == EntityKind::Drug ? 11 : 12);
}

template <class Id>
std::map<Id, std::vector<double>> group_scores(const InteractionTable& table, std::span<const CalScore> scores,
                                               Id InteractionRecord::*side) {
    std::map<Id, std::vector<double>> out;
    for (const auto& s : scores) out[table[s.row].*side].push_back(s.value);
    return out;
}

// Residual-ECDF clustering for one side. Entities seen in the cluster subset
// are fitted; entities seen only in the quantile subset are assigned to the
// nearest centroid using their quantile-subset embedding.
template <class Id>
std::optional<KMeansModel> cluster_by_residuals(const InteractionTable& table, std::span<const CalScore> cluster_scores,
                                                std::span<const CalScore> quantile_scores,
                                                Id InteractionRecord::*side, std::size_t k, std::uint64_t seed,
                                                std::map<Id, std::size_t>& cluster_of) {
    const auto fit_groups = group_scores(table, cluster_scores, side);
    if (fit_groups.empty()) return std::nullopt;
    std::vector<std::vector<double>> points;
    std::vector<Id> ids;
    for (const auto& [id, s] : fit_groups) {
        ids.push_back(id);
        points.push_back(ecdf_embedding(s).values);
    }
    auto km = kmeans_fit(points, std::min(k, points.size()), seed);
    km.requested_k = k;
    for (std::size_t i = 0; i < ids.size(); ++i) cluster_of[ids[i]] = km.labels[i];
    for (const auto& [id, s] : group_scores(table, quantile_scores, side)) {
        if (!cluster_of.count(id)) cluster_of[id] = kmeans_assign(km, ecdf_embedding(s).values);
    }
    return km;
}

template <EntityKind K>
std::optional<KMeansModel> cluster_by_features(const InteractionTable& table, std::span<const std::size_t> cluster_rows,
                                               const FeatureTable<K>& features, std::size_t k, std::uint64_t seed) {
    std::set<EntityId<K>> ids;
    for (auto r : cluster_rows) {
        if constexpr (K == EntityKind::Drug) ids.insert(table[r].drug);
        else ids.insert(table[r].protein);
    }
    if (ids.empty()) return std::nullopt;
    std::vector<std::vector<double>> points;
    for (const auto& id : ids) points.push_back(features.at(id));
    auto km = kmeans_fit(points, std::min(k, points.size()), seed);
    km.requested_k = k;
    return km;
}

inline void bucket_scores(CcpModel& m, const InteractionTable& table) {
    const std::size_t kd = m.drug_kmeans ? m.drug_kmeans->k : 0;
    const std::size_t kp = m.protein_kmeans ? m.protein_kmeans->k : 0;
    m.drug_cluster_scores.assign(kd, {});
    m.protein_cluster_scores.assign(kp, {});
    for (const auto& s : m.global_scores) {
        if (auto it = m.drug_cluster_of.find(table[s.row].drug); it != m.drug_cluster_of.end())
            m.drug_cluster_scores[it->second].push_back(s);
        if (auto it = m.protein_cluster_of.find(table[s.row].protein); it != m.protein_cluster_of.end())
            m.protein_cluster_scores[it->second].push_back(s);
    }
}

} // namespace detail

inline CcpModel calibrate_ccp_nc(const InteractionTable& table, std::span<const std::size_t> cal_rows,
                                 const CcpConfig& config) {
    config.validate();
    if (config.method != CcpMethod::NC) throw ConfigError("calibrate_ccp_nc called with a non-NC config");
    CcpModel m;
    m.config = config;
    m.alpha = config.alpha;
    m.subsets = gamma_split(cal_rows, config.gamma, config.seed);
    const auto cluster_scores = calibration_scores(table, m.subsets.cluster_subset);
    m.global_scores = calibration_scores(table, m.subsets.quantile_subset);

    m.drug_kmeans = detail::cluster_by_residuals(table, cluster_scores, m.global_scores, &InteractionRecord::drug,
                                                 config.n_clusters, detail::kmeans_seed(config.seed, EntityKind::Drug),
                                                 m.drug_cluster_of);
    m.protein_kmeans = detail::cluster_by_residuals(table, cluster_scores, m.global_scores, &InteractionRecord::protein,
                                                    config.n_clusters,
                                                    detail::kmeans_seed(config.seed, EntityKind::Protein),
                                                    m.protein_cluster_of);
    detail::bucket_scores(m, table);
    return m;
}

inline CcpModel calibrate_ccp_fc(const InteractionTable& table, std::span<const std::size_t> cal_rows,
                                 const DrugFeatures& drug_features, const ProteinFeatures& protein_features,
                                 const CcpConfig& config) {
    config.validate();
    if (config.method != CcpMethod::FC) throw ConfigError("calibrate_ccp_fc called with a non-FC config");
    for (auto r : cal_rows) {
        drug_features.at(table[r].drug);
        protein_features.at(table[r].protein);
    }
    CcpModel m;
    m.config = config;
    m.alpha = config.alpha;
    m.subsets = gamma_split(cal_rows, config.gamma, config.seed);
    m.global_scores = calibration_scores(table, m.subsets.quantile_subset);

    m.drug_kmeans = detail::cluster_by_features(table, m.subsets.cluster_subset, drug_features, config.n_clusters,
                                                detail::kmeans_seed(config.seed, EntityKind::Drug));
    m.protein_kmeans = detail::cluster_by_features(table, m.subsets.cluster_subset, protein_features,
                                                   config.n_clusters,
                                                   detail::kmeans_seed(config.seed, EntityKind::Protein));
    for (auto r : cal_rows) {
        const auto& rec = table[r];
        if (m.drug_kmeans) m.drug_cluster_of[rec.drug] = kmeans_assign(*m.drug_kmeans, drug_features.at(rec.drug));
        if (m.protein_kmeans)
            m.protein_cluster_of[rec.protein] = kmeans_assign(*m.protein_kmeans, protein_features.at(rec.protein));
    }
    detail::bucket_scores(m, table);
    return m;
}

// Cluster of each side for a test pair, or nullopt when the side cannot be
// resolved or its cluster holds no quantile-subset scores.
struct ClusterResolution {
    std::optional<std::size_t> drug;
    std::optional<std::size_t> protein;
};

inline ClusterResolution resolve_clusters(const CcpModel& m, const DrugId& drug, const ProteinId& protein,
                                          const DrugFeatures* drug_features = nullptr,
                                          const ProteinFeatures* protein_features = nullptr) {
    ClusterResolution r;
    if (auto it = m.drug_cluster_of.find(drug); it != m.drug_cluster_of.end()) {
        r.drug = it->second;
    } else if (m.config.method == CcpMethod::FC && m.drug_kmeans && drug_features) {
        if (auto* v = drug_features->find(drug)) r.drug = kmeans_assign(*m.drug_kmeans, *v);
    }
    if (auto it = m.protein_cluster_of.find(protein); it != m.protein_cluster_of.end()) {
        r.protein = it->second;
    } else if (m.config.method == CcpMethod::FC && m.protein_kmeans && protein_features) {
        if (auto* v = protein_features->find(protein)) r.protein = kmeans_assign(*m.protein_kmeans, *v);
    }
    if (r.drug && m.drug_cluster_scores[*r.drug].empty()) r.drug.reset();
    if (r.protein && m.protein_cluster_scores[*r.protein].empty()) r.protein.reset();
    return r;
}

inline QuantileThreshold ccp_threshold_for(const CcpModel& m, const ClusterResolution& r) {
    if (r.drug && r.protein) {
        const auto& a = m.drug_cluster_scores[*r.drug];
        const auto& b = m.protein_cluster_scores[*r.protein];
        if (m.config.pooling == ClusterPooling::Intersection) {
            const auto both = intersect_by_row(a, b);
            if (!both.empty()) return quantile_of(both, m.alpha);
            return quantile_of(m.global_scores, m.alpha);
        }
        return quantile_of(union_by_row(a, b), m.alpha);
    }
    if (r.drug) return quantile_of(m.drug_cluster_scores[*r.drug], m.alpha);
    if (r.protein) return quantile_of(m.protein_cluster_scores[*r.protein], m.alpha);
    return quantile_of(m.global_scores, m.alpha);
}

inline QuantileThreshold ccp_threshold(const CcpModel& m, const DrugId& drug, const ProteinId& protein,
                                       const DrugFeatures* drug_features = nullptr,
                                       const ProteinFeatures* protein_features = nullptr) {
    return ccp_threshold_for(m, resolve_clusters(m, drug, protein, drug_features, protein_features));
}

inline std::vector<IntervalPrediction> predict_intervals_ccp(const CcpModel& m, std::span<const PairQuery> queries,
                                                             const DrugFeatures* drug_features = nullptr,
                                                             const ProteinFeatures* protein_features = nullptr) {
    // Thresholds depend only on the resolved cluster pair.
    auto key = [](const std::optional<std::size_t>& c) { return c ? static_cast<long long>(*c) : -1LL; };
    std::map<std::pair<long long, long long>, QuantileThreshold> cache;
    std::vector<IntervalPrediction> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        const auto r = resolve_clusters(m, q.drug, q.protein, drug_features, protein_features);
        const auto k = std::make_pair(key(r.drug), key(r.protein));
        auto it = cache.find(k);
        if (it == cache.end()) it = cache.emplace(k, ccp_threshold_for(m, r)).first;
        out.push_back({mcp_interval(q.prediction, it->second), it->second});
    }
    return out;
}

// ============================================================================
// Nearest-neighbour calibration (NN)
// ============================================================================
// No gamma split: the whole calibration set is the neighbour pool.
struct NnCalibration {
    std::vector<CalScore> scores;  // sorted by row
    std::vector<DrugId> entry_drug_ids;        // aligned with `scores`
    std::vector<ProteinId> entry_protein_ids;  // aligned with `scores`
    std::map<DrugId, std::vector<std::size_t>> drug_entries;  // drug -> positions in `scores`
    std::map<DrugId, BitProfile> drug_bits;
    std::map<ProteinId, BitProfile> protein_bits;
    std::size_t k = 20;
    double alpha = 0.1;
};

inline NnCalibration calibrate_ccp_nn(const InteractionTable& table, std::span<const std::size_t> cal_rows,
                                      const DrugBits& drug_bits, const ProteinBits& protein_bits,
                                      const CcpConfig& config) {
    config.validate();
    if (config.method != CcpMethod::NN) throw ConfigError("calibrate_ccp_nn called with a non-NN config");
    NnCalibration c;
    c.k = config.n_neighbors;
    c.alpha = config.alpha;
    c.scores = calibration_scores(table, cal_rows);
    for (std::size_t i = 0; i < c.scores.size(); ++i) {
        const auto& rec = table[c.scores[i].row];
        const auto* db = drug_bits.find(rec.drug);
        const auto* pb = protein_bits.find(rec.protein);
        if (!db) throw ValidationError("missing binary profile for drug '" + rec.drug.token + "'");
        if (!pb) throw ValidationError("missing binary profile for protein '" + rec.protein.token + "'");
        c.drug_bits.emplace(rec.drug, *db);
        c.protein_bits.emplace(rec.protein, *pb);
        c.drug_entries[rec.drug].push_back(i);
        c.entry_drug_ids.push_back(rec.drug);
        c.entry_protein_ids.push_back(rec.protein);
    }
    return c;
}

inline std::vector<CalScore> nn_local_scores(const NnCalibration& c, const NeighborSet<EntityKind::Drug>& drug_nn,
                                             const NeighborSet<EntityKind::Protein>& protein_nn) {
    std::set<ProteinId> proteins;
    for (const auto& [id, _] : protein_nn.neighbors) proteins.insert(id);
    std::vector<CalScore> out;
    for (const auto& [d, _] : drug_nn.neighbors) {
        auto it = c.drug_entries.find(d);
        if (it == c.drug_entries.end()) continue;
        for (auto pos : it->second)
            if (proteins.count(c.entry_protein_ids[pos])) out.push_back(c.scores[pos]);
    }
    std::sort(out.begin(), out.end(), [](const CalScore& a, const CalScore& b) { return a.row < b.row; });
    return out;
}

// Scores of calibration rows whose drug is among the k most similar
// calibration drugs AND whose protein is among the k most similar
// calibration proteins.
inline std::vector<CalScore> ccp_nn_local_scores(const NnCalibration& c, const DrugId& drug, const BitProfile& drug_bits,
                                                 const ProteinId& protein, const BitProfile& protein_bits,
                                                 std::size_t k) {
    return nn_local_scores(c, top_k_neighbors(drug, drug_bits, c.drug_bits, k),
                           top_k_neighbors(protein, protein_bits, c.protein_bits, k));
}

// Empty neighbourhood falls back to the quantile of all calibration scores.
inline std::vector<IntervalPrediction> predict_intervals_ccp_nn(const NnCalibration& c,
                                                                std::span<const PairQuery> queries,
                                                                const DrugBits& drug_bits,
                                                                const ProteinBits& protein_bits) {
    std::map<DrugId, NeighborSet<EntityKind::Drug>> drug_nn;
    std::map<ProteinId, NeighborSet<EntityKind::Protein>> protein_nn;
    std::optional<QuantileThreshold> global;
    std::vector<IntervalPrediction> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        auto dit = drug_nn.find(q.drug);
        if (dit == drug_nn.end()) {
            const auto* b = drug_bits.find(q.drug);
            if (!b) throw ValidationError("missing binary profile for test drug '" + q.drug.token + "'");
            dit = drug_nn.emplace(q.drug, top_k_neighbors(q.drug, *b, c.drug_bits, c.k)).first;
        }
        auto pit = protein_nn.find(q.protein);
        if (pit == protein_nn.end()) {
            const auto* b = protein_bits.find(q.protein);
            if (!b) throw ValidationError("missing binary profile for test protein '" + q.protein.token + "'");
            pit = protein_nn.emplace(q.protein, top_k_neighbors(q.protein, *b, c.protein_bits, c.k)).first;
        }
        const auto local = nn_local_scores(c, dit->second, pit->second);
        QuantileThreshold t;
        if (local.empty()) {
            if (!global) global = quantile_of(c.scores, c.alpha);
            t = *global;
        } else {
            t = quantile_of(local, c.alpha);
        }
        out.push_back({mcp_interval(q.prediction, t), t});
    }
    return out;
}

} // namespace dticp
