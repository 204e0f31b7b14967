#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace dticp {

struct NoiseCluster {
    double fraction = 1.0;
    double scale = 1.0;
};

// Bipartite stand-in for a drug-target affinity benchmark:
//   label(d, t) = <u_d, v_t> + eps,  eps ~ Normal(0, (s_d * s_t)^2)
// where s_d, s_t are the noise scales of the entities' noise clusters.
// Features are the latent vector plus `feature_noise` Gaussian jitter, padded
// with independent standard-normal columns up to the feature dimension.
struct SyntheticSpec {
    std::size_t n_drugs = 60;
    std::size_t n_proteins = 40;
    double density = 1.0;
    std::size_t latent_dim = 4;
    std::vector<NoiseCluster> drug_noise_clusters{{1.0, 1.0}};
    std::vector<NoiseCluster> protein_noise_clusters{{1.0, 1.0}};
    std::size_t feature_dim_drug = 8;
    std::size_t feature_dim_protein = 8;
    double feature_noise = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_drugs == 0 || n_proteins == 0) throw ConfigError("entity counts must be positive");
        if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0, 1]");
        if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
        if (feature_dim_drug < latent_dim || feature_dim_protein < latent_dim)
            throw ConfigError("feature dimensions must be at least latent_dim");
        if (!(feature_noise >= 0.0)) throw ConfigError("feature_noise must be non-negative");
        for (const auto* side : {&drug_noise_clusters, &protein_noise_clusters}) {
            if (side->empty()) throw ConfigError("at least one noise cluster per side");
            double total = 0.0;
            for (const auto& c : *side) {
                if (!(c.fraction > 0.0)) throw ConfigError("noise cluster fractions must be positive");
                if (!(c.scale >= 0.0) || !std::isfinite(c.scale))
                    throw ConfigError("noise scales must be finite and non-negative");
                total += c.fraction;
            }
            if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("noise cluster fractions must sum to 1");
        }
    }
};

struct SyntheticData {
    InteractionTable table;
    DrugFeatures drug_features;
    ProteinFeatures protein_features;
    std::vector<std::size_t> drug_noise_group;     // by drug index (ascending id)
    std::vector<std::size_t> protein_noise_group;  // by protein index
    std::vector<DrugId> drug_ids;
    std::vector<ProteinId> protein_ids;
};

namespace detail {

// Largest-remainder counts per cluster, then a seeded shuffle of the labels.
inline std::vector<std::size_t> assign_noise_groups(std::size_t n, const std::vector<NoiseCluster>& clusters, Rng& rng) {
    std::vector<std::size_t> counts(clusters.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        const double exact = clusters[c].fraction * static_cast<double>(n);
        counts[c] = static_cast<std::size_t>(std::floor(exact));
        used += counts[c];
        rem.emplace_back(-(exact - std::floor(exact)), c);
    }
    std::sort(rem.begin(), rem.end());
    for (std::size_t i = 0; used < n; ++i, ++used) ++counts[rem[i % rem.size()].second];
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], c);
    rng.shuffle(labels);
    return labels;
}

inline std::string padded_id(char prefix, std::size_t i, std::size_t n) {
    const std::size_t width = std::to_string(n > 0 ? n - 1 : 0).size();
    std::string digits = std::to_string(i);
    return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

} // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SyntheticData out;
    out.drug_noise_group = detail::assign_noise_groups(spec.n_drugs, spec.drug_noise_clusters, rng);
    out.protein_noise_group = detail::assign_noise_groups(spec.n_proteins, spec.protein_noise_clusters, rng);

    auto latent = [&](std::size_t n) {
        std::vector<std::vector<double>> z(n, std::vector<double>(spec.latent_dim));
        for (auto& v : z)
            for (auto& x : v) x = rng.normal();
        return z;
    };
    const auto u = latent(spec.n_drugs);
    const auto v = latent(spec.n_proteins);

    out.drug_features = DrugFeatures(spec.feature_dim_drug);
    out.protein_features = ProteinFeatures(spec.feature_dim_protein);
    auto features = [&](const std::vector<double>& z, std::size_t dim) {
        std::vector<double> f(dim);
        for (std::size_t j = 0; j < dim; ++j)
            f[j] = j < z.size() ? z[j] + spec.feature_noise * rng.normal() : rng.normal();
        return f;
    };
    for (std::size_t i = 0; i < spec.n_drugs; ++i) {
        out.drug_ids.emplace_back(detail::padded_id('D', i, spec.n_drugs));
        out.drug_features.insert(out.drug_ids.back(), features(u[i], spec.feature_dim_drug));
    }
    for (std::size_t j = 0; j < spec.n_proteins; ++j) {
        out.protein_ids.emplace_back(detail::padded_id('P', j, spec.n_proteins));
        out.protein_features.insert(out.protein_ids.back(), features(v[j], spec.feature_dim_protein));
    }

    std::vector<InteractionRecord> records;
    for (std::size_t i = 0; i < spec.n_drugs; ++i) {
        const double sd = spec.drug_noise_clusters[out.drug_noise_group[i]].scale;
        for (std::size_t j = 0; j < spec.n_proteins; ++j) {
            const bool keep = rng.uniform01() < spec.density;
            const double eps = rng.normal();
            if (!keep) continue;
            const double sp = spec.protein_noise_clusters[out.protein_noise_group[j]].scale;
            double signal = 0.0;
            for (std::size_t l = 0; l < spec.latent_dim; ++l) signal += u[i][l] * v[j][l];
            const double noise = sd * sp;
            records.push_back({out.drug_ids[i], out.protein_ids[j], noise == 0.0 ? signal : signal + noise * eps, {}});
        }
    }
    if (records.size() < 8) {
        throw DegenerateInputError("synthetic spec yields " + std::to_string(records.size()) +
                                   " interactions; at least 8 are required");
    }
    out.table = InteractionTable(std::move(records));
    return out;
}

} // namespace dticp
