#pragma once
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace dticp {

// ============================================================================
// ECDF percentile embeddings
// ============================================================================
// {100/steps, 200/steps, ...} excluding 0 and 100; steps = 10 gives the nine deciles.
inline std::vector<double> percentile_grid(std::size_t steps = 10) {
    if (steps < 2) throw ConfigError("percentile grid needs at least 2 steps");
    std::vector<double> out;
    for (std::size_t i = 1; i < steps; ++i) out.push_back(100.0 * static_cast<double>(i) / static_cast<double>(steps));
    return out;
}

// Linear interpolation between closest ranks, zero-based rank p/100 * (n-1).
inline double percentile_linear(std::span<const double> sorted, double p) {
    const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    if (frac == 0.0 || lo == hi) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct EcdfEmbedding {
    std::vector<double> values;
};

inline EcdfEmbedding ecdf_embedding(std::span<const double> scores, std::span<const double> percentiles) {
    if (scores.empty()) throw DegenerateInputError("ECDF embedding of an empty score multiset");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    EcdfEmbedding e;
    e.values.reserve(percentiles.size());
    for (double p : percentiles) e.values.push_back(percentile_linear(sorted, p));
    return e;
}

inline EcdfEmbedding ecdf_embedding(std::span<const double> scores) {
    static const std::vector<double> deciles = percentile_grid(10);
    return ecdf_embedding(scores, deciles);
}

// ============================================================================
// k-means
// ============================================================================
struct KMeansModel {
    std::size_t k = 0;            // effective number of clusters
    std::size_t requested_k = 0;  // differs from k when there were fewer distinct points
    std::vector<std::vector<double>> centroids;
    std::uint64_t seed = 0;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::vector<double> inertia_trace;  // inertia after each assignment step
    std::vector<std::size_t> labels;    // final training partition

    std::size_t dimension() const { return centroids.empty() ? 0 : centroids.front().size(); }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

namespace detail {

// Nearest centroid; ties go to the lowest index.
inline std::size_t nearest(const std::vector<std::vector<double>>& centroids, std::span<const double> p, double* dist) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(p, centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (dist) *dist = best_d;
    return best;
}

inline std::size_t count_distinct(const std::vector<std::vector<double>>& points) {
    std::vector<const std::vector<double>*> ptrs;
    for (const auto& p : points) ptrs.push_back(&p);
    std::sort(ptrs.begin(), ptrs.end(), [](auto* a, auto* b) { return *a < *b; });
    return static_cast<std::size_t>(
        std::unique(ptrs.begin(), ptrs.end(), [](auto* a, auto* b) { return *a == *b; }) - ptrs.begin());
}

} // namespace detail

inline std::size_t kmeans_assign(const KMeansModel& model, std::span<const double> point) {
    if (point.size() != model.dimension()) {
        throw ValidationError("k-means point dimension " + std::to_string(point.size()) + " does not match model " +
                              std::to_string(model.dimension()));
    }
    return detail::nearest(model.centroids, point, nullptr);
}

// k-means++ seeding, then Lloyd iterations until the assignment stops
// changing or max_iter is reached. An empty cluster is moved onto the point
// that is farthest from its current centroid.
inline KMeansModel kmeans_fit(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                              std::size_t max_iter = 300) {
    if (k == 0) throw ConfigError("k-means needs k >= 1");
    if (points.empty()) throw DegenerateInputError("k-means needs at least one point");
    const std::size_t dim = points.front().size();
    for (const auto& p : points) {
        if (p.size() != dim) throw ValidationError("k-means points have inconsistent dimensions");
        for (double x : p)
            if (!std::isfinite(x)) throw ValidationError("k-means point has a non-finite coordinate");
    }
    const std::size_t n = points.size();

    KMeansModel m;
    m.requested_k = k;
    m.k = std::min(k, detail::count_distinct(points));
    m.seed = seed;

    Rng rng(seed);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    m.centroids.push_back(points[static_cast<std::size_t>(rng.below(n))]);
    while (m.centroids.size() < m.k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points[i], m.centroids.back()));
            total += d2[i];
        }
        const double target = rng.uniform01() * total;
        double cum = 0.0;
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            cum += d2[i];
            if (d2[i] > 0.0 && cum > target) {
                pick = i;
                break;
            }
        }
        if (pick == n) {  // rounding pushed target past the last positive weight
            for (std::size_t i = n; i-- > 0;)
                if (d2[i] > 0.0) {
                    pick = i;
                    break;
                }
        }
        m.centroids.push_back(points[pick]);
    }

    std::vector<std::size_t> labels(n, 0);
    std::vector<double> dist(n, 0.0);
    auto assign = [&] {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = detail::nearest(m.centroids, points[i], &dist[i]);
            changed |= c != labels[i];
            labels[i] = c;
            inertia += dist[i];
        }
        m.inertia_trace.push_back(inertia);
        m.inertia = inertia;
        return changed;
    };
    auto update = [&] {
        std::vector<std::vector<double>> sums(m.k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(m.k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[labels[i]];
            for (std::size_t j = 0; j < dim; ++j) sums[labels[i]][j] += points[i][j];
        }
        std::vector<char> taken(n, 0);
        for (std::size_t c = 0; c < m.k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t j = 0; j < dim; ++j) m.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i] && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            taken[far] = 1;
            m.centroids[c] = points[far];
        }
    };

    // Every pass ends with an assignment, so labels are always nearest to the
    // final centroids.
    assign();
    for (m.iterations = 0; m.iterations < max_iter;) {
        update();
        ++m.iterations;
        if (!assign()) break;
    }
    m.labels = std::move(labels);
    return m;
}

// ============================================================================
// Binary profiles and Tanimoto similarity
// ============================================================================
class BitProfile {
public:
    BitProfile() = default;
    explicit BitProfile(std::size_t size) : size_(size), words_((size + 63) / 64, 0) {}

    template <class Range>
    static BitProfile from_bits(const Range& bits) {
        BitProfile b(static_cast<std::size_t>(std::size(bits)));
        std::size_t i = 0;
        for (auto v : bits) b.set(i++, static_cast<bool>(v));
        return b;
    }

    std::size_t size() const noexcept { return size_; }
    bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1ULL; }
    void set(std::size_t i, bool v) {
        const std::uint64_t mask = 1ULL << (i % 64);
        words_[i / 64] = v ? (words_[i / 64] | mask) : (words_[i / 64] & ~mask);
    }
    std::size_t count() const {
        std::size_t c = 0;
        for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
        return c;
    }
    const std::vector<std::uint64_t>& words() const noexcept { return words_; }

    friend bool operator==(const BitProfile&, const BitProfile&) = default;

private:
    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

// |a and b| / |a or b|; two all-zero profiles count as identical (1.0).
inline double tanimoto(const BitProfile& a, const BitProfile& b) {
    if (a.size() != b.size()) throw ValidationError("Tanimoto on profiles of different lengths");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.words().size(); ++i) {
        inter += static_cast<std::size_t>(std::popcount(a.words()[i] & b.words()[i]));
        uni += static_cast<std::size_t>(std::popcount(a.words()[i] | b.words()[i]));
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <EntityKind K>
struct BinaryFeatureTable {
    std::size_t dimension = 0;
    std::map<EntityId<K>, BitProfile> profiles;

    const BitProfile* find(const EntityId<K>& id) const {
        auto it = profiles.find(id);
        return it == profiles.end() ? nullptr : &it->second;
    }
};

using DrugBits = BinaryFeatureTable<EntityKind::Drug>;
using ProteinBits = BinaryFeatureTable<EntityKind::Protein>;

// Per feature, 1 where the value exceeds the median across entities.
template <EntityKind K>
BinaryFeatureTable<K> binarize_features(const FeatureTable<K>& features) {
    BinaryFeatureTable<K> out;
    out.dimension = features.dimension();
    const std::size_t n = features.size();
    std::vector<double> median(out.dimension, 0.0);
    std::vector<double> column(n);
    for (std::size_t j = 0; j < out.dimension; ++j) {
        std::size_t i = 0;
        for (const auto& [_, v] : features.vectors()) column[i++] = v[j];
        std::sort(column.begin(), column.end());
        median[j] = n == 0 ? 0.0
                    : n % 2 ? column[n / 2]
                            : column[n / 2 - 1] + (column[n / 2] - column[n / 2 - 1]) / 2.0;
    }
    for (const auto& [id, v] : features.vectors()) {
        BitProfile b(out.dimension);
        for (std::size_t j = 0; j < out.dimension; ++j) b.set(j, v[j] > median[j]);
        out.profiles.emplace(id, std::move(b));
    }
    return out;
}

// Profiles as a 0/1 feature table (for re-binarizing or writing out).
template <EntityKind K>
FeatureTable<K> to_feature_table(const BinaryFeatureTable<K>& bits) {
    FeatureTable<K> out(std::max<std::size_t>(bits.dimension, 1));
    for (const auto& [id, b] : bits.profiles) {
        std::vector<double> v(bits.dimension);
        for (std::size_t j = 0; j < bits.dimension; ++j) v[j] = b.test(j) ? 1.0 : 0.0;
        out.insert(id, std::move(v));
    }
    return out;
}

// ============================================================================
// Nearest neighbours
// ============================================================================
template <EntityKind K>
struct NeighborSet {
    EntityId<K> query;
    std::vector<std::pair<EntityId<K>, double>> neighbors;
};

// Candidates ordered by (similarity desc, id asc); first min(k, n) kept.
// The query itself is not excluded.
template <EntityKind K>
NeighborSet<K> top_k_neighbors(const EntityId<K>& query_id, const BitProfile& query,
                               const std::map<EntityId<K>, BitProfile>& candidates, std::size_t k = 20) {
    if (k == 0) throw ConfigError("neighbour count must be positive");
    NeighborSet<K> out{query_id, {}};
    out.neighbors.reserve(candidates.size());
    for (const auto& [id, bits] : candidates) out.neighbors.emplace_back(id, tanimoto(query, bits));
    // `candidates` iterates in id order, so a stable sort by similarity keeps ids ascending on ties.
    std::stable_sort(out.neighbors.begin(), out.neighbors.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (out.neighbors.size() > k) out.neighbors.resize(k);
    return out;
}

} // namespace dticp
