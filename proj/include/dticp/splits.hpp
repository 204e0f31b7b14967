#pragma once
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace dticp {

enum class SplitKind { Random, ColdDrug, ColdProtein, DoubleCold };

inline const char* to_string(SplitKind k) {
    switch (k) {
        case SplitKind::Random: return "Random";
        case SplitKind::ColdDrug: return "ColdDrug";
        case SplitKind::ColdProtein: return "ColdProtein";
        case SplitKind::DoubleCold: return "DoubleCold";
    }
    return "?";
}

inline SplitKind parse_split_kind(const std::string& s) {
    for (auto k : {SplitKind::Random, SplitKind::ColdDrug, SplitKind::ColdProtein, SplitKind::DoubleCold})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown split strategy '" + s + "' (Random, ColdDrug, ColdProtein, DoubleCold)");
}

struct SplitStrategy {
    SplitKind kind = SplitKind::Random;
    std::uint64_t seed = 0;
};

// Row index sets are sorted ascending. `discarded` counts DoubleCold rows that
// mix a training entity with a held-out one.
struct SplitResult {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> cal_rows;
    std::vector<std::size_t> test_rows;
    SplitStrategy strategy;
    std::size_t discarded = 0;
};

namespace detail {

// Shuffled pool -> (first floor(n/2), then cal gets ceil of the rest, test the floor).
template <class T>
void halve_pool(const std::vector<T>& shuffled, std::vector<T>& cal, std::vector<T>& test) {
    const std::size_t n_cal = (shuffled.size() + 1) / 2;
    cal.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_cal));
    test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_cal), shuffled.end());
}

inline void sort_sets(SplitResult& r) {
    std::sort(r.train_rows.begin(), r.train_rows.end());
    std::sort(r.cal_rows.begin(), r.cal_rows.end());
    std::sort(r.test_rows.begin(), r.test_rows.end());
}

} // namespace detail

inline SplitResult split_random(const InteractionTable& table, std::uint64_t seed) {
    const std::size_t n = table.size();
    if (n < 4) throw DegenerateInputError("random split needs at least 4 rows, got " + std::to_string(n));
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    Rng rng(seed);
    rng.shuffle(rows);

    SplitResult out;
    out.strategy = {SplitKind::Random, seed};
    const std::size_t n_train = n / 2;
    out.train_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> pool(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
    detail::halve_pool(pool, out.cal_rows, out.test_rows);
    detail::sort_sets(out);
    return out;
}

inline SplitResult split_cold_entity(const InteractionTable& table, EntityKind kind, std::uint64_t seed) {
    // Entities in ascending token order, then shuffled; keeps the Drug and
    // Protein variants mirror images of each other under transposition.
    std::vector<const std::vector<std::size_t>*> entity_rows;
    if (kind == EntityKind::Drug) {
        for (const auto& [_, rows] : table.drug_index()) entity_rows.push_back(&rows);
    } else {
        for (const auto& [_, rows] : table.protein_index()) entity_rows.push_back(&rows);
    }
    const std::size_t m = entity_rows.size();
    if (m < 4) {
        throw DegenerateInputError(std::string("cold split needs at least 4 unique ") + to_string(kind) +
                                   "s, got " + std::to_string(m));
    }
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const std::size_t n_train = m / 2;
    std::vector<std::size_t> held(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::vector<std::size_t> cal_entities, test_entities;
    detail::halve_pool(held, cal_entities, test_entities);

    SplitResult out;
    out.strategy = {kind == EntityKind::Drug ? SplitKind::ColdDrug : SplitKind::ColdProtein, seed};
    for (std::size_t i = 0; i < n_train; ++i)
        for (auto r : *entity_rows[order[i]]) out.train_rows.push_back(r);
    for (auto e : cal_entities)
        for (auto r : *entity_rows[e]) out.cal_rows.push_back(r);
    for (auto e : test_entities)
        for (auto r : *entity_rows[e]) out.test_rows.push_back(r);
    detail::sort_sets(out);
    return out;
}

struct DoubleColdPartition {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> held_rows;
    std::size_t discarded = 0;
};

// Rows with both entities in the train pools train; rows with neither are
// held out; mixed rows are discarded.
inline DoubleColdPartition double_cold_partition(const InteractionTable& table,
                                                 const std::map<DrugId, bool>& drug_in_train,
                                                 const std::map<ProteinId, bool>& protein_in_train) {
    DoubleColdPartition out;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const bool d = drug_in_train.at(table[i].drug);
        const bool p = protein_in_train.at(table[i].protein);
        if (d && p) {
            out.train_rows.push_back(i);
        } else if (!d && !p) {
            out.held_rows.push_back(i);
        } else {
            ++out.discarded;
        }
    }
    return out;
}

inline SplitResult split_double_cold(const InteractionTable& table, std::uint64_t seed) {
    const auto drugs = table.drugs();
    const auto proteins = table.proteins();
    if (drugs.size() < 4 || proteins.size() < 4) {
        throw DegenerateInputError("double-cold split needs at least 4 unique drugs and 4 unique proteins");
    }
    Rng rng(seed);
    std::vector<std::size_t> drug_order(drugs.size()), protein_order(proteins.size());
    for (std::size_t i = 0; i < drug_order.size(); ++i) drug_order[i] = i;
    for (std::size_t i = 0; i < protein_order.size(); ++i) protein_order[i] = i;
    rng.shuffle(drug_order);
    rng.shuffle(protein_order);

    std::map<DrugId, bool> drug_in_train;
    std::map<ProteinId, bool> protein_in_train;
    for (std::size_t i = 0; i < drug_order.size(); ++i) drug_in_train[drugs[drug_order[i]]] = i < drugs.size() / 2;
    for (std::size_t i = 0; i < protein_order.size(); ++i)
        protein_in_train[proteins[protein_order[i]]] = i < proteins.size() / 2;

    SplitResult out;
    out.strategy = {SplitKind::DoubleCold, seed};
    auto part = double_cold_partition(table, drug_in_train, protein_in_train);
    out.train_rows = std::move(part.train_rows);
    out.discarded = part.discarded;
    auto& held = part.held_rows;
    if (out.train_rows.empty() || held.size() < 2) {
        throw InfeasibleSplitError("double-cold split with seed " + std::to_string(seed) + " leaves " +
                                   std::to_string(out.train_rows.size()) + " train and " +
                                   std::to_string(held.size()) + " held-out rows; try another seed");
    }
    rng.shuffle(held);
    detail::halve_pool(held, out.cal_rows, out.test_rows);
    detail::sort_sets(out);
    return out;
}

inline SplitResult make_split(const InteractionTable& table, SplitStrategy s) {
    switch (s.kind) {
        case SplitKind::Random: return split_random(table, s.seed);
        case SplitKind::ColdDrug: return split_cold_entity(table, EntityKind::Drug, s.seed);
        case SplitKind::ColdProtein: return split_cold_entity(table, EntityKind::Protein, s.seed);
        case SplitKind::DoubleCold: return split_double_cold(table, s.seed);
    }
    throw ConfigError("unknown split strategy");
}

} // namespace dticp
