#pragma once
#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"

namespace dticp {

// ============================================================================
// Entities
// ============================================================================
enum class EntityKind { Drug, Protein };

inline const char* to_string(EntityKind k) { return k == EntityKind::Drug ? "drug" : "protein"; }

// Opaque identifier tagged with its side of the bipartite graph, so a drug id
// can never be looked up in a protein index.
template <EntityKind K>
struct EntityId {
    static constexpr EntityKind kind = K;
    std::string token;

    EntityId() = default;
    explicit EntityId(std::string t) : token(std::move(t)) {
        if (token.empty()) throw ValidationError(std::string("empty ") + to_string(K) + " id");
    }

    friend bool operator==(const EntityId&, const EntityId&) = default;
    friend auto operator<=>(const EntityId&, const EntityId&) = default;
};

using DrugId = EntityId<EntityKind::Drug>;
using ProteinId = EntityId<EntityKind::Protein>;

struct InteractionRecord {
    DrugId drug;
    ProteinId protein;
    double label = 0.0;
    std::optional<double> prediction;
};

// ============================================================================
// InteractionTable
// ============================================================================
// Immutable after construction. Row order is the order records were given in.
class InteractionTable {
public:
    InteractionTable() = default;

    explicit InteractionTable(std::vector<InteractionRecord> records) : records_(std::move(records)) {
        std::map<std::pair<std::string, std::string>, std::size_t> seen;
        std::string dupes;
        std::size_t n_dupes = 0;
        for (std::size_t i = 0; i < records_.size(); ++i) {
            const auto& r = records_[i];
            if (r.drug.token.empty() || r.protein.token.empty())
                throw ValidationError("row " + std::to_string(i) + ": empty entity id");
            if (!std::isfinite(r.label))
                throw ValidationError("row " + std::to_string(i) + ": non-finite label");
            if (r.prediction && !std::isfinite(*r.prediction))
                throw ValidationError("row " + std::to_string(i) + ": non-finite prediction");
            auto [it, inserted] = seen.emplace(std::make_pair(r.drug.token, r.protein.token), i);
            if (!inserted) {
                if (n_dupes < 10) {
                    dupes += " (" + r.drug.token + ", " + r.protein.token + ") at rows " +
                             std::to_string(it->second) + " and " + std::to_string(i) + ";";
                }
                ++n_dupes;
            }
            drug_index_[r.drug].push_back(i);
            protein_index_[r.protein].push_back(i);
        }
        if (n_dupes > 0) {
            throw ValidationError("duplicate (drug, protein) pairs [" + std::to_string(n_dupes) +
                                  "]:" + dupes);
        }
    }

    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    const InteractionRecord& operator[](std::size_t i) const { return records_[i]; }
    const std::vector<InteractionRecord>& records() const noexcept { return records_; }

    std::span<const std::size_t> drug_rows(const DrugId& d) const {
        auto it = drug_index_.find(d);
        return it == drug_index_.end() ? std::span<const std::size_t>{} : std::span(it->second);
    }
    std::span<const std::size_t> protein_rows(const ProteinId& p) const {
        auto it = protein_index_.find(p);
        return it == protein_index_.end() ? std::span<const std::size_t>{} : std::span(it->second);
    }
    const std::map<DrugId, std::vector<std::size_t>>& drug_index() const noexcept { return drug_index_; }
    const std::map<ProteinId, std::vector<std::size_t>>& protein_index() const noexcept {
        return protein_index_;
    }

    // Unique ids in ascending token order.
    std::vector<DrugId> drugs() const {
        std::vector<DrugId> out;
        out.reserve(drug_index_.size());
        for (const auto& [d, _] : drug_index_) out.push_back(d);
        return out;
    }
    std::vector<ProteinId> proteins() const {
        std::vector<ProteinId> out;
        out.reserve(protein_index_.size());
        for (const auto& [p, _] : protein_index_) out.push_back(p);
        return out;
    }

    bool has_any_prediction() const {
        return std::any_of(records_.begin(), records_.end(), [](const auto& r) { return r.prediction.has_value(); });
    }

    // Copy with the prediction column replaced.
    InteractionTable with_predictions(std::span<const std::optional<double>> preds) const {
        if (preds.size() != records_.size())
            throw ValidationError("prediction count does not match table size");
        auto recs = records_;
        for (std::size_t i = 0; i < recs.size(); ++i) recs[i].prediction = preds[i];
        return InteractionTable(std::move(recs));
    }

    InteractionTable with_labels(std::span<const double> labels) const {
        if (labels.size() != records_.size()) throw ValidationError("label count does not match table size");
        auto recs = records_;
        for (std::size_t i = 0; i < recs.size(); ++i) recs[i].label = labels[i];
        return InteractionTable(std::move(recs));
    }

private:
    std::vector<InteractionRecord> records_;
    std::map<DrugId, std::vector<std::size_t>> drug_index_;
    std::map<ProteinId, std::vector<std::size_t>> protein_index_;
};

// ============================================================================
// FeatureTable
// ============================================================================
template <EntityKind K>
class FeatureTable {
public:
    using Id = EntityId<K>;

    FeatureTable() = default;
    explicit FeatureTable(std::size_t dimension) : dimension_(dimension) {
        if (dimension == 0) throw ValidationError("feature dimension must be positive");
    }

    void insert(Id id, std::vector<double> v) {
        if (v.size() != dimension_) {
            throw ValidationError(std::string(to_string(K)) + " '" + id.token + "': feature vector has length " +
                                  std::to_string(v.size()) + ", expected " + std::to_string(dimension_));
        }
        for (double x : v)
            if (!std::isfinite(x)) throw ValidationError("non-finite feature for '" + id.token + "'");
        if (!vectors_.emplace(std::move(id), std::move(v)).second)
            throw ValidationError("duplicate feature row");
    }

    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return vectors_.size(); }
    const std::map<Id, std::vector<double>>& vectors() const noexcept { return vectors_; }

    const std::vector<double>* find(const Id& id) const {
        auto it = vectors_.find(id);
        return it == vectors_.end() ? nullptr : &it->second;
    }
    const std::vector<double>& at(const Id& id) const {
        if (auto* v = find(id)) return *v;
        throw ValidationError(std::string("missing feature vector for ") + to_string(K) + " '" + id.token + "'");
    }

private:
    std::size_t dimension_ = 0;
    std::map<Id, std::vector<double>> vectors_;
};

using DrugFeatures = FeatureTable<EntityKind::Drug>;
using ProteinFeatures = FeatureTable<EntityKind::Protein>;

// Every entity of the table on side K must carry a feature vector.
template <EntityKind K>
void require_features(const InteractionTable& table, const FeatureTable<K>& features) {
    std::string missing;
    std::size_t n = 0;
    auto check = [&](const std::string& tok) {
        if (!features.find(EntityId<K>(tok))) {
            if (n < 10) missing += " '" + tok + "'";
            ++n;
        }
    };
    if constexpr (K == EntityKind::Drug) {
        for (const auto& [d, _] : table.drug_index()) check(d.token);
    } else {
        for (const auto& [p, _] : table.protein_index()) check(p.token);
    }
    if (n > 0) {
        throw ValidationError(std::string("missing feature vectors for ") + std::to_string(n) + " " +
                              to_string(K) + "(s):" + missing);
    }
}

// ============================================================================
// Label transforms
// ============================================================================
enum class TransformKind { NegLog10OverGiga, BoxCox, Identity };

struct TransformSpec {
    TransformKind kind = TransformKind::Identity;
    std::optional<double> lambda;
};

inline double transform_affinity(double kd, const TransformSpec& spec) {
    if (!(kd > 0.0) || !std::isfinite(kd)) throw DomainError("affinity must be a positive finite value");
    switch (spec.kind) {
        case TransformKind::NegLog10OverGiga:
            return -std::log10(kd / 1e9);
        case TransformKind::Identity:
            return kd;
        case TransformKind::BoxCox: {
            if (!spec.lambda || !std::isfinite(*spec.lambda)) throw ConfigError("Box-Cox lambda must be finite");
            const double lambda = *spec.lambda;
            if (lambda == 0.0) return std::log(kd);
            if (lambda == 1.0) return kd - 1.0;
            return std::expm1(lambda * std::log(kd)) / lambda;
        }
    }
    throw ConfigError("unknown transform");
}

// Profile log-likelihood of the Box-Cox model at lambda (constants dropped).
inline double boxcox_log_likelihood(std::span<const double> values, double lambda) {
    const TransformSpec spec{TransformKind::BoxCox, lambda};
    const double n = static_cast<double>(values.size());
    double mean = 0.0, sum_log = 0.0;
    std::vector<double> t(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        t[i] = transform_affinity(values[i], spec);
        mean += t[i];
        sum_log += std::log(values[i]);
    }
    mean /= n;
    double var = 0.0;
    for (double x : t) var += (x - mean) * (x - mean);
    var /= n;
    return -0.5 * n * std::log(var) + (lambda - 1.0) * sum_log;
}

// Maximum-likelihood lambda by golden-section search on [-5, 5].
inline double fit_boxcox_lambda(std::span<const double> values, double lo = -5.0, double hi = 5.0,
                                double tol = 1e-4) {
    for (double v : values)
        if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("Box-Cox requires positive finite values");
    {
        std::vector<double> sorted(values.begin(), values.end());
        std::sort(sorted.begin(), sorted.end());
        if (std::unique(sorted.begin(), sorted.end()) - sorted.begin() < 2)
            throw DegenerateInputError("Box-Cox fit needs at least 2 distinct values");
    }
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = boxcox_log_likelihood(values, c);
    double fd = boxcox_log_likelihood(values, d);
    while (b - a > tol) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = boxcox_log_likelihood(values, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = boxcox_log_likelihood(values, d);
        }
    }
    return 0.5 * (a + b);
}

// ============================================================================
// CSV primitives
// ============================================================================
// Shortest text that parses back to the same double; locale independent.
// "inf" / "-inf" for infinities.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view context) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ValidationError(std::string(context) + ": cannot parse number '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

// Reads lines, strips a UTF-8 BOM on the first line and trailing CRs.
inline bool read_csv_line(std::istream& in, std::string& line, bool first) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    return true;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

// ============================================================================
// Interactions CSV: drug_id,protein_id,label[,prediction]
// ============================================================================
inline InteractionTable read_interactions(std::istream& in, std::string_view source = "<stream>") {
    std::string line;
    if (!read_csv_line(in, line, true)) throw ValidationError(std::string(source) + ": missing header");
    bool with_pred = false;
    if (line == "drug_id,protein_id,label,prediction") {
        with_pred = true;
    } else if (line != "drug_id,protein_id,label") {
        throw ValidationError(std::string(source) + ": unexpected header '" + line + "'");
    }
    std::vector<InteractionRecord> records;
    std::size_t lineno = 1;
    while (read_csv_line(in, line, false)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const std::size_t expected = with_pred ? 4 : 3;
        const std::string ctx = std::string(source) + ":" + std::to_string(lineno);
        if (f.size() != expected)
            throw ValidationError(ctx + ": expected " + std::to_string(expected) + " fields");
        InteractionRecord r;
        r.drug = DrugId(f[0]);
        r.protein = ProteinId(f[1]);
        r.label = parse_double(f[2], ctx);
        if (with_pred && !f[3].empty()) r.prediction = parse_double(f[3], ctx);
        records.push_back(std::move(r));
    }
    return InteractionTable(std::move(records));
}

inline InteractionTable load_interactions(const std::string& path) {
    auto in = open_input(path);
    return read_interactions(in, path);
}

inline void write_interactions(const InteractionTable& table, std::ostream& out) {
    const bool with_pred = table.has_any_prediction();
    out << (with_pred ? "drug_id,protein_id,label,prediction\n" : "drug_id,protein_id,label\n");
    for (const auto& r : table.records()) {
        out << r.drug.token << ',' << r.protein.token << ',' << format_double(r.label);
        if (with_pred) {
            out << ',';
            if (r.prediction) out << format_double(*r.prediction);
        }
        out << '\n';
    }
}

inline void write_table(const InteractionTable& table, const std::string& path) {
    auto out = open_output(path);
    write_interactions(table, out);
    if (!out) throw IoError("write failed for '" + path + "'");
}

// ============================================================================
// Features CSV: entity_id,f0,...,f{d-1}
// ============================================================================
template <EntityKind K>
FeatureTable<K> read_features(std::istream& in, std::string_view source = "<stream>") {
    std::string line;
    if (!read_csv_line(in, line, true)) throw ValidationError(std::string(source) + ": missing header");
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "entity_id")
        throw ValidationError(std::string(source) + ": header must be entity_id,f0,...");
    for (std::size_t j = 1; j < header.size(); ++j) {
        if (header[j] != "f" + std::to_string(j - 1))
            throw ValidationError(std::string(source) + ": unexpected feature column '" + header[j] + "'");
    }
    FeatureTable<K> table(header.size() - 1);
    std::size_t lineno = 1;
    while (read_csv_line(in, line, false)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const std::string ctx = std::string(source) + ":" + std::to_string(lineno);
        if (f.size() != header.size())
            throw ValidationError(ctx + ": expected " + std::to_string(header.size()) + " fields");
        std::vector<double> v(f.size() - 1);
        for (std::size_t j = 1; j < f.size(); ++j) v[j - 1] = parse_double(f[j], ctx);
        table.insert(EntityId<K>(f[0]), std::move(v));
    }
    return table;
}

template <EntityKind K>
FeatureTable<K> load_features(const std::string& path) {
    auto in = open_input(path);
    return read_features<K>(in, path);
}

template <EntityKind K>
void write_features(const FeatureTable<K>& table, std::ostream& out) {
    out << "entity_id";
    for (std::size_t j = 0; j < table.dimension(); ++j) out << ",f" << j;
    out << '\n';
    for (const auto& [id, v] : table.vectors()) {
        out << id.token;
        for (double x : v) out << ',' << format_double(x);
        out << '\n';
    }
}

template <EntityKind K>
void write_features(const FeatureTable<K>& table, const std::string& path) {
    auto out = open_output(path);
    write_features(table, out);
    if (!out) throw IoError("write failed for '" + path + "'");
}

// ============================================================================
// Row index files: one index per line
// ============================================================================
inline void write_row_indices(std::span<const std::size_t> rows, const std::string& path) {
    auto out = open_output(path);
    for (auto r : rows) out << r << '\n';
}

inline std::vector<std::size_t> load_row_indices(const std::string& path) {
    auto in = open_input(path);
    std::vector<std::size_t> rows;
    std::string line;
    bool first = true;
    while (read_csv_line(in, line, first)) {
        first = false;
        if (line.empty()) continue;
        std::size_t v = 0;
        auto res = std::from_chars(line.data(), line.data() + line.size(), v);
        if (res.ec != std::errc{} || res.ptr != line.data() + line.size())
            throw ValidationError(path + ": bad row index '" + line + "'");
        rows.push_back(v);
    }
    return rows;
}

} // namespace dticp
