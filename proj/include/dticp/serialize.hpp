#pragma once
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccp.hpp"
#include "clustering.hpp"
#include "conformal.hpp"
#include "core.hpp"
#include "evalx.hpp"
#include "methods.hpp"
#include "predictor.hpp"
#include "splits.hpp"

namespace dticp {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ============================================================================
// JSON primitives
// ============================================================================
// Non-finite doubles become the strings "inf" / "-inf" / "nan".
inline Json num(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline double num_of(const Json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return kInf;
        if (s == "-inf") return -kInf;
        if (s == "nan") return std::nan("");
    }
    throw ValidationError("expected a number, got " + j.dump());
}

inline const Json& field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("missing JSON field '") + key + "'");
    return j.at(key);
}

inline void check_header(const Json& j, const std::string& format) {
    if (field(j, "format").get<std::string>() != format)
        throw ValidationError("expected a " + format + " document, got " + j.at("format").dump());
    const int v = field(j, "version").get<int>();
    if (v != kFormatVersion) throw ValidationError(format + " version " + std::to_string(v) + " is not supported");
}

inline Json header(const std::string& format) { return Json{{"format", format}, {"version", kFormatVersion}}; }

inline Json read_json(const std::string& path) {
    auto in = open_input(path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline void write_json(const Json& j, const std::string& path) {
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline Json scores_json(std::span<const CalScore> s) {
    Json rows = Json::array(), values = Json::array();
    for (const auto& c : s) {
        rows.push_back(c.row);
        values.push_back(num(c.value));
    }
    return Json{{"rows", rows}, {"values", values}};
}

inline std::vector<CalScore> scores_from(const Json& j) {
    const auto& rows = field(j, "rows");
    const auto& values = field(j, "values");
    if (rows.size() != values.size()) throw ValidationError("score rows and values differ in length");
    std::vector<CalScore> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = {rows[i].get<std::size_t>(), num_of(values[i])};
    return out;
}

// ============================================================================
// GBM model
// ============================================================================
inline Json to_json(const GbmModel& m) {
    Json j = header("dticp.gbm");
    j["init"] = num(m.init_value);
    j["learning_rate"] = m.config.learning_rate;
    j["n_stages"] = m.config.n_stages;
    j["max_depth"] = m.config.max_depth;
    j["min_samples_leaf"] = m.config.min_samples_leaf;
    j["n_features"] = m.n_features;
    Json trees = Json::array();
    for (const auto& t : m.trees) {
        Json feature = Json::array(), threshold = Json::array(), left = Json::array(), right = Json::array(),
             value = Json::array();
        for (const auto& n : t.nodes) {
            feature.push_back(n.feature);
            threshold.push_back(num(n.threshold));
            left.push_back(n.left);
            right.push_back(n.right);
            value.push_back(num(n.value));
        }
        trees.push_back(
            Json{{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
    }
    j["trees"] = trees;
    return j;
}

inline GbmModel gbm_from_json(const Json& j) {
    check_header(j, "dticp.gbm");
    GbmModel m;
    m.init_value = num_of(field(j, "init"));
    m.config.learning_rate = field(j, "learning_rate").get<double>();
    m.config.n_stages = field(j, "n_stages").get<std::size_t>();
    m.config.max_depth = field(j, "max_depth").get<std::size_t>();
    m.config.min_samples_leaf = field(j, "min_samples_leaf").get<std::size_t>();
    m.n_features = field(j, "n_features").get<std::size_t>();
    for (const auto& t : field(j, "trees")) {
        RegressionTree tree;
        const auto& f = field(t, "feature");
        for (std::size_t i = 0; i < f.size(); ++i) {
            TreeNode n;
            n.feature = f[i].get<int>();
            n.threshold = num_of(t.at("threshold").at(i));
            n.left = t.at("left").at(i).get<int>();
            n.right = t.at("right").at(i).get<int>();
            n.value = num_of(t.at("value").at(i));
            const int sz = static_cast<int>(f.size());
            if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= sz || n.right >= sz ||
                                   static_cast<std::size_t>(n.feature) >= m.n_features))
                throw ValidationError("GBM tree node " + std::to_string(i) + " is malformed");
            tree.nodes.push_back(n);
        }
        if (tree.nodes.empty()) throw ValidationError("GBM tree without nodes");
        m.trees.push_back(std::move(tree));
    }
    return m;
}

// ============================================================================
// k-means
// ============================================================================
inline Json to_json(const KMeansModel& m) {
    Json j = header("dticp.kmeans");
    j["k"] = m.k;
    j["requested_k"] = m.requested_k;
    j["seed"] = m.seed;
    j["inertia"] = num(m.inertia);
    j["iterations"] = m.iterations;
    Json centroids = Json::array();
    for (const auto& c : m.centroids) {
        Json row = Json::array();
        for (double x : c) row.push_back(num(x));
        centroids.push_back(row);
    }
    j["centroids"] = centroids;
    j["labels"] = m.labels;
    Json trace = Json::array();
    for (double x : m.inertia_trace) trace.push_back(num(x));
    j["inertia_trace"] = trace;
    return j;
}

inline KMeansModel kmeans_from_json(const Json& j) {
    check_header(j, "dticp.kmeans");
    KMeansModel m;
    m.k = field(j, "k").get<std::size_t>();
    m.requested_k = field(j, "requested_k").get<std::size_t>();
    m.seed = field(j, "seed").get<std::uint64_t>();
    m.inertia = num_of(field(j, "inertia"));
    m.iterations = field(j, "iterations").get<std::size_t>();
    for (const auto& row : field(j, "centroids")) {
        std::vector<double> c;
        for (const auto& x : row) c.push_back(num_of(x));
        m.centroids.push_back(std::move(c));
    }
    if (m.centroids.size() != m.k) throw ValidationError("k-means centroid count differs from k");
    m.labels = field(j, "labels").get<std::vector<std::size_t>>();
    for (const auto& x : field(j, "inertia_trace")) m.inertia_trace.push_back(num_of(x));
    return m;
}

// ============================================================================
// Binary profiles as hex words (least significant word first)
// ============================================================================
inline std::string to_hex(const BitProfile& b) {
    std::string out;
    char buf[17];
    for (auto w : b.words()) {
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(w));
        out += buf;
    }
    return out;
}

inline BitProfile bits_from_hex(const std::string& hex, std::size_t size) {
    if (hex.size() != ((size + 63) / 64) * 16) throw ValidationError("bit profile hex length does not match its size");
    BitProfile b(size);
    for (std::size_t i = 0; i < size; ++i) {
        const std::size_t word = i / 64, bit = i % 64;
        const std::string chunk = hex.substr(word * 16, 16);
        const auto w = std::stoull(chunk, nullptr, 16);
        b.set(i, (w >> bit) & 1ULL);
    }
    return b;
}

template <EntityKind K>
Json bits_json(const std::map<EntityId<K>, BitProfile>& m) {
    Json j = Json::object();
    for (const auto& [id, b] : m) j[id.token] = Json{{"size", b.size()}, {"hex", to_hex(b)}};
    return j;
}

template <EntityKind K>
std::map<EntityId<K>, BitProfile> bits_from(const Json& j) {
    std::map<EntityId<K>, BitProfile> out;
    for (const auto& [id, v] : j.items())
        out.emplace(EntityId<K>(id), bits_from_hex(field(v, "hex").template get<std::string>(), field(v, "size").template get<std::size_t>()));
    return out;
}

// ============================================================================
// Calibration models
// ============================================================================
inline const char* to_string(ScoreKind k) {
    return k == ScoreKind::AbsoluteResidual ? "absolute" : "normalized";
}

inline ScoreKind parse_score_kind(const std::string& s) {
    if (s == "absolute") return ScoreKind::AbsoluteResidual;
    if (s == "normalized") return ScoreKind::NormalizedResidual;
    throw ValidationError("unknown score kind '" + s + "'");
}

inline Json ccp_config_json(const CcpConfig& c) {
    return Json{{"method", to_string(c.method)},
                {"gamma", c.gamma},
                {"n_clusters", c.n_clusters},
                {"n_neighbors", c.n_neighbors},
                {"alpha", c.alpha},
                {"seed", c.seed},
                {"allow_any_gamma", c.allow_any_gamma},
                {"pooling", c.pooling == ClusterPooling::Union ? "union" : "intersection"}};
}

inline CcpMethod parse_ccp_method(const std::string& s) {
    for (auto m : {CcpMethod::NC, CcpMethod::FC, CcpMethod::NN})
        if (s == to_string(m)) return m;
    throw ValidationError("unknown CCP method '" + s + "'");
}

inline ClusterPooling parse_pooling(const std::string& s) {
    if (s == "union") return ClusterPooling::Union;
    if (s == "intersection") return ClusterPooling::Intersection;
    throw ConfigError("unknown pooling '" + s + "' (union, intersection)");
}

inline CcpConfig ccp_config_from(const Json& j) {
    CcpConfig c;
    c.method = parse_ccp_method(field(j, "method").get<std::string>());
    c.gamma = field(j, "gamma").get<double>();
    c.n_clusters = field(j, "n_clusters").get<std::size_t>();
    c.n_neighbors = field(j, "n_neighbors").get<std::size_t>();
    c.alpha = field(j, "alpha").get<double>();
    c.seed = field(j, "seed").get<std::uint64_t>();
    c.allow_any_gamma = field(j, "allow_any_gamma").get<bool>();
    c.pooling = parse_pooling(field(j, "pooling").get<std::string>());
    return c;
}

template <class Id>
Json cluster_map_json(const std::map<Id, std::size_t>& m) {
    Json j = Json::object();
    for (const auto& [id, c] : m) j[id.token] = c;
    return j;
}

template <class Id>
std::map<Id, std::size_t> cluster_map_from(const Json& j) {
    std::map<Id, std::size_t> out;
    for (const auto& [id, c] : j.items()) out.emplace(Id(id), c.template get<std::size_t>());
    return out;
}

inline Json to_json(const Calibration& cal) {
    Json j = header("dticp.calibration");
    j["method"] = to_string(method_of(cal));
    j["alpha"] = alpha_of(cal);
    if (auto* m = std::get_if<MarginalCalibration>(&cal)) {
        j["score_kind"] = to_string(m->kind);
        j["scores"] = scores_json(m->scores);
        j["threshold"] = num(m->threshold.value);
    } else if (auto* g = std::get_if<GroupCalibration>(&cal)) {
        j["score_kind"] = to_string(g->kind);
        Json pd = Json::object(), pp = Json::object();
        for (const auto& [id, s] : g->per_drug) pd[id.token] = scores_json(s);
        for (const auto& [id, s] : g->per_protein) pp[id.token] = scores_json(s);
        j["per_drug"] = pd;
        j["per_protein"] = pp;
        j["global_scores"] = scores_json(g->global_scores);
    } else if (auto* c = std::get_if<CcpModel>(&cal)) {
        j["config"] = ccp_config_json(c->config);
        j["cluster_subset"] = c->subsets.cluster_subset;
        j["quantile_subset"] = c->subsets.quantile_subset;
        j["drug_cluster_of"] = cluster_map_json(c->drug_cluster_of);
        j["protein_cluster_of"] = cluster_map_json(c->protein_cluster_of);
        if (c->drug_kmeans) j["drug_kmeans"] = to_json(*c->drug_kmeans);
        if (c->protein_kmeans) j["protein_kmeans"] = to_json(*c->protein_kmeans);
        Json dc = Json::array(), pc = Json::array();
        for (const auto& s : c->drug_cluster_scores) dc.push_back(scores_json(s));
        for (const auto& s : c->protein_cluster_scores) pc.push_back(scores_json(s));
        j["drug_cluster_scores"] = dc;
        j["protein_cluster_scores"] = pc;
        j["global_scores"] = scores_json(c->global_scores);
    } else {
        const auto& n = std::get<NnCalibration>(cal);
        j["k"] = n.k;
        j["scores"] = scores_json(n.scores);
        Json d = Json::array(), p = Json::array();
        for (const auto& id : n.entry_drug_ids) d.push_back(id.token);
        for (const auto& id : n.entry_protein_ids) p.push_back(id.token);
        j["entry_drug_ids"] = d;
        j["entry_protein_ids"] = p;
        j["drug_bits"] = bits_json(n.drug_bits);
        j["protein_bits"] = bits_json(n.protein_bits);
    }
    return j;
}

inline Calibration calibration_from_json(const Json& j) {
    check_header(j, "dticp.calibration");
    const Method method = parse_method(field(j, "method").get<std::string>());
    const double alpha = field(j, "alpha").get<double>();
    check_alpha(alpha);
    switch (method) {
        case Method::MCP: {
            MarginalCalibration m;
            m.alpha = alpha;
            m.kind = parse_score_kind(field(j, "score_kind").get<std::string>());
            m.scores = scores_from(field(j, "scores"));
            m.threshold = quantile_of(m.scores, alpha);
            return m;
        }
        case Method::GCP: {
            GroupCalibration g;
            g.alpha = alpha;
            g.kind = parse_score_kind(field(j, "score_kind").get<std::string>());
            for (const auto& [id, s] : field(j, "per_drug").items()) g.per_drug.emplace(DrugId(id), scores_from(s));
            for (const auto& [id, s] : field(j, "per_protein").items())
                g.per_protein.emplace(ProteinId(id), scores_from(s));
            g.global_scores = scores_from(field(j, "global_scores"));
            return g;
        }
        case Method::CCP_NC:
        case Method::CCP_FC: {
            CcpModel c;
            c.config = ccp_config_from(field(j, "config"));
            c.alpha = alpha;
            c.subsets.cluster_subset = field(j, "cluster_subset").get<std::vector<std::size_t>>();
            c.subsets.quantile_subset = field(j, "quantile_subset").get<std::vector<std::size_t>>();
            c.drug_cluster_of = cluster_map_from<DrugId>(field(j, "drug_cluster_of"));
            c.protein_cluster_of = cluster_map_from<ProteinId>(field(j, "protein_cluster_of"));
            if (j.contains("drug_kmeans")) c.drug_kmeans = kmeans_from_json(j.at("drug_kmeans"));
            if (j.contains("protein_kmeans")) c.protein_kmeans = kmeans_from_json(j.at("protein_kmeans"));
            for (const auto& s : field(j, "drug_cluster_scores")) c.drug_cluster_scores.push_back(scores_from(s));
            for (const auto& s : field(j, "protein_cluster_scores")) c.protein_cluster_scores.push_back(scores_from(s));
            c.global_scores = scores_from(field(j, "global_scores"));
            return c;
        }
        case Method::CCP_NN: {
            NnCalibration n;
            n.alpha = alpha;
            n.k = field(j, "k").get<std::size_t>();
            n.scores = scores_from(field(j, "scores"));
            const auto& d = field(j, "entry_drug_ids");
            const auto& p = field(j, "entry_protein_ids");
            if (d.size() != n.scores.size() || p.size() != n.scores.size())
                throw ValidationError("CCP-NN entry ids are not aligned with scores");
            for (std::size_t i = 0; i < n.scores.size(); ++i) {
                n.entry_drug_ids.emplace_back(d[i].get<std::string>());
                n.entry_protein_ids.emplace_back(p[i].get<std::string>());
                n.drug_entries[n.entry_drug_ids.back()].push_back(i);
            }
            n.drug_bits = bits_from<EntityKind::Drug>(field(j, "drug_bits"));
            n.protein_bits = bits_from<EntityKind::Protein>(field(j, "protein_bits"));
            return n;
        }
    }
    throw ValidationError("unknown calibration method");
}

// ============================================================================
// Split provenance
// ============================================================================
inline Json split_provenance(const SplitResult& s) {
    return Json{{"strategy", to_string(s.strategy.kind)},
                {"seed", s.strategy.seed},
                {"sizes", {{"train", s.train_rows.size()}, {"cal", s.cal_rows.size()}, {"test", s.test_rows.size()}}},
                {"discarded", s.discarded}};
}

// ============================================================================
// Reports
// ============================================================================
inline Json macg_json(const MacgReport& m) {
    return Json{{"subgroup", to_string(m.kind)}, {"macg", num(m.macg)}, {"std_gap", num(m.std_gap)},
                {"n_subgroups", m.n_subgroups}};
}

inline Json subgroups_json(const SubgroupMap& m) {
    Json j = Json::object();
    for (const auto& [id, g] : m) j[id] = Json{{"n", g.n}, {"covered", g.covered}, {"coverage", num(g.coverage())}};
    return j;
}

inline Json to_json(const CoverageReport& r) {
    return Json{{"alpha", r.alpha},
                {"target", 1.0 - r.alpha},
                {"n_test", r.n_test},
                {"coverage", num(r.coverage)},
                {"mean_width", num(r.width.mean)},
                {"n_unbounded", r.width.n_unbounded},
                {"macg_drug", macg_json(r.macg_drug)},
                {"macg_protein", macg_json(r.macg_protein)},
                {"combined_macg", num(r.combined)},
                {"per_drug", subgroups_json(r.per_drug)},
                {"per_protein", subgroups_json(r.per_protein)}};
}

inline constexpr const char* kReportCsvHeader =
    "method,split,alpha,n_test,coverage,mean_width,n_unbounded,macg_drug,std_gap_drug,macg_protein,std_gap_protein,"
    "combined_macg";

inline void write_report_row(std::ostream& out, const CoverageReport& r, const std::string& method,
                             const std::string& split) {
    out << method << ',' << split << ',' << format_double(r.alpha) << ',' << r.n_test << ','
        << format_double(r.coverage) << ',' << format_double(r.width.mean) << ',' << r.width.n_unbounded << ','
        << format_double(r.macg_drug.macg) << ',' << format_double(r.macg_drug.std_gap) << ','
        << format_double(r.macg_protein.macg) << ',' << format_double(r.macg_protein.std_gap) << ','
        << format_double(r.combined) << '\n';
}

inline void write_subgroups_csv(std::ostream& out, const CoverageReport& r) {
    out << "subgroup,entity_id,n,covered,coverage,gap\n";
    const double target = 1.0 - r.alpha;
    auto rows = [&](const char* kind, const SubgroupMap& m) {
        for (const auto& [id, g] : m)
            out << kind << ',' << id << ',' << g.n << ',' << g.covered << ',' << format_double(g.coverage()) << ','
                << format_double(std::fabs(g.coverage() - target)) << '\n';
    };
    rows("drug", r.per_drug);
    rows("protein", r.per_protein);
}

// ============================================================================
// Interval, reliability, grid and cluster CSVs
// ============================================================================
inline constexpr const char* kIntervalsCsvHeader = "drug_id,protein_id,prediction,lower,upper,threshold,method,alpha";

inline void write_intervals_csv(std::ostream& out, std::span<const PairQuery> queries,
                                std::span<const IntervalPrediction> pred, const std::string& method, double alpha) {
    if (queries.size() != pred.size()) throw ValidationError("query and interval counts differ");
    out << kIntervalsCsvHeader << '\n';
    const std::string a = format_double(alpha);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto& iv = pred[i].interval;
        out << queries[i].drug.token << ',' << queries[i].protein.token << ',' << format_double(queries[i].prediction)
            << ',' << format_double(iv.lower()) << ',' << format_double(iv.upper()) << ','
            << format_double(pred[i].threshold.value) << ',' << method << ',' << a << '\n';
    }
}

struct IntervalRow {
    DrugId drug;
    ProteinId protein;
    double prediction = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double threshold = 0.0;
    std::string method;
    double alpha = 0.1;

    // Exact for rows written by write_intervals_csv: the half-width is the threshold.
    PredictionInterval interval() const { return {prediction, threshold}; }
};

inline std::vector<IntervalRow> read_intervals_csv(std::istream& in, std::string_view source = "<stream>") {
    std::string line;
    if (!read_csv_line(in, line, true) || line != kIntervalsCsvHeader)
        throw ValidationError(std::string(source) + ": header must be " + kIntervalsCsvHeader);
    std::vector<IntervalRow> out;
    std::size_t lineno = 1;
    while (read_csv_line(in, line, false)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const std::string ctx = std::string(source) + ":" + std::to_string(lineno);
        if (f.size() != 8) throw ValidationError(ctx + ": expected 8 fields");
        IntervalRow r{DrugId(f[0]),           ProteinId(f[1]),         parse_double(f[2], ctx),
                      parse_double(f[3], ctx), parse_double(f[4], ctx), parse_double(f[5], ctx),
                      f[6],                    parse_double(f[7], ctx)};
        out.push_back(std::move(r));
    }
    return out;
}

inline constexpr const char* kReliabilityCsvHeader = "alpha,expected,observed,method,split";

inline void write_reliability_rows(std::ostream& out, std::span<const ReliabilityPoint> pts, const std::string& method,
                                   const std::string& split) {
    for (const auto& p : pts)
        out << format_double(p.alpha) << ',' << format_double(p.expected) << ',' << format_double(p.observed) << ','
            << method << ',' << split << '\n';
}

inline constexpr const char* kGridCsvHeader = "gamma,k,macg_drug,macg_protein,combined";

inline void write_grid_csv(std::ostream& out, const GridSearchResult& g) {
    out << kGridCsvHeader << '\n';
    for (const auto& c : g.evaluated)
        out << format_double(c.gamma) << ',' << c.n_clusters << ',' << format_double(c.macg_drug) << ','
            << format_double(c.macg_protein) << ',' << format_double(c.combined) << '\n';
}

template <class Id>
void write_cluster_assignments(std::ostream& out, const std::map<Id, std::size_t>& m) {
    out << "entity_id,cluster\n";
    for (const auto& [id, c] : m) out << id.token << ',' << c << '\n';
}

} // namespace dticp
