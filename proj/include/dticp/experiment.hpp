#pragma once
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clustering.hpp"
#include "core.hpp"
#include "evalx.hpp"
#include "methods.hpp"
#include "predictor.hpp"
#include "rng.hpp"
#include "serialize.hpp"
#include "splits.hpp"
#include "synthetic.hpp"

namespace dticp {

inline constexpr const char* kVersion = "0.1.0";

// ============================================================================
// Configuration
// ============================================================================
enum class PredictorKind { Gbm, External, Table };

struct PredictorConfig {
    PredictorKind kind = PredictorKind::Gbm;
    GbmConfig gbm;
    std::string path;  // External: drug_id,protein_id,prediction
};

struct TuningConfig {
    bool enabled = false;
    bool eval_on_test = false;  // false: score the grid on a held-out slice of calibration
    double holdout_fraction = 0.25;
    GridSpec grid;
};

struct DataConfig {
    SyntheticSpec synthetic;
    bool synthetic_seed_fixed = false;  // otherwise the run seed drives generation
    std::string interactions;           // empty: synthetic
    std::string drug_features;
    std::string protein_features;
    TransformSpec transform;
};

struct ExperimentConfig {
    DataConfig data;
    std::vector<SplitKind> splits{SplitKind::Random};
    std::vector<Method> methods{Method::MCP};
    std::vector<double> alphas{0.1};
    PredictorConfig predictor;
    CcpConfig ccp;
    TuningConfig tuning;
    std::string output_dir = "dticp-out";
    std::uint64_t seed = 0;
    std::size_t repeats = 1;

    void validate() const {
        if (methods.empty()) throw ConfigError("at least one method is required");
        if (alphas.empty()) throw ConfigError("at least one alpha is required");
        if (splits.empty()) throw ConfigError("at least one split strategy is required");
        if (repeats == 0) throw ConfigError("repeats must be positive");
        for (double a : alphas) check_alpha(a);
        predictor.gbm.validate();
        if (predictor.kind == PredictorKind::External && predictor.path.empty())
            throw ConfigError("predictor.path is required for external predictions");
        if (!(tuning.holdout_fraction > 0.0 && tuning.holdout_fraction < 1.0))
            throw ConfigError("tuning.holdout_fraction must lie in (0, 1)");
        if (tuning.enabled && (tuning.grid.gammas.empty() || tuning.grid.ks.empty()))
            throw ConfigError("tuning grid needs at least one gamma and one K");
        if (data.interactions.empty()) data.synthetic.validate();
    }
};

inline Json default_config_json() {
    return Json::parse(R"({
  "seed": 0,
  "output_dir": "dticp-out",
  "repeats": 1,
  "data": {
    "interactions": "",
    "drug_features": "",
    "protein_features": "",
    "transform": "identity",
    "boxcox_lambda": null,
    "synthetic": {
      "n_drugs": 60, "n_proteins": 40, "density": 1.0, "latent_dim": 4,
      "drug_noise_clusters": [[1.0, 1.0]], "protein_noise_clusters": [[1.0, 1.0]],
      "feature_dim_drug": 8, "feature_dim_protein": 8, "feature_noise": 0.1, "seed": null
    }
  },
  "splits": ["Random"],
  "methods": ["MCP"],
  "alphas": [0.1],
  "predictor": {"kind": "gbm", "n_stages": 500, "learning_rate": 0.05, "max_depth": 6,
                "min_samples_leaf": 1, "path": ""},
  "ccp": {"gamma": 0.5, "n_clusters": 5, "n_neighbors": 20, "pooling": "union"},
  "tuning": {"enabled": false, "eval_rows": "holdout", "holdout_fraction": 0.25,
             "gammas": [0.25, 0.5, 0.75], "ks": [1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50]}
})");
}

namespace detail {

inline void reject_unknown_keys(const Json& user, const Json& defaults, const std::string& prefix) {
    if (!user.is_object()) return;
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        if (defaults.at(key).is_object()) {
            if (!value.is_object()) throw ConfigError("config key '" + path + "' must be an object");
            reject_unknown_keys(value, defaults.at(key), path);
        }
    }
}

inline std::vector<NoiseCluster> noise_clusters_from(const Json& j, const char* name) {
    if (!j.is_array() || j.empty()) throw ConfigError(std::string(name) + " must be a non-empty list");
    std::vector<NoiseCluster> out;
    for (const auto& c : j) {
        if (c.is_array() && c.size() == 2) {
            out.push_back({c[0].get<double>(), c[1].get<double>()});
        } else if (c.is_object()) {
            out.push_back({field(c, "fraction").get<double>(), field(c, "scale").get<double>()});
        } else {
            throw ConfigError(std::string(name) + " entries are [fraction, scale] pairs");
        }
    }
    return out;
}

inline TransformKind parse_transform(const std::string& s) {
    if (s == "identity") return TransformKind::Identity;
    if (s == "neglog10") return TransformKind::NegLog10OverGiga;
    if (s == "boxcox") return TransformKind::BoxCox;
    throw ConfigError("unknown transform '" + s + "' (identity, neglog10, boxcox)");
}

} // namespace detail

// Defaults, then the user document, then the resolved result. A single
// "split" string is accepted as shorthand for "splits".
inline Json resolve_config_json(Json user) {
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
    if (user.contains("split")) {
        if (user.contains("splits")) throw ConfigError("give either 'split' or 'splits', not both");
        Json s = user.at("split");
        user.erase("split");
        user["splits"] = s.is_array() ? s : Json::array({s});
    }
    Json defaults = default_config_json();
    detail::reject_unknown_keys(user, defaults, "");
    defaults.merge_patch(user);
    return defaults;
}

inline ExperimentConfig config_from_json(const Json& resolved) {
    ExperimentConfig c;
    try {
        c.seed = resolved.at("seed").get<std::uint64_t>();
        c.output_dir = resolved.at("output_dir").get<std::string>();
        c.repeats = resolved.at("repeats").get<std::size_t>();

        const auto& d = resolved.at("data");
        c.data.interactions = d.at("interactions").get<std::string>();
        c.data.drug_features = d.at("drug_features").get<std::string>();
        c.data.protein_features = d.at("protein_features").get<std::string>();
        c.data.transform.kind = detail::parse_transform(d.at("transform").get<std::string>());
        if (d.contains("boxcox_lambda") && !d.at("boxcox_lambda").is_null()) c.data.transform.lambda = d.at("boxcox_lambda").get<double>();
        const auto& s = d.at("synthetic");
        auto& spec = c.data.synthetic;
        spec.n_drugs = s.at("n_drugs").get<std::size_t>();
        spec.n_proteins = s.at("n_proteins").get<std::size_t>();
        spec.density = s.at("density").get<double>();
        spec.latent_dim = s.at("latent_dim").get<std::size_t>();
        spec.drug_noise_clusters = detail::noise_clusters_from(s.at("drug_noise_clusters"), "drug_noise_clusters");
        spec.protein_noise_clusters =
            detail::noise_clusters_from(s.at("protein_noise_clusters"), "protein_noise_clusters");
        spec.feature_dim_drug = s.at("feature_dim_drug").get<std::size_t>();
        spec.feature_dim_protein = s.at("feature_dim_protein").get<std::size_t>();
        spec.feature_noise = s.at("feature_noise").get<double>();
        if (s.contains("seed") && !s.at("seed").is_null()) {
            spec.seed = s.at("seed").get<std::uint64_t>();
            c.data.synthetic_seed_fixed = true;
        }

        c.splits.clear();
        for (const auto& x : resolved.at("splits")) c.splits.push_back(parse_split_kind(x.get<std::string>()));
        c.methods.clear();
        for (const auto& x : resolved.at("methods")) c.methods.push_back(parse_method(x.get<std::string>()));
        c.alphas = resolved.at("alphas").get<std::vector<double>>();

        const auto& p = resolved.at("predictor");
        const auto kind = p.at("kind").get<std::string>();
        if (kind == "gbm") c.predictor.kind = PredictorKind::Gbm;
        else if (kind == "external") c.predictor.kind = PredictorKind::External;
        else if (kind == "table") c.predictor.kind = PredictorKind::Table;
        else throw ConfigError("unknown predictor kind '" + kind + "' (gbm, external, table)");
        c.predictor.gbm.n_stages = p.at("n_stages").get<std::size_t>();
        c.predictor.gbm.learning_rate = p.at("learning_rate").get<double>();
        c.predictor.gbm.max_depth = p.at("max_depth").get<std::size_t>();
        c.predictor.gbm.min_samples_leaf = p.at("min_samples_leaf").get<std::size_t>();
        c.predictor.path = p.at("path").get<std::string>();

        const auto& cc = resolved.at("ccp");
        c.ccp.gamma = cc.at("gamma").get<double>();
        c.ccp.n_clusters = cc.at("n_clusters").get<std::size_t>();
        c.ccp.n_neighbors = cc.at("n_neighbors").get<std::size_t>();
        c.ccp.pooling = parse_pooling(cc.at("pooling").get<std::string>());

        const auto& t = resolved.at("tuning");
        c.tuning.enabled = t.at("enabled").get<bool>();
        const auto rows = t.at("eval_rows").get<std::string>();
        if (rows != "holdout" && rows != "test") throw ConfigError("tuning.eval_rows must be 'holdout' or 'test'");
        c.tuning.eval_on_test = rows == "test";
        c.tuning.holdout_fraction = t.at("holdout_fraction").get<double>();
        c.tuning.grid.gammas = t.at("gammas").get<std::vector<double>>();
        c.tuning.grid.ks = t.at("ks").get<std::vector<std::size_t>>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

// ============================================================================
// Helpers
// ============================================================================
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline InteractionTable transform_labels(const InteractionTable& table, TransformSpec spec) {
    if (spec.kind == TransformKind::Identity) return table;
    std::vector<double> raw(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) raw[i] = table[i].label;
    if (spec.kind == TransformKind::BoxCox && !spec.lambda) spec.lambda = fit_boxcox_lambda(raw);
    for (auto& y : raw) y = transform_affinity(y, spec);
    return table.with_labels(raw);
}

struct RegressionMetrics {
    std::size_t n = 0;
    double rmse = 0.0;
    double r2 = 0.0;
};

inline RegressionMetrics regression_metrics(const InteractionTable& table, std::span<const std::size_t> rows) {
    RegressionMetrics m;
    m.n = rows.size();
    if (rows.empty()) throw DegenerateInputError("regression metrics over zero rows");
    double mean = 0.0;
    for (auto r : rows) mean += table[r].label;
    mean /= static_cast<double>(rows.size());
    double sse = 0.0, sst = 0.0;
    for (auto r : rows) {
        if (!table[r].prediction) throw ValidationError("row " + std::to_string(r) + " has no prediction");
        const double e = table[r].label - *table[r].prediction;
        sse += e * e;
        sst += (table[r].label - mean) * (table[r].label - mean);
    }
    m.rmse = std::sqrt(sse / static_cast<double>(rows.size()));
    m.r2 = sst > 0.0 ? 1.0 - sse / sst : std::nan("");
    return m;
}

// Runs `f`, prefixing any library error with the stage and artifact it concerns.
template <class F>
auto run_stage(const std::string& stage, const std::string& artifact, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.kind(), "stage '" + stage + "' (" + artifact + "): " + e.what());
    }
}

// ============================================================================
// Pipeline
// ============================================================================
struct LoadedData {
    InteractionTable table;
    std::optional<DrugFeatures> drug_features;
    std::optional<ProteinFeatures> protein_features;
    std::string source;
};

inline LoadedData load_data(const DataConfig& d, std::uint64_t seed) {
    LoadedData out;
    if (d.interactions.empty()) {
        SyntheticSpec spec = d.synthetic;
        if (!d.synthetic_seed_fixed) spec.seed = seed;
        auto syn = run_stage("synth", "<synthetic>", [&] { return generate_synthetic(spec); });
        out.table = std::move(syn.table);
        out.drug_features = std::move(syn.drug_features);
        out.protein_features = std::move(syn.protein_features);
        out.source = "<synthetic>";
    } else {
        out.table = run_stage("load", d.interactions, [&] { return load_interactions(d.interactions); });
        if (!d.drug_features.empty())
            out.drug_features = run_stage("load", d.drug_features,
                                          [&] { return load_features<EntityKind::Drug>(d.drug_features); });
        if (!d.protein_features.empty())
            out.protein_features = run_stage("load", d.protein_features,
                                             [&] { return load_features<EntityKind::Protein>(d.protein_features); });
        out.source = d.interactions;
    }
    // A Box-Cox transform without a fixed lambda is fitted per split on training labels.
    if (!(d.transform.kind == TransformKind::BoxCox && !d.transform.lambda))
        out.table = run_stage("transform", out.source, [&] { return transform_labels(out.table, d.transform); });
    return out;
}

struct ChosenCell {
    std::string split;
    std::string method;
    std::uint64_t seed = 0;
    double gamma = 0.0;
    std::size_t k = 0;
    double objective = 0.0;
};

struct RunManifest {
    std::string config_hash;
    Json config;
    Json data_fingerprints = Json::object();
    Json timings_ms = Json::object();
    Json discarded = Json::object();
    Json boxcox_lambda = Json::object();
    std::vector<ChosenCell> chosen;
    std::vector<std::string> interval_files;  // relative to output_dir

    Json to_json() const {
        Json c = Json::array();
        for (const auto& x : chosen)
            c.push_back(Json{{"split", x.split},
                             {"method", x.method},
                             {"seed", x.seed},
                             {"gamma", x.gamma},
                             {"k", x.k},
                             {"objective", num(x.objective)}});
        return Json{{"format", "dticp.manifest"},
                    {"version", kFormatVersion},
                    {"dticp_version", kVersion},
                    {"config_hash", config_hash},
                    {"config", config},
                    {"data_fingerprints", data_fingerprints},
                    {"timings_ms", timings_ms},
                    {"discarded_rows", discarded},
                    {"boxcox_lambda", boxcox_lambda},
                    {"chosen_cells", c},
                    {"interval_files", interval_files}};
    }
};

namespace detail {

inline std::string fingerprint(const InteractionTable& t) {
    std::ostringstream s;
    write_interactions(t, s);
    return hex64(fnv1a(s.str()));
}

template <EntityKind K>
std::string fingerprint(const FeatureTable<K>& f) {
    std::ostringstream s;
    write_features(f, s);
    return hex64(fnv1a(s.str()));
}

inline std::ofstream open_in(const std::filesystem::path& dir, const std::string& name) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    return open_output((dir / name).string());
}

// Splits calibration rows into (tuning calibration, grid evaluation) for leakage-free tuning.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_slice(std::span<const std::size_t> cal,
                                                                                   double fraction,
                                                                                   std::uint64_t seed) {
    std::vector<std::size_t> rows(cal.begin(), cal.end());
    Rng rng(seed);
    rng.shuffle(rows);
    const auto n_eval = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows.size()) + 1e-9));
    if (n_eval == 0 || n_eval >= rows.size())
        throw DegenerateInputError("holdout slice of " + std::to_string(rows.size()) + " calibration rows is empty");
    std::vector<std::size_t> eval(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_eval));
    std::vector<std::size_t> fit(rows.begin() + static_cast<std::ptrdiff_t>(n_eval), rows.end());
    std::sort(eval.begin(), eval.end());
    std::sort(fit.begin(), fit.end());
    return {std::move(fit), std::move(eval)};
}

inline long long elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - since).count();
}

} // namespace detail

// Seeds derived from the run seed, one stream per consumer.
inline std::uint64_t ccp_seed_of(std::uint64_t run_seed) { return derive_seed(run_seed, 3); }
inline std::uint64_t holdout_seed_of(std::uint64_t run_seed) { return derive_seed(run_seed, 4); }

struct SeedOutputs {
    std::vector<std::string> summary_rows;
    std::vector<std::string> regression_rows;
    std::vector<std::string> reliability_rows;
    std::vector<std::pair<std::string, CoverageReport>> reports;  // key split/method/alpha
};

// One full pass (all splits, methods, alphas) for a single seed.
inline SeedOutputs run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& root,
                            RunManifest& manifest) {
    namespace fs = std::filesystem;
    SeedOutputs out;
    const std::string seed_key = std::to_string(seed);
    auto t0 = std::chrono::steady_clock::now();
    LoadedData data = load_data(cfg.data, seed);
    manifest.timings_ms[seed_key]["load"] = detail::elapsed_ms(t0);
    manifest.data_fingerprints[seed_key]["interactions"] = detail::fingerprint(data.table);
    if (data.drug_features) manifest.data_fingerprints[seed_key]["drug_features"] = detail::fingerprint(*data.drug_features);
    if (data.protein_features)
        manifest.data_fingerprints[seed_key]["protein_features"] = detail::fingerprint(*data.protein_features);

    std::optional<DrugBits> drug_bits;
    std::optional<ProteinBits> protein_bits;
    if (data.drug_features) drug_bits = binarize_features(*data.drug_features);
    if (data.protein_features) protein_bits = binarize_features(*data.protein_features);
    MethodInputs inputs{data.drug_features ? &*data.drug_features : nullptr,
                        data.protein_features ? &*data.protein_features : nullptr,
                        drug_bits ? &*drug_bits : nullptr, protein_bits ? &*protein_bits : nullptr};

    for (SplitKind kind : cfg.splits) {
        const std::string split_name = to_string(kind);
        const fs::path split_dir = root / split_name;
        auto ts = std::chrono::steady_clock::now();
        const SplitResult split =
            run_stage("split", data.source, [&] { return make_split(data.table, SplitStrategy{kind, seed}); });
        manifest.discarded[seed_key][split_name] = split.discarded;
        InteractionTable labelled = data.table;
        if (cfg.data.transform.kind == TransformKind::BoxCox && !cfg.data.transform.lambda) {
            labelled = run_stage("transform", data.source, [&] {
                std::vector<double> train(split.train_rows.size());
                for (std::size_t i = 0; i < train.size(); ++i) train[i] = data.table[split.train_rows[i]].label;
                TransformSpec spec{TransformKind::BoxCox, fit_boxcox_lambda(train)};
                manifest.boxcox_lambda[seed_key][split_name] = *spec.lambda;
                return transform_labels(data.table, spec);
            });
        }
        {
            auto f = detail::open_in(split_dir, "split.json");
            f << split_provenance(split).dump(2) << '\n';
        }
        write_row_indices(split.train_rows, (split_dir / "train_rows.txt").string());
        write_row_indices(split.cal_rows, (split_dir / "cal_rows.txt").string());
        write_row_indices(split.test_rows, (split_dir / "test_rows.txt").string());

        // Point predictions for every row the pipeline scores.
        InteractionTable table = run_stage("predict", split_name, [&]() -> InteractionTable {
            switch (cfg.predictor.kind) {
                case PredictorKind::Gbm: {
                    if (!data.drug_features || !data.protein_features)
                        throw ConfigError("the built-in predictor needs drug and protein features");
                    const auto x_train =
                        build_pair_features(labelled, split.train_rows, *data.drug_features, *data.protein_features);
                    std::vector<double> y(split.train_rows.size());
                    for (std::size_t i = 0; i < y.size(); ++i) y[i] = labelled[split.train_rows[i]].label;
                    const GbmModel model = fit_gbm(x_train, y, cfg.predictor.gbm);
                    {
                        auto f = detail::open_in(split_dir, "model.json");
                        f << to_json(model).dump() << '\n';
                    }
                    std::vector<std::size_t> all(labelled.size());
                    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                    const auto x_all =
                        build_pair_features(labelled, all, *data.drug_features, *data.protein_features);
                    const auto yhat = predict(model, x_all);
                    std::vector<std::optional<double>> preds(yhat.begin(), yhat.end());
                    return labelled.with_predictions(preds);
                }
                case PredictorKind::External: {
                    std::vector<std::size_t> need = split.cal_rows;
                    need.insert(need.end(), split.test_rows.begin(), split.test_rows.end());
                    std::sort(need.begin(), need.end());
                    return attach_external_predictions(labelled, cfg.predictor.path, true, need);
                }
                case PredictorKind::Table: {
                    for (const auto* rows : {&split.cal_rows, &split.test_rows})
                        for (auto r : *rows)
                            if (!labelled[r].prediction)
                                throw ValidationError("row " + std::to_string(r) + " has no prediction column value");
                    return labelled;
                }
            }
            throw ConfigError("unknown predictor kind");
        });
        manifest.timings_ms[seed_key][split_name]["split_and_predict"] = detail::elapsed_ms(ts);

        for (const auto& [subset, rows] : {std::pair<const char*, const std::vector<std::size_t>*>{"train", &split.train_rows},
                                           {"cal", &split.cal_rows},
                                           {"test", &split.test_rows}}) {
            if (rows->empty() || (cfg.predictor.kind != PredictorKind::Gbm && std::string(subset) == "train")) continue;
            const auto m = regression_metrics(table, *rows);
            out.regression_rows.push_back(split_name + ',' + subset + ',' + std::to_string(m.n) + ',' +
                                          format_double(m.rmse) + ',' + format_double(m.r2));
        }

        // Queries carry no labels; interval construction cannot see test labels.
        const auto queries = make_queries(table, split.test_rows);

        for (Method method : cfg.methods) {
            const std::string method_name = to_string(method);
            const fs::path method_dir = split_dir / method_name;
            auto tm = std::chrono::steady_clock::now();
            CcpConfig ccp = cfg.ccp;
            ccp.seed = ccp_seed_of(seed);

            const bool tune = cfg.tuning.enabled && (method == Method::CCP_NC || method == Method::CCP_FC);
            if (tune) {
                run_stage("tune", (method_dir / "grid.csv").string(), [&] {
                    std::vector<std::size_t> fit_rows = split.cal_rows, eval_rows = split.test_rows;
                    if (!cfg.tuning.eval_on_test)
                        std::tie(fit_rows, eval_rows) =
                            detail::holdout_slice(split.cal_rows, cfg.tuning.holdout_fraction, holdout_seed_of(seed));
                    GridInputs gi{table,
                                  fit_rows,
                                  eval_rows,
                                  ccp_method_of(method),
                                  cfg.alphas,
                                  ccp.seed,
                                  inputs.drug_features,
                                  inputs.protein_features,
                                  ccp.pooling};
                    const auto g = grid_search(gi, cfg.tuning.grid);
                    if (!std::isfinite(g.objective))
                        throw DegenerateInputError("every grid cell is infeasible for " + method_name);
                    ccp.gamma = g.best_gamma;
                    ccp.n_clusters = g.best_k;
                    ccp.allow_any_gamma = true;
                    auto f = detail::open_in(method_dir, "grid.csv");
                    write_grid_csv(f, g);
                    manifest.chosen.push_back({split_name, method_name, seed, g.best_gamma, g.best_k, g.objective});
                    return 0;
                });
            }

            const Calibration base = run_stage("calibrate", (method_dir / "calibration.json").string(), [&] {
                return calibrate(method, table, split.cal_rows, cfg.alphas.front(), ccp, inputs);
            });
            {
                auto f = detail::open_in(method_dir, "calibration.json");
                f << to_json(base).dump() << '\n';
            }
            if (auto* m = std::get_if<CcpModel>(&base)) {
                auto fd = detail::open_in(method_dir, "clusters_drug.csv");
                write_cluster_assignments(fd, m->drug_cluster_of);
                auto fp = detail::open_in(method_dir, "clusters_protein.csv");
                write_cluster_assignments(fp, m->protein_cluster_of);
            }

            std::vector<ReliabilityPoint> reliability;
            for (double alpha : cfg.alphas) {
                const fs::path alpha_dir = method_dir / ("alpha=" + format_double(alpha));
                const auto cal = with_alpha(base, alpha);
                const auto pred = run_stage("predict-intervals", (alpha_dir / "intervals.csv").string(),
                                            [&] { return predict_intervals(cal, queries, inputs); });
                {
                    auto f = detail::open_in(alpha_dir, "intervals.csv");
                    write_intervals_csv(f, queries, pred, method_name, alpha);
                }
                manifest.interval_files.push_back(fs::relative(alpha_dir / "intervals.csv", cfg.output_dir).generic_string());

                // Evaluation stage: the only place test labels are read.
                const auto intervals = intervals_of(pred);
                const auto rep = run_stage("evaluate", (alpha_dir / "report.json").string(), [&] {
                    return evaluate_intervals(table, split.test_rows, intervals, alpha);
                });
                {
                    auto f = detail::open_in(alpha_dir, "report.json");
                    Json j = to_json(rep);
                    j["method"] = method_name;
                    j["split"] = split_name;
                    f << j.dump(2) << '\n';
                }
                {
                    auto f = detail::open_in(alpha_dir, "report.csv");
                    f << kReportCsvHeader << '\n';
                    write_report_row(f, rep, method_name, split_name);
                }
                {
                    auto f = detail::open_in(alpha_dir, "subgroups.csv");
                    write_subgroups_csv(f, rep);
                }
                std::ostringstream row;
                write_report_row(row, rep, method_name, split_name);
                std::string r = row.str();
                r.pop_back();
                out.summary_rows.push_back(std::to_string(seed) + ',' + r);
                out.reports.emplace_back(split_name + '\x1f' + method_name + '\x1f' + format_double(alpha), rep);
                reliability.push_back({alpha, 1.0 - alpha, rep.coverage});
            }
            {
                auto f = detail::open_in(method_dir, "reliability.csv");
                f << kReliabilityCsvHeader << '\n';
                write_reliability_rows(f, reliability, method_name, split_name);
                std::ostringstream rows;
                write_reliability_rows(rows, reliability, method_name, split_name);
                std::string line;
                std::istringstream in(rows.str());
                while (std::getline(in, line)) out.reliability_rows.push_back(std::to_string(seed) + ',' + line);
            }
            manifest.timings_ms[seed_key][split_name][method_name] = detail::elapsed_ms(tm);
        }
    }
    return out;
}

// Runs every repeat, writes per-seed trees plus top-level summary.csv,
// regression.csv, reliability.csv, aggregate.csv (repeats > 1) and manifest.json.
inline RunManifest run_experiment(const ExperimentConfig& cfg, const Json& resolved_config) {
    namespace fs = std::filesystem;
    cfg.validate();
    RunManifest manifest;
    manifest.config = resolved_config;
    manifest.config_hash = hex64(fnv1a(resolved_config.dump()));
    const fs::path out_dir(cfg.output_dir);

    std::vector<std::string> summary, regression, reliability;
    std::map<std::string, std::vector<CoverageReport>> by_key;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        const std::uint64_t seed = cfg.seed + r;
        const fs::path root = cfg.repeats > 1 ? out_dir / ("seed=" + std::to_string(seed)) : out_dir;
        auto res = run_seed(cfg, seed, root, manifest);
        for (auto& s : res.regression_rows) regression.push_back(std::to_string(seed) + ',' + s);
        summary.insert(summary.end(), res.summary_rows.begin(), res.summary_rows.end());
        reliability.insert(reliability.end(), res.reliability_rows.begin(), res.reliability_rows.end());
        for (auto& [k, rep] : res.reports) by_key[k].push_back(std::move(rep));
    }

    {
        auto f = detail::open_in(out_dir, "summary.csv");
        f << "seed," << kReportCsvHeader << '\n';
        for (const auto& s : summary) f << s << '\n';
    }
    {
        auto f = detail::open_in(out_dir, "regression.csv");
        f << "seed,split,subset,n,rmse,r2\n";
        for (const auto& s : regression) f << s << '\n';
    }
    {
        auto f = detail::open_in(out_dir, "reliability.csv");
        f << "seed," << kReliabilityCsvHeader << '\n';
        for (const auto& s : reliability) f << s << '\n';
    }
    if (cfg.repeats > 1) {
        auto f = detail::open_in(out_dir, "aggregate.csv");
        f << "split,method,alpha,n_seeds,mean_coverage,std_coverage,mean_width,mean_macg_drug,std_macg_drug,"
             "mean_macg_protein,std_macg_protein,mean_combined_macg\n";
        auto mean_std = [](const std::vector<double>& v) {
            double m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - m) * (x - m);
            return std::make_pair(m, std::sqrt(ss / static_cast<double>(v.size())));
        };
        for (const auto& [key, reps] : by_key) {
            std::vector<double> cov, width, md, mp, comb;
            for (const auto& r : reps) {
                cov.push_back(r.coverage);
                width.push_back(r.width.mean);
                md.push_back(r.macg_drug.macg);
                mp.push_back(r.macg_protein.macg);
                comb.push_back(r.combined);
            }
            std::string k = key;
            std::replace(k.begin(), k.end(), '\x1f', ',');
            const auto [cm, cs] = mean_std(cov);
            const auto [dm, ds] = mean_std(md);
            const auto [pm, ps] = mean_std(mp);
            f << k << ',' << reps.size() << ',' << format_double(cm) << ',' << format_double(cs) << ','
              << format_double(mean_std(width).first) << ',' << format_double(dm) << ',' << format_double(ds) << ','
              << format_double(pm) << ',' << format_double(ps) << ',' << format_double(mean_std(comb).first) << '\n';
        }
    }
    {
        auto f = detail::open_in(out_dir, "manifest.json");
        f << manifest.to_json().dump(2) << '\n';
    }
    return manifest;
}

inline RunManifest run_experiment(const Json& user_config) {
    const Json resolved = resolve_config_json(user_config);
    return run_experiment(config_from_json(resolved), resolved);
}

} // namespace dticp
