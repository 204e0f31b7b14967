// dticp command-line driver.
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dticp/dticp.hpp"

namespace fs = std::filesystem;
using namespace dticp;

namespace {

struct FeaturePaths {
    std::string drug, protein;

    std::optional<DrugFeatures> drugs() const {
        if (drug.empty()) return std::nullopt;
        return load_features<EntityKind::Drug>(drug);
    }
    std::optional<ProteinFeatures> proteins() const {
        if (protein.empty()) return std::nullopt;
        return load_features<EntityKind::Protein>(protein);
    }
};

void add_feature_options(CLI::App* cmd, FeaturePaths& f) {
    cmd->add_option("--drug-features", f.drug, "Drug features CSV (entity_id,f0,...)");
    cmd->add_option("--protein-features", f.protein, "Protein features CSV (entity_id,f0,...)");
}

struct SideInputs {
    std::optional<DrugFeatures> drug_features;
    std::optional<ProteinFeatures> protein_features;
    std::optional<DrugBits> drug_bits;
    std::optional<ProteinBits> protein_bits;

    explicit SideInputs(const FeaturePaths& p) : drug_features(p.drugs()), protein_features(p.proteins()) {
        if (drug_features) drug_bits = binarize_features(*drug_features);
        if (protein_features) protein_bits = binarize_features(*protein_features);
    }
    MethodInputs view() const {
        return {drug_features ? &*drug_features : nullptr, protein_features ? &*protein_features : nullptr,
                drug_bits ? &*drug_bits : nullptr, protein_bits ? &*protein_bits : nullptr};
    }
};

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

// `--a.b value` pairs become JSON overrides. Values parse as JSON when they
// can (numbers, booleans, lists) and are taken as strings otherwise.
void apply_overrides(Json& config, const std::vector<std::string>& extras) {
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& flag = extras[i];
        if (flag.rfind("--", 0) != 0 || flag.size() <= 2) throw ConfigError("unexpected argument '" + flag + "'");
        std::string key = flag.substr(2), value;
        if (auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else {
            if (i + 1 >= extras.size()) throw ConfigError("override '" + flag + "' needs a value");
            value = extras[++i];
        }
        Json parsed = Json::parse(value, nullptr, false);
        if (parsed.is_discarded()) parsed = value;
        std::string pointer = "/" + key;
        std::replace(pointer.begin(), pointer.end(), '.', '/');
        std::replace(pointer.begin(), pointer.end(), '-', '_');
        config[Json::json_pointer(pointer)] = parsed;
    }
}

int fail(const std::string& msg, int code) {
    std::cerr << "dticp: " << msg << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conformal prediction intervals for drug-target interaction regression"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // ---- synth ---------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic interaction table with features");
    SyntheticSpec sspec;
    std::string synth_config, synth_out;
    std::uint64_t synth_seed = 0;
    synth->add_option("--config", synth_config, "JSON config; its data.synthetic section is used");
    std::size_t n_drugs = 0, n_proteins = 0, latent_dim = 0;
    double density = 0.0;
    auto* o_drugs = synth->add_option("--n-drugs", n_drugs);
    auto* o_proteins = synth->add_option("--n-proteins", n_proteins);
    auto* o_density = synth->add_option("--density", density);
    auto* o_latent = synth->add_option("--latent-dim", latent_dim);
    synth->add_option("--seed", synth_seed)->required();
    synth->add_option("--out", synth_out, "Output directory")->required();

    // ---- split ---------------------------------------------------------------
    auto* split = app.add_subcommand("split", "Split an interaction table into train / calibration / test rows");
    std::string split_in, split_strategy = "Random", split_out;
    std::uint64_t split_seed = 0;
    split->add_option("--interactions", split_in)->required();
    split->add_option("--strategy", split_strategy, "Random, ColdDrug, ColdProtein or DoubleCold");
    split->add_option("--seed", split_seed)->required();
    split->add_option("--out", split_out, "Output directory")->required();

    // ---- fit -----------------------------------------------------------------
    auto* fit = app.add_subcommand("fit", "Fit the gradient-boosted predictor and attach its predictions");
    std::string fit_in, fit_rows, fit_model, fit_table;
    FeaturePaths fit_features;
    GbmConfig gbm;
    fit->add_option("--interactions", fit_in)->required();
    fit->add_option("--train-rows", fit_rows, "Row index file")->required();
    add_feature_options(fit, fit_features);
    fit->add_option("--n-stages", gbm.n_stages);
    fit->add_option("--learning-rate", gbm.learning_rate);
    fit->add_option("--max-depth", gbm.max_depth);
    fit->add_option("--min-samples-leaf", gbm.min_samples_leaf);
    fit->add_option("--model", fit_model, "Model JSON output")->required();
    fit->add_option("--out", fit_table, "Interactions CSV with a prediction column");

    // ---- attach-preds --------------------------------------------------------
    auto* attach = app.add_subcommand("attach-preds", "Attach externally computed predictions to a table");
    std::string attach_in, attach_preds, attach_out, attach_rows;
    bool attach_overwrite = false;
    attach->add_option("--interactions", attach_in)->required();
    attach->add_option("--predictions", attach_preds, "CSV drug_id,protein_id,prediction")->required();
    attach->add_option("--rows", attach_rows, "Only these rows need predictions");
    attach->add_flag("--overwrite", attach_overwrite, "Replace an existing prediction column");
    attach->add_option("--out", attach_out)->required();

    // ---- calibrate -----------------------------------------------------------
    auto* calib = app.add_subcommand("calibrate", "Build a calibration model from calibration rows");
    std::string cal_in, cal_rows, cal_method = "MCP", cal_out, cal_pooling = "union";
    double cal_alpha = 0.1;
    CcpConfig cal_ccp;
    FeaturePaths cal_features;
    calib->add_option("--interactions", cal_in, "Interactions CSV with predictions")->required();
    calib->add_option("--cal-rows", cal_rows)->required();
    calib->add_option("--method", cal_method, "MCP, GCP, CCP-NC, CCP-FC or CCP-NN");
    calib->add_option("--alpha", cal_alpha);
    calib->add_option("--gamma", cal_ccp.gamma);
    calib->add_option("--n-clusters", cal_ccp.n_clusters);
    calib->add_option("--n-neighbors", cal_ccp.n_neighbors);
    calib->add_option("--pooling", cal_pooling, "union or intersection");
    calib->add_option("--seed", cal_ccp.seed);
    add_feature_options(calib, cal_features);
    calib->add_option("--out", cal_out, "Calibration JSON")->required();

    // ---- predict-intervals ---------------------------------------------------
    auto* pi = app.add_subcommand("predict-intervals", "Intervals for test rows from a calibration model");
    std::string pi_cal, pi_in, pi_rows, pi_out;
    std::optional<double> pi_alpha;
    FeaturePaths pi_features;
    pi->add_option("--calibration", pi_cal)->required();
    pi->add_option("--interactions", pi_in, "Interactions CSV with predictions")->required();
    pi->add_option("--rows", pi_rows, "Test row index file")->required();
    pi->add_option("--alpha", pi_alpha, "Override the calibrated alpha");
    add_feature_options(pi, pi_features);
    pi->add_option("--out", pi_out, "Intervals CSV")->required();

    // ---- evaluate ------------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "Coverage, width and MACG of an intervals CSV");
    std::string ev_intervals, ev_in, ev_json, ev_csv, ev_split = "-";
    ev->add_option("--intervals", ev_intervals)->required();
    ev->add_option("--interactions", ev_in, "Labelled interactions CSV")->required();
    ev->add_option("--split-name", ev_split, "Split label for the CSV row");
    ev->add_option("--json", ev_json, "Nested JSON report");
    ev->add_option("--csv", ev_csv, "Flat CSV report");

    // ---- tune ----------------------------------------------------------------
    auto* tune = app.add_subcommand("tune", "Grid-search gamma and K for CCP-NC or CCP-FC");
    std::string tune_in, tune_cal, tune_eval, tune_method = "CCP-NC", tune_out, tune_pooling = "union";
    std::vector<double> tune_alphas{0.1};
    GridSpec tune_grid;
    std::uint64_t tune_seed = 0;
    FeaturePaths tune_features;
    tune->add_option("--interactions", tune_in, "Interactions CSV with predictions")->required();
    tune->add_option("--cal-rows", tune_cal)->required();
    tune->add_option("--eval-rows", tune_eval)->required();
    tune->add_option("--method", tune_method, "CCP-NC or CCP-FC");
    tune->add_option("--alphas", tune_alphas)->delimiter(',');
    tune->add_option("--gammas", tune_grid.gammas)->delimiter(',');
    tune->add_option("--ks", tune_grid.ks)->delimiter(',');
    tune->add_option("--pooling", tune_pooling);
    tune->add_option("--seed", tune_seed)->required();
    add_feature_options(tune, tune_features);
    tune->add_option("--out", tune_out, "Grid CSV")->required();

    // ---- report --------------------------------------------------------------
    auto* report = app.add_subcommand("report", "Collect every report.json under a run directory into one CSV");
    std::string report_dir, report_out;
    report->add_option("--run-dir", report_dir)->required();
    report->add_option("--out", report_out, "CSV output (stdout when omitted)");

    // ---- run -----------------------------------------------------------------
    auto* run = app.add_subcommand("run", "Full pipeline from a JSON config; --a.b value overrides any field");
    std::string run_config;
    std::uint64_t run_seed = 0;
    run->add_option("--config", run_config, "JSON config file");
    run->add_option("--seed", run_seed)->required();
    run->allow_extras();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) {
            if (!synth_config.empty()) sspec = config_from_json(resolve_config_json(read_json(synth_config))).data.synthetic;
            if (o_drugs->count()) sspec.n_drugs = n_drugs;
            if (o_proteins->count()) sspec.n_proteins = n_proteins;
            if (o_density->count()) sspec.density = density;
            if (o_latent->count()) sspec.latent_dim = latent_dim;
            sspec.seed = synth_seed;
            const auto data = generate_synthetic(sspec);
            ensure_dir(synth_out);
            write_table(data.table, (fs::path(synth_out) / "interactions.csv").string());
            write_features(data.drug_features, (fs::path(synth_out) / "drug_features.csv").string());
            write_features(data.protein_features, (fs::path(synth_out) / "protein_features.csv").string());
            std::cout << "wrote " << data.table.size() << " interactions to " << synth_out << '\n';
        } else if (*split) {
            const auto table = load_interactions(split_in);
            const auto s = make_split(table, SplitStrategy{parse_split_kind(split_strategy), split_seed});
            ensure_dir(split_out);
            const fs::path dir(split_out);
            write_row_indices(s.train_rows, (dir / "train_rows.txt").string());
            write_row_indices(s.cal_rows, (dir / "cal_rows.txt").string());
            write_row_indices(s.test_rows, (dir / "test_rows.txt").string());
            write_json(split_provenance(s), (dir / "split.json").string());
            std::cout << split_provenance(s).dump() << '\n';
        } else if (*fit) {
            const auto table = load_interactions(fit_in);
            const SideInputs side(fit_features);
            if (!side.drug_features || !side.protein_features)
                throw ConfigError("fit needs --drug-features and --protein-features");
            const auto rows = load_row_indices(fit_rows);
            for (auto r : rows)
                if (r >= table.size()) throw ValidationError("train row " + std::to_string(r) + " is out of range");
            const auto x = build_pair_features(table, rows, *side.drug_features, *side.protein_features);
            std::vector<double> y(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) y[i] = table[rows[i]].label;
            const auto model = fit_gbm(x, y, gbm);
            write_json(to_json(model), fit_model);
            if (!fit_table.empty()) {
                std::vector<std::size_t> all(table.size());
                for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                const auto yhat =
                    predict(model, build_pair_features(table, all, *side.drug_features, *side.protein_features));
                std::vector<std::optional<double>> preds(yhat.begin(), yhat.end());
                write_table(table.with_predictions(preds), fit_table);
            }
        } else if (*attach) {
            const auto table = load_interactions(attach_in);
            std::vector<std::size_t> rows;
            if (!attach_rows.empty()) rows = load_row_indices(attach_rows);
            write_table(attach_external_predictions(table, attach_preds, attach_overwrite, rows), attach_out);
        } else if (*calib) {
            const auto table = load_interactions(cal_in);
            const auto rows = load_row_indices(cal_rows);
            const SideInputs side(cal_features);
            cal_ccp.pooling = parse_pooling(cal_pooling);
            const auto c = calibrate(parse_method(cal_method), table, rows, cal_alpha, cal_ccp, side.view());
            write_json(to_json(c), cal_out);
        } else if (*pi) {
            auto cal = calibration_from_json(read_json(pi_cal));
            if (pi_alpha) cal = with_alpha(std::move(cal), *pi_alpha);
            const auto table = load_interactions(pi_in);
            const auto rows = load_row_indices(pi_rows);
            const SideInputs side(pi_features);
            const auto queries = make_queries(table, rows);
            const auto pred = predict_intervals(cal, queries, side.view());
            auto out = open_output(pi_out);
            write_intervals_csv(out, queries, pred, to_string(method_of(cal)), alpha_of(cal));
        } else if (*ev) {
            const auto table = load_interactions(ev_in);
            auto in = open_input(ev_intervals);
            const auto rows = read_intervals_csv(in, ev_intervals);
            if (rows.empty()) throw ValidationError(ev_intervals + ": no intervals");
            std::map<std::pair<DrugId, ProteinId>, std::size_t> index;
            for (std::size_t i = 0; i < table.size(); ++i) index.emplace(std::make_pair(table[i].drug, table[i].protein), i);
            std::vector<std::size_t> table_rows;
            std::vector<PredictionInterval> intervals;
            for (const auto& r : rows) {
                auto it = index.find({r.drug, r.protein});
                if (it == index.end())
                    throw ValidationError("interval for (" + r.drug.token + ", " + r.protein.token +
                                          ") has no labelled row");
                if (r.alpha != rows.front().alpha) throw ValidationError("intervals CSV mixes alpha values");
                table_rows.push_back(it->second);
                intervals.push_back(r.interval());
            }
            const auto rep = evaluate_intervals(table, table_rows, intervals, rows.front().alpha);
            Json j = to_json(rep);
            j["method"] = rows.front().method;
            j["split"] = ev_split;
            if (!ev_json.empty()) write_json(j, ev_json);
            if (!ev_csv.empty()) {
                auto out = open_output(ev_csv);
                out << kReportCsvHeader << '\n';
                write_report_row(out, rep, rows.front().method, ev_split);
            }
            std::cout << kReportCsvHeader << '\n';
            write_report_row(std::cout, rep, rows.front().method, ev_split);
        } else if (*tune) {
            const auto table = load_interactions(tune_in);
            const auto cal = load_row_indices(tune_cal);
            const auto eval = load_row_indices(tune_eval);
            const SideInputs side(tune_features);
            const Method m = parse_method(tune_method);
            GridInputs gi{table,
                          cal,
                          eval,
                          ccp_method_of(m),
                          tune_alphas,
                          tune_seed,
                          side.view().drug_features,
                          side.view().protein_features,
                          parse_pooling(tune_pooling)};
            const auto g = grid_search(gi, tune_grid);
            auto out = open_output(tune_out);
            write_grid_csv(out, g);
            std::cout << Json{{"gamma", g.best_gamma}, {"k", g.best_k}, {"objective", num(g.objective)}}.dump()
                      << '\n';
        } else if (*report) {
            std::vector<fs::path> files;
            if (!fs::is_directory(report_dir)) throw IoError("'" + report_dir + "' is not a directory");
            for (const auto& e : fs::recursive_directory_iterator(report_dir))
                if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            std::ostringstream csv;
            csv << "path,method,split,alpha,n_test,coverage,mean_width,macg_drug,macg_protein,combined_macg\n";
            for (const auto& f : files) {
                const auto j = read_json(f.string());
                csv << fs::relative(f, report_dir).generic_string() << ',' << field(j, "method").get<std::string>()
                    << ',' << field(j, "split").get<std::string>() << ','
                    << format_double(field(j, "alpha").get<double>()) << ','
                    << field(j, "n_test").get<std::size_t>() << ',' << format_double(num_of(field(j, "coverage")))
                    << ',' << format_double(num_of(field(j, "mean_width"))) << ','
                    << format_double(num_of(field(field(j, "macg_drug"), "macg"))) << ','
                    << format_double(num_of(field(field(j, "macg_protein"), "macg"))) << ','
                    << format_double(num_of(field(j, "combined_macg"))) << '\n';
            }
            if (report_out.empty()) {
                std::cout << csv.str();
            } else {
                auto out = open_output(report_out);
                out << csv.str();
            }
        } else if (*run) {
            Json cfg = run_config.empty() ? Json::object() : read_json(run_config);
            apply_overrides(cfg, run->remaining());
            cfg["seed"] = run_seed;
            const auto manifest = run_experiment(cfg);
            std::cout << "wrote " << manifest.interval_files.size() << " interval files; config "
                      << manifest.config_hash << '\n';
        }
    } catch (const Error& e) {
        return fail(e.what(), exit_code(e.kind()));
    } catch (const Json::exception& e) {
        return fail(std::string("bad JSON: ") + e.what(), 2);
    } catch (const std::exception& e) {
        return fail(e.what(), 2);
    }
    return 0;
}
