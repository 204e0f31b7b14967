#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "dticp/predictor.hpp"
#include "dticp/serialize.hpp"

using namespace dticp;
using Catch::Approx;

namespace {

FeatureMatrix matrix(const std::vector<std::vector<double>>& rows) {
    FeatureMatrix x(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) x(i, j) = rows[i][j];
    return x;
}

struct Stump {
    std::size_t feature = 0;
    double lo = 0.0, hi = 0.0;  // consecutive sorted values around the cut
    double left_mean = 0.0, right_mean = 0.0;
    double sse = INFINITY;
};

// Exhaustive search over every (feature, cut between consecutive distinct values).
Stump brute_force_stump(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
    Stump best;
    const std::size_t n = x.size(), d = x[0].size();
    for (std::size_t f = 0; f < d; ++f) {
        std::vector<double> vals;
        for (const auto& r : x) vals.push_back(r[f]);
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        for (std::size_t c = 0; c + 1 < vals.size(); ++c) {
            double sl = 0, sr = 0;
            int nl = 0, nr = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (x[i][f] <= vals[c]) {
                    sl += y[i];
                    ++nl;
                } else {
                    sr += y[i];
                    ++nr;
                }
            }
            const double ml = sl / nl, mr = sr / nr;
            double sse = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double m = x[i][f] <= vals[c] ? ml : mr;
                sse += (y[i] - m) * (y[i] - m);
            }
            if (sse < best.sse) best = {f, vals[c], vals[c + 1], ml, mr, sse};
        }
    }
    return best;
}

} // namespace

TEST_CASE("gbm config defaults and validation") {
    const GbmConfig c;
    CHECK(c.n_stages == 500);
    CHECK(c.learning_rate == 0.05);
    CHECK(c.max_depth == 6);
    CHECK(c.min_samples_leaf == 1);
    GbmConfig bad;
    bad.n_stages = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.learning_rate = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("two-point stump") {
    const auto x = matrix({{0.0}, {1.0}});
    const std::vector<double> y{0.0, 1.0};
    GbmConfig cfg;
    cfg.n_stages = 1;
    cfg.learning_rate = 1.0;
    cfg.max_depth = 1;
    auto m = fit_gbm(x, y, cfg);
    CHECK(m.init_value == 0.5);
    CHECK(predict(m, x) == std::vector<double>{0.0, 1.0});

    cfg.learning_rate = 0.05;
    m = fit_gbm(x, y, cfg);
    const auto p = predict(m, x);
    CHECK(p[0] == Approx(0.475).epsilon(1e-15));
    CHECK(p[1] == Approx(0.525).epsilon(1e-15));
}

TEST_CASE("constant labels are predicted exactly") {
    std::mt19937_64 gen(1);
    std::normal_distribution<double> n;
    std::vector<std::vector<double>> rows(50, std::vector<double>(3));
    for (auto& r : rows)
        for (auto& v : r) v = n(gen);
    const std::vector<double> y(50, 0.1 + 0.2);
    GbmConfig cfg;
    cfg.n_stages = 20;
    const auto m = fit_gbm(matrix(rows), y, cfg);
    for (double p : predict(m, matrix(rows))) CHECK(p == y[0]);
    const auto other = matrix({{5.0, -3.0, 1e6}});
    CHECK(predict(m, other)[0] == y[0]);
}

TEST_CASE("training MSE never increases across stages") {
    std::mt19937_64 gen(2);
    std::normal_distribution<double> n;
    for (int fixture = 0; fixture < 5; ++fixture) {
        const std::size_t rows = 40 + 30 * fixture;
        std::vector<std::vector<double>> x(rows, std::vector<double>(4));
        std::vector<double> y(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            for (auto& v : x[i]) v = std::round(n(gen) * 4) / 4;  // ties in feature values
            y[i] = std::sin(x[i][0]) + x[i][1] * x[i][2] + 0.3 * n(gen);
        }
        GbmConfig cfg;
        cfg.n_stages = 60;
        cfg.learning_rate = 0.1;
        cfg.max_depth = 3;
        std::vector<double> trace;
        fit_gbm(matrix(x), y, cfg, &trace);
        REQUIRE(trace.size() == cfg.n_stages + 1);
        for (std::size_t t = 1; t < trace.size(); ++t) CHECK(trace[t] <= trace[t - 1]);
        CHECK(trace.back() < trace.front());
    }
}

TEST_CASE("depth-1 single stage equals the brute-force best stump") {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int fixture = 0; fixture < 20; ++fixture) {
        const std::size_t rows = 8 + static_cast<std::size_t>(fixture) * 3, dims = 1 + fixture % 4;
        std::vector<std::vector<double>> x(rows, std::vector<double>(dims));
        std::vector<double> y(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            for (auto& v : x[i]) v = u(gen);
            y[i] = 2.0 * (x[i][0] > 0.1) + u(gen);
        }
        GbmConfig cfg;
        cfg.n_stages = 1;
        cfg.learning_rate = 1.0;
        cfg.max_depth = 1;
        const auto m = fit_gbm(matrix(x), y, cfg);
        const auto oracle = brute_force_stump(x, y);
        const auto& root = m.trees[0].nodes[0];
        REQUIRE(root.feature == static_cast<int>(oracle.feature));
        CHECK(root.threshold >= oracle.lo);
        CHECK(root.threshold < oracle.hi);
        const auto p = predict(m, matrix(x));
        for (std::size_t i = 0; i < rows; ++i) {
            const double want = x[i][oracle.feature] <= oracle.lo ? oracle.left_mean : oracle.right_mean;
            CHECK(p[i] == Approx(want).margin(1e-12));
        }
    }
}

TEST_CASE("split ties go to the lowest feature") {
    // Features 0 and 1 are identical, so both give the same gain.
    const auto x = matrix({{0, 0}, {1, 1}, {2, 2}, {3, 3}});
    const std::vector<double> y{0, 0, 1, 1};
    GbmConfig cfg;
    cfg.n_stages = 1;
    cfg.max_depth = 1;
    const auto m = fit_gbm(x, y, cfg);
    CHECK(m.trees[0].nodes[0].feature == 0);
    CHECK(m.trees[0].nodes[0].threshold == 1.5);
}

TEST_CASE("trees respect the depth limit and stage count") {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> n;
    std::vector<std::vector<double>> x(200, std::vector<double>(3));
    std::vector<double> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
        for (auto& v : x[i]) v = n(gen);
        y[i] = n(gen);
    }
    GbmConfig cfg;
    cfg.n_stages = 7;
    cfg.max_depth = 3;
    cfg.min_samples_leaf = 5;
    const auto m = fit_gbm(matrix(x), y, cfg);
    CHECK(m.trees.size() == 7);
    for (const auto& t : m.trees) CHECK(t.depth() <= 3);
}

TEST_CASE("prediction errors and determinism") {
    const auto x = matrix({{0.0, 1.0}, {1.0, 0.0}, {2.0, 2.0}});
    const std::vector<double> y{1, 2, 3};
    GbmConfig cfg;
    cfg.n_stages = 5;
    const auto m = fit_gbm(x, y, cfg);
    CHECK_THROWS_AS(predict(m, matrix({{1.0}})), ValidationError);
    CHECK(predict(m, x) == predict(m, x));
    // Row order does not change per-row predictions.
    const auto rev = matrix({{2.0, 2.0}, {1.0, 0.0}, {0.0, 1.0}});
    const auto a = predict(m, x), b = predict(m, rev);
    CHECK(a[0] == b[2]);
    CHECK(a[2] == b[0]);

    auto bad = matrix({{NAN, 1.0}});
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(fit_gbm(bad, one, cfg), ValidationError);
}

TEST_CASE("model JSON round trip") {
    std::mt19937_64 gen(8);
    std::normal_distribution<double> n;
    std::vector<std::vector<double>> x(60, std::vector<double>(2));
    std::vector<double> y(60);
    for (std::size_t i = 0; i < 60; ++i) {
        for (auto& v : x[i]) v = n(gen);
        y[i] = x[i][0] - x[i][1] + n(gen);
    }
    GbmConfig cfg;
    cfg.n_stages = 10;
    cfg.max_depth = 3;
    const auto m = fit_gbm(matrix(x), y, cfg);
    const auto back = gbm_from_json(Json::parse(to_json(m).dump()));
    CHECK(predict(back, matrix(x)) == predict(m, matrix(x)));
    Json broken = to_json(m);
    broken["version"] = 99;
    CHECK_THROWS_AS(gbm_from_json(broken), ValidationError);
}

TEST_CASE("external predictions") {
    const InteractionTable t({{DrugId("a"), ProteinId("p"), 1.0, {}}, {DrugId("b"), ProteinId("p"), 2.0, 0.5}});
    std::stringstream full("drug_id,protein_id,prediction\na,p,1.25\nb,p,2.5\n");
    const auto preds = read_predictions(full);

    CHECK_THROWS_WITH(attach_external_predictions(t, preds), Catch::Matchers::ContainsSubstring("overwrite"));
    const auto filled = attach_external_predictions(t, preds, true);
    CHECK(*filled[0].prediction == 1.25);
    CHECK(*filled[1].prediction == 2.5);

    std::stringstream partial("drug_id,protein_id,prediction\nb,p,2.5\n");
    CHECK_THROWS_WITH(attach_external_predictions(t, read_predictions(partial), true),
                      Catch::Matchers::ContainsSubstring("(a, p)"));

    const std::vector<std::size_t> only_first{0};
    const auto one = attach_external_predictions(t, preds, false, only_first);
    CHECK(*one[0].prediction == 1.25);
    CHECK(*one[1].prediction == 0.5);
}

TEST_CASE("pair features concatenate drug then protein vectors") {
    const InteractionTable t({{DrugId("a"), ProteinId("p"), 1.0, {}}});
    DrugFeatures d(2);
    d.insert(DrugId("a"), {1.0, 2.0});
    ProteinFeatures p(1);
    p.insert(ProteinId("p"), {3.0});
    const std::vector<std::size_t> rows{0};
    const auto x = build_pair_features(t, rows, d, p);
    CHECK(x.cols() == 3);
    CHECK(x(0, 0) == 1.0);
    CHECK(x(0, 2) == 3.0);
    ProteinFeatures empty(1);
    CHECK_THROWS_AS(build_pair_features(t, rows, d, empty), ValidationError);
}
