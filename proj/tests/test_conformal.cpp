#include <catch_amalgamated.hpp>

#include <random>

#include "dticp/conformal.hpp"

using namespace dticp;

namespace {

// Smallest candidate q with #{s <= q} >= ceil((1 - alpha)(n + 1)), searching
// the scores themselves; +inf when no score qualifies.
double brute_quantile(const std::vector<double>& s, double alpha) {
    const double need = (1.0 - alpha) * static_cast<double>(s.size() + 1);
    double best = kInf;
    for (double q : s) {
        std::size_t c = 0;
        for (double x : s) c += x <= q ? 1 : 0;
        if (static_cast<double>(c) >= need - 1e-9 && q < best) best = q;
    }
    return best;
}

std::vector<CalScore> tagged(std::vector<double> v, std::size_t first_row = 0) {
    std::vector<CalScore> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back({first_row + i, v[i]});
    return out;
}

InteractionTable predicted(std::vector<std::tuple<std::string, std::string, double, double>> rows) {
    std::vector<InteractionRecord> recs;
    for (auto& [d, p, y, yhat] : rows) recs.push_back({DrugId(d), ProteinId(p), y, yhat});
    return InteractionTable(std::move(recs));
}

} // namespace

TEST_CASE("nonconformity scores") {
    CHECK(score(2.0, 2.0) == 0.0);
    CHECK(score(3.0, 1.0) == 2.0);
    CHECK(score(3.0, 1.0, ScoreKind::NormalizedResidual, 2.0) == 1.0);
    CHECK_THROWS_AS(score(3.0, 1.0, ScoreKind::NormalizedResidual, 0.0), DomainError);
    CHECK_THROWS_AS(score(3.0, 1.0, ScoreKind::NormalizedResidual, -1.0), DomainError);
}

TEST_CASE("conformal quantile worked examples") {
    std::vector<double> ten{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    CHECK(conformal_quantile(ten, 0.1).value == 10.0);
    CHECK(brute_quantile(ten, 0.1) == 10.0);
    std::vector<double> one{5};
    CHECK(conformal_quantile(one, 0.1).unbounded());
    std::vector<double> four{1, 2, 3, 4};
    CHECK(conformal_quantile(four, 0.5).value == 3.0);
    CHECK(brute_quantile(four, 0.5) == 3.0);
    std::vector<double> none;
    CHECK(conformal_quantile(none, 0.3).unbounded());
    CHECK_THROWS_AS(conformal_quantile(four, 0.0), ConfigError);
    CHECK_THROWS_AS(conformal_quantile(four, 1.0), ConfigError);
}

TEST_CASE("conformal quantile agrees with the brute-force oracle") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> a(0.01, 0.5);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = gen() % 120;
        std::vector<double> s(n);
        for (auto& x : s) x = static_cast<double>(gen() % 30);  // many ties
        const double alpha = a(gen);
        const auto q = conformal_quantile(s, alpha);
        CHECK(q.value == brute_quantile(s, alpha));
        CHECK(q.n_cal == n);
        CHECK(q.unbounded() == (conformal_rank(n, alpha) > n));
    }
}

TEST_CASE("threshold is non-increasing in alpha") {
    std::mt19937_64 gen(5);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> s(97);
    for (auto& x : s) x = e(gen);
    double prev = kInf;
    for (double alpha = 0.01; alpha < 0.99; alpha += 0.01) {
        const double q = conformal_quantile(s, alpha).value;
        CHECK(q <= prev);
        prev = q;
    }
}

TEST_CASE("intervals around the prediction") {
    auto iv = mcp_interval(0.0, {1.0, 10, 0.1});
    CHECK(iv.lower() == -1.0);
    CHECK(iv.upper() == 1.0);
    iv = mcp_interval(2.0, {kInf, 1, 0.1});
    CHECK(iv.lower() == -kInf);
    CHECK(iv.upper() == kInf);
    CHECK(iv.contains(1e300));
    iv = mcp_interval(1.0, {0.5, 10, 0.1}, ScoreKind::NormalizedResidual, 2.0);
    CHECK(iv.lower() == 0.0);
    CHECK(iv.upper() == 2.0);
    CHECK_THROWS_AS(mcp_interval(1.0, {0.5, 10, 0.1}, ScoreKind::NormalizedResidual), ConfigError);
    CHECK_THROWS_AS(mcp_interval(1.0, {0.5, 10, 0.1}, ScoreKind::AbsoluteResidual, 2.0), ConfigError);
    CHECK(mcp_interval(1.0, {0.5, 10, 0.1}).contains(1.5));
}

TEST_CASE("row-tagged score set operations") {
    const auto a = tagged({1, 2, 3}, 0);            // rows 0,1,2
    const auto b = tagged({3, 4}, 2);               // rows 2,3
    const auto u = union_by_row(a, b);
    REQUIRE(u.size() == 4);
    CHECK(values_of(u) == std::vector<double>{1, 2, 3, 4});
    const auto i = intersect_by_row(a, b);
    REQUIRE(i.size() == 1);
    CHECK(i[0].row == 2);
}

TEST_CASE("group calibration bookkeeping") {
    const auto t = predicted({{"d", "p1", 1.0, 0.0}, {"d", "p2", 2.0, 0.5}});
    const std::vector<std::size_t> rows{0, 1};
    const auto g = build_group_calibration(t, rows, 0.1);
    CHECK(g.per_drug.size() == 1);
    CHECK(g.per_drug.at(DrugId("d")).size() == 2);
    CHECK(g.per_protein.size() == 2);
    CHECK(g.global_scores.size() == 2);

    const std::vector<std::size_t> none;
    const auto empty = build_group_calibration(t, none, 0.1);
    CHECK(empty.per_drug.empty());
    CHECK(empty.global_scores.empty());
    CHECK(gcp_threshold(empty, DrugId("d"), ProteinId("p1")).unbounded());
}

TEST_CASE("group thresholds follow the fallback ladder") {
    // Drug a: residuals 1,2,3 on proteins x,y,z. Drug b: residuals 10,20 on proteins u,v.
    const auto t = predicted({{"a", "x", 1, 0}, {"a", "y", 2, 0}, {"a", "z", 3, 0}, {"b", "u", 10, 0}, {"b", "v", 20, 0}});
    const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    const auto g = build_group_calibration(t, rows, 0.5);
    CHECK(gcp_threshold(g, DrugId("a"), ProteinId("new")).value == 2.0);
    CHECK(gcp_threshold(g, DrugId("new"), ProteinId("new")).value ==
          conformal_quantile(std::vector<double>{1, 2, 3, 10, 20}, 0.5).value);
    CHECK(gcp_threshold(g, DrugId("new"), ProteinId("u")).value == 10.0);  // n = 1, k = 1
    const auto strict = build_group_calibration(t, rows, 0.1);
    CHECK(gcp_threshold(strict, DrugId("new"), ProteinId("u")).unbounded());
}

TEST_CASE("group union counts shared rows once") {
    // Drug a: rows 0,1 scores 1,2. Protein q: rows 2,3 scores 3,4 (disjoint rows).
    const auto t = predicted({{"a", "p", 1, 0}, {"a", "r", 2, 0}, {"b", "q", 3, 0}, {"c", "q", 4, 0}});
    const std::vector<std::size_t> rows{0, 1, 2, 3};
    const auto g = build_group_calibration(t, rows, 0.2);
    CHECK(gcp_threshold(g, DrugId("a"), ProteinId("q")).value == 4.0);

    // Overlapping: drug a on rows 0,1; protein p on rows 0,2. Union rows {0,1,2}.
    const auto t2 = predicted({{"a", "p", 1, 0}, {"a", "r", 2, 0}, {"b", "p", 3, 0}});
    const auto g2 = build_group_calibration(t2, std::vector<std::size_t>{0, 1, 2}, 0.5);
    const auto q = gcp_threshold(g2, DrugId("a"), ProteinId("p"));
    CHECK(q.n_cal == 3);
    CHECK(q.value == 2.0);
}

TEST_CASE("single-group data makes GCP equal MCP") {
    std::vector<std::tuple<std::string, std::string, double, double>> rows;
    std::mt19937_64 gen(9);
    std::normal_distribution<double> n;
    for (int i = 0; i < 40; ++i) rows.emplace_back("d", "p" + std::to_string(i), n(gen), n(gen));
    const auto t = predicted(rows);
    std::vector<std::size_t> cal, test;
    for (std::size_t i = 0; i < 40; ++i) (i < 30 ? cal : test).push_back(i);
    const auto m = calibrate_mcp(t, cal, 0.1);
    const auto g = build_group_calibration(t, cal, 0.1);
    const auto queries = make_queries(t, test);
    const auto a = predict_intervals_mcp(m, queries), b = predict_intervals_gcp(g, queries);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].interval.center == b[i].interval.center);
        CHECK(a[i].interval.half_width == b[i].interval.half_width);
        CHECK(a[i].interval.center == queries[i].prediction);
    }
}

TEST_CASE("smaller alpha gives nested wider intervals") {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> n;
    for (int fixture = 0; fixture < 10; ++fixture) {
        std::vector<std::tuple<std::string, std::string, double, double>> rows;
        for (int i = 0; i < 120; ++i)
            rows.emplace_back("d" + std::to_string(gen() % 6), "p" + std::to_string(i), n(gen), n(gen));
        const auto t = predicted(rows);
        std::vector<std::size_t> cal, test;
        for (std::size_t i = 0; i < t.size(); ++i) (i % 3 ? cal : test).push_back(i);
        const auto queries = make_queries(t, test);
        for (bool group : {false, true}) {
            std::vector<IntervalPrediction> wide, narrow;
            if (group) {
                wide = predict_intervals_gcp(build_group_calibration(t, cal, 0.1), queries);
                narrow = predict_intervals_gcp(build_group_calibration(t, cal, 0.2), queries);
            } else {
                wide = predict_intervals_mcp(calibrate_mcp(t, cal, 0.1), queries);
                narrow = predict_intervals_mcp(calibrate_mcp(t, cal, 0.2), queries);
            }
            for (std::size_t i = 0; i < wide.size(); ++i) {
                CHECK(wide[i].interval.lower() <= narrow[i].interval.lower());
                CHECK(wide[i].interval.upper() >= narrow[i].interval.upper());
            }
        }
    }
}

TEST_CASE("queries need predictions") {
    const InteractionTable t({{DrugId("a"), ProteinId("p"), 1.0, {}}});
    const std::vector<std::size_t> rows{0};
    CHECK_THROWS_AS(make_queries(t, rows), ValidationError);
    CHECK_THROWS_AS(calibration_scores(t, rows), ValidationError);
}
