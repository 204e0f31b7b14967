#include <catch_amalgamated.hpp>

#include <random>

#include "dticp/clustering.hpp"

using namespace dticp;
using Catch::Approx;

namespace {

// Percentile by the textbook closest-ranks formula, written out separately.
double oracle_percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p / 100.0;
    const double fl = std::floor(h);
    const auto i = static_cast<std::size_t>(fl);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + (h - fl) * (v[i + 1] - v[i]);
}

BitProfile bits(std::initializer_list<int> b) { return BitProfile::from_bits(std::vector<int>(b)); }

std::vector<std::vector<double>> blobs(std::size_t per, std::mt19937_64& gen) {
    std::normal_distribution<double> n(0.0, 0.1);
    const std::vector<std::vector<double>> centers{{0, 0}, {10, 0}, {0, 10}};
    std::vector<std::vector<double>> pts;
    for (const auto& c : centers)
        for (std::size_t i = 0; i < per; ++i) pts.push_back({c[0] + n(gen), c[1] + n(gen)});
    return pts;
}

} // namespace

TEST_CASE("ECDF deciles of 1..10") {
    std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto e = ecdf_embedding(v);
    REQUIRE(e.values.size() == 9);
    CHECK(e.values[0] == Approx(1.9));
    CHECK(e.values[4] == Approx(5.5));
    CHECK(e.values[8] == Approx(9.1));
}

TEST_CASE("ECDF of a single score is constant") {
    std::vector<double> one{4.25};
    for (double x : ecdf_embedding(one).values) CHECK(x == 4.25);
    std::vector<double> none;
    CHECK_THROWS_AS(ecdf_embedding(none), DegenerateInputError);
}

TEST_CASE("ECDF embedding properties") {
    std::mt19937_64 gen(21);
    std::exponential_distribution<double> e(0.5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(1 + gen() % 60);
        for (auto& x : v) x = e(gen);
        const auto emb = ecdf_embedding(v).values;
        const auto grid = percentile_grid(10);
        for (std::size_t i = 0; i < emb.size(); ++i) {
            CHECK(emb[i] == Approx(oracle_percentile(v, grid[i])).margin(1e-12));
            if (i) CHECK(emb[i] >= emb[i - 1]);
        }
        auto shuffled = v;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        CHECK(ecdf_embedding(shuffled).values == emb);
        const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
        CHECK(emb.front() >= lo);
        CHECK(emb.back() <= hi);
    }
}

TEST_CASE("k-means recovers well-separated blobs") {
    std::mt19937_64 gen(5);
    const auto pts = blobs(30, gen);
    const auto m = kmeans_fit(pts, 3, 1);
    REQUIRE(m.k == 3);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 1; i < 30; ++i) CHECK(m.labels[b * 30 + i] == m.labels[b * 30]);
    CHECK(m.labels[0] != m.labels[30]);
    CHECK(m.labels[30] != m.labels[60]);
    CHECK(m.labels[0] != m.labels[60]);
    for (std::size_t i = 1; i < m.inertia_trace.size(); ++i) CHECK(m.inertia_trace[i] <= m.inertia_trace[i - 1] + 1e-9);
}

TEST_CASE("k-means with k = 1 puts the centroid at the mean") {
    std::mt19937_64 gen(6);
    const auto pts = blobs(10, gen);
    const auto m = kmeans_fit(pts, 1, 3);
    double sx = 0, sy = 0;
    for (const auto& p : pts) {
        sx += p[0];
        sy += p[1];
    }
    CHECK(m.centroids[0][0] == Approx(sx / pts.size()).margin(1e-12));
    CHECK(m.centroids[0][1] == Approx(sy / pts.size()).margin(1e-12));
}

TEST_CASE("k-means inertia never increases and labels are nearest centroids") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> pts(80, std::vector<double>(3));
        for (auto& p : pts)
            for (auto& x : p) x = u(gen);
        const auto m = kmeans_fit(pts, 2 + trial % 6, trial);
        for (std::size_t i = 1; i < m.inertia_trace.size(); ++i)
            CHECK(m.inertia_trace[i] <= m.inertia_trace[i - 1] + 1e-9);
        for (std::size_t i = 0; i < pts.size(); ++i) CHECK(kmeans_assign(m, pts[i]) == m.labels[i]);
        CHECK(kmeans_fit(pts, 2 + trial % 6, trial).centroids == m.centroids);
    }
}

TEST_CASE("k-means with fewer distinct points than k") {
    const std::vector<std::vector<double>> pts{{1.0}, {1.0}, {2.0}, {2.0}};
    const auto m = kmeans_fit(pts, 5, 0);
    CHECK(m.k == 2);
    CHECK(m.requested_k == 5);
    CHECK(m.inertia == 0.0);
    CHECK_THROWS_AS(kmeans_fit({}, 2, 0), DegenerateInputError);
    CHECK_THROWS_AS(kmeans_fit(pts, 0, 0), ConfigError);
    const std::vector<double> wrong{1.0, 2.0};
    CHECK_THROWS_AS(kmeans_assign(m, wrong), ValidationError);
}

TEST_CASE("assignment ties go to the lowest centroid index") {
    KMeansModel m;
    m.k = 2;
    m.centroids = {{0.0}, {2.0}};
    const std::vector<double> mid{1.0};
    CHECK(kmeans_assign(m, mid) == 0);
}

TEST_CASE("Tanimoto worked values") {
    CHECK(tanimoto(bits({1, 1, 0, 0}), bits({1, 0, 1, 0})) == Approx(1.0 / 3.0));
    CHECK(tanimoto(bits({0, 0, 0}), bits({0, 0, 0})) == 1.0);
    CHECK(tanimoto(bits({1, 0}), bits({0, 1})) == 0.0);
    CHECK_THROWS_AS(tanimoto(bits({1}), bits({1, 0})), ValidationError);
}

TEST_CASE("Tanimoto is symmetric, bounded and reflexive") {
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + gen() % 150;  // crosses the 64-bit word boundary
        std::vector<int> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<int>(gen() % 2);
            b[i] = static_cast<int>(gen() % 2);
        }
        const auto pa = BitProfile::from_bits(a), pb = BitProfile::from_bits(b);
        const double s = tanimoto(pa, pb);
        CHECK(s == tanimoto(pb, pa));
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        CHECK(tanimoto(pa, pa) == 1.0);
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < n; ++i) {
            inter += a[i] && b[i];
            uni += a[i] || b[i];
        }
        CHECK(s == (uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0));
    }
}

TEST_CASE("median binarization") {
    DrugFeatures f(2);
    f.insert(DrugId("a"), {1.0, 5.0});
    f.insert(DrugId("b"), {2.0, 5.0});
    f.insert(DrugId("c"), {3.0, 5.0});
    const auto b = binarize_features(f);
    CHECK(b.find(DrugId("a"))->test(0) == false);
    CHECK(b.find(DrugId("b"))->test(0) == false);  // equal to the median
    CHECK(b.find(DrugId("c"))->test(0) == true);
    for (const auto& [_, p] : b.profiles) CHECK(p.test(1) == false);
    CHECK(b.find(DrugId("zz")) == nullptr);
}

TEST_CASE("top-k neighbours order by similarity then id") {
    std::map<DrugId, BitProfile> cands{{DrugId("b"), bits({1, 1, 0})},
                                       {DrugId("a"), bits({1, 1, 0})},
                                       {DrugId("c"), bits({1, 0, 0})},
                                       {DrugId("d"), bits({0, 0, 1})}};
    const auto q = bits({1, 1, 0});
    const auto nn = top_k_neighbors(DrugId("q"), q, cands, 3);
    REQUIRE(nn.neighbors.size() == 3);
    CHECK(nn.neighbors[0].first == DrugId("a"));
    CHECK(nn.neighbors[1].first == DrugId("b"));
    CHECK(nn.neighbors[2].first == DrugId("c"));
    CHECK(nn.neighbors[2].second == 0.5);
    CHECK(top_k_neighbors(DrugId("q"), q, cands, 50).neighbors.size() == 4);
    CHECK_THROWS_AS(top_k_neighbors(DrugId("q"), q, cands, 0), ConfigError);
}
