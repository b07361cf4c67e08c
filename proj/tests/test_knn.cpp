#include <doctest.h>

#include <cmath>

#include "knnfuse/error.hpp"
#include "knnfuse/knn.hpp"
#include "oracle.hpp"

using namespace knnfuse;
using testutil::bank_from;

namespace {

NeighborSet neighbors(std::vector<double> d, std::vector<std::uint32_t> labels) {
    NeighborSet ns;
    for (std::size_t i = 0; i < d.size(); ++i) ns.indices.push_back(i);
    ns.distances = std::move(d);
    ns.labels = std::move(labels);
    return ns;
}

double pair_distance(std::vector<float> q, std::vector<float> x, Metric metric) {
    const auto bank = bank_from({x}, {0}, 2);
    return pairwise_distances(MatrixView{q, 1, q.size()}, bank, metric)[0];
}

}  // namespace

TEST_CASE("distance examples") {
    CHECK(pair_distance({0, 0}, {3, 4}, Metric::SqEuclidean) == 25.0);
    CHECK(pair_distance({1.5f, -2}, {1.5f, -2}, Metric::SqEuclidean) == 0.0);
    CHECK(pair_distance({1.5f, -2}, {1.5f, -2}, Metric::Cosine) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(pair_distance({1, 0}, {0, 1}, Metric::Cosine) == 1.0);
}

TEST_CASE("metric and k parsing") {
    CHECK(parse_metric("l2") == Metric::SqEuclidean);
    CHECK(parse_metric("cosine") == Metric::Cosine);
    CHECK_THROWS_AS(parse_metric("manhattan"), Error);
    CHECK(KSpec::parse("mean").is_mean_per_class());
    CHECK(KSpec::parse("16") == KSpec::fixed(16));
    CHECK_THROWS_AS(KSpec::parse("0"), Error);
    CHECK_THROWS_AS(KSpec::parse("4x"), Error);
}

TEST_CASE("topk examples") {
    const auto three = bank_from({{0}, {1}, {2}}, {0, 1, 0}, 2);
    const float q0[] = {0.f};
    try {
        topk(q0, three, KnnConfig{KSpec::fixed(3), 1.0, Metric::SqEuclidean}, 1);
        FAIL("expected KTooLarge");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::KTooLarge);
    }

    Rng rng(1);
    const auto bank = testutil::random_bank(rng, 10, 3, 2);
    const auto ns = topk(bank.row(5), bank, KnnConfig{KSpec::fixed(1), 1.0, Metric::SqEuclidean});
    CHECK(ns.indices == std::vector<std::size_t>{5});
    CHECK(ns.distances[0] == 0.0);
}

TEST_CASE("topk matches the full-sort oracle on a random bank") {
    Rng rng(2);
    const auto bank = testutil::random_bank(rng, 200, 8, 3);
    const auto queries = testutil::random_bank(rng, 20, 8, 3);
    const KnnIndex index(bank, Metric::SqEuclidean);
    for (std::size_t k : {1, 7, 64, 200}) {
        const auto got = index.search(queries.features(), k);
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto want = oracle::topk(queries.row(i), bank, k, Metric::SqEuclidean);
            CHECK(got[i].indices == want.indices);
            for (std::size_t t = 0; t < k; ++t) CHECK(got[i].distances[t] == doctest::Approx(want.distances[t]));
        }
    }
}

TEST_CASE("ties are broken by ascending bank index") {
    const auto bank = bank_from({{1, 1}, {0, 0}, {1, 1}, {1, 1}}, {0, 1, 0, 1}, 2);
    const float q[] = {1, 1};
    const auto ns = topk(q, bank, KnnConfig{KSpec::fixed(3), 1.0, Metric::SqEuclidean});
    CHECK(ns.indices == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("search results do not depend on worker count") {
    Rng rng(4);
    const auto bank = testutil::random_bank(rng, 700, 13, 5, false, 0.2);
    const auto queries = testutil::random_bank(rng, 77, 13, 5);
    for (Metric m : {Metric::SqEuclidean, Metric::Cosine}) {
        const KnnIndex index(bank, m);
        const auto one = index.search(queries.features(), 33, {}, 1);
        const auto four = index.search(queries.features(), 33, {}, 4);
        for (std::size_t i = 0; i < one.size(); ++i) {
            CHECK(one[i].indices == four[i].indices);
            CHECK(one[i].distances == four[i].distances);
            CHECK(index.search_one(queries.row(i), 33).distances == one[i].distances);
        }
    }
}

TEST_CASE("prefix of a larger search equals the smaller search") {
    Rng rng(6);
    const auto bank = testutil::random_bank(rng, 300, 4, 3, true);
    const KnnIndex index(bank, Metric::SqEuclidean);
    const auto big = index.search_one(bank.row(0), 50);
    for (std::size_t k : {1, 5, 20}) CHECK(big.prefix(k).indices == index.search_one(bank.row(0), k).indices);
}

TEST_CASE("cosine rejects zero vectors") {
    const auto bank = bank_from({{0, 0}, {1, 0}}, {0, 1}, 2);
    CHECK_THROWS_AS(KnnIndex(bank, Metric::Cosine), Error);
}

TEST_CASE("posterior examples") {
    SUBCASE("k=1 is one-hot") {
        for (double tau : {1e-3, 1.0, 1e3}) {
            CHECK(knn_posterior(neighbors({0.7}, {3}), tau, 5) == ProbDist{0, 0, 0, 1, 0});
        }
    }
    SUBCASE("equal distances split evenly") {
        CHECK(knn_posterior(neighbors({2, 2}, {0, 1}), 0.3, 2) == ProbDist{0.5, 0.5});
    }
    SUBCASE("two neighbors at distances 0 and 1") {
        const auto p = knn_posterior(neighbors({0, 1}, {0, 1}), 1.0, 2);
        const double e = std::exp(-1.0);
        CHECK(p[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-15));
        CHECK(p[0] == doctest::Approx(0.7311).epsilon(1e-4));
        CHECK(p[1] == doctest::Approx(0.2689).epsilon(1e-4));
    }
    SUBCASE("tau must be positive") {
        CHECK_THROWS_AS(knn_posterior(neighbors({0}, {0}), 0.0, 2), Error);
    }
}

TEST_CASE("posterior properties") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 1 + rng.below(20);
        const std::uint32_t classes = 2 + static_cast<std::uint32_t>(rng.below(30));
        std::vector<double> d(k);
        std::vector<std::uint32_t> l(k);
        for (std::size_t t = 0; t < k; ++t) {
            d[t] = rng.uniform(0.0, 4.0);
            l[t] = static_cast<std::uint32_t>(rng.below(classes));
        }
        std::sort(d.begin(), d.end());
        const double tau = std::pow(10.0, rng.uniform(-2.0, 1.0));
        const auto p = knn_posterior(neighbors(d, l), tau, classes);
        CHECK(is_distribution(p, 1e-9));
        std::size_t support = 0;
        for (double v : p) support += v > 0.0;
        CHECK(support <= k);
        const auto want = oracle::posterior(d, l, tau, classes);
        for (std::uint32_t c = 0; c < classes; ++c) CHECK(p[c] == doctest::Approx(want[c]).epsilon(1e-12));
    }
}

TEST_CASE("moving a neighbor closer raises its class") {
    double prev = 0.0;
    for (double d0 : {3.0, 2.0, 1.0, 0.5, 0.1}) {
        const auto p = knn_posterior(neighbors({d0, 1.0}, {0, 1}), 1.0, 2);
        CHECK(p[0] > prev);
        prev = p[0];
    }
}

TEST_CASE("resolve_k") {
    std::vector<std::vector<float>> rows(8, std::vector<float>{0});
    const auto two_classes = bank_from(rows, {0, 0, 0, 1, 1, 1, 1, 1}, 2);
    CHECK(resolve_k(KSpec::mean_per_class(), two_classes) == 4);
    CHECK(resolve_k(KSpec::fixed(128), two_classes) == 128);
    const auto single = bank_from(std::vector<std::vector<float>>(10, {0}), std::vector<std::uint32_t>(10, 0), 3);
    CHECK(resolve_k(KSpec::mean_per_class(), single) == 9);
}

TEST_CASE("leave-one-out examples") {
    const auto same = bank_from({{0}, {1}}, {1, 1}, 2);
    CHECK(loo_posteriors(same, KnnConfig{KSpec::fixed(1), 1.0, Metric::SqEuclidean}).p_gt ==
          std::vector<double>{1, 1});
    const auto diff = bank_from({{0}, {1}}, {0, 1}, 2);
    CHECK(loo_posteriors(diff, KnnConfig{KSpec::fixed(1), 1.0, Metric::SqEuclidean}).p_gt ==
          std::vector<double>{0, 0});
    CHECK_THROWS_AS(loo_posteriors(diff, KnnConfig{KSpec::fixed(2), 1.0, Metric::SqEuclidean}), Error);
}

TEST_CASE("leave-one-out equals per-row exclusion and never retrieves itself") {
    Rng rng(10);
    const auto bank = testutil::random_bank(rng, 100, 5, 4, false, 0.1);
    const KnnConfig cfg{KSpec::fixed(9), 0.5, Metric::SqEuclidean};
    const auto loo = loo_posteriors(bank, cfg, 3);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto ns = topk(bank.row(i), bank, cfg, i);
        CHECK(std::find(ns.indices.begin(), ns.indices.end(), i) == ns.indices.end());
        CHECK(loo.dists[i] == knn_posterior(ns, cfg.tau, bank.class_count()));
        CHECK(loo.p_gt[i] == loo.dists[i][bank.label(i)]);
    }
}

TEST_CASE("exclusion list must align with queries") {
    const auto bank = bank_from({{0}, {1}, {2}}, {0, 1, 0}, 2);
    const KnnIndex index(bank, Metric::SqEuclidean);
    std::vector<std::optional<std::size_t>> exclude(2);
    CHECK_THROWS_AS(index.search(bank.features(), 1, exclude), Error);
}
