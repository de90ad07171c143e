#include "driftgate/transfer_gate.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace driftgate;

namespace {

Tensor normal_rows(std::size_t n, double shift, std::mt19937_64& rng)
{
    std::normal_distribution<double> z(0.0, 1.0);
    Tensor t(Shape{n, 1});
    for (double& v : t.values())
        v = z(rng) + shift;
    return t;
}

// K segments of `len` rows each; segment i is shifted by shifts[i]
SeriesView shifted_source(const std::vector<double>& shifts, std::size_t len, std::mt19937_64& rng)
{
    Tensor rows(Shape{shifts.size() * len, 1});
    for (std::size_t i = 0; i < shifts.size(); ++i) {
        auto seg = normal_rows(len, shifts[i], rng);
        std::copy(seg.values().begin(), seg.values().end(), rows.data() + i * len);
    }
    return SeriesView(std::move(rows));
}

Partition equal_partition(std::size_t k, std::size_t len)
{
    Partition p;
    p.segments = k;
    for (std::size_t i = 1; i < k; ++i)
        p.boundaries.push_back(i * len);
    return p;
}

} // namespace

TEST_CASE("subdomain distance")
{
    const KernelConfig cfg{1.0, MmdEstimator::biased};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        SampleSet target(normal_rows(500, 0.0, rng));
        SampleSet same(normal_rows(500, 0.0, rng));
        CHECK(subdomain_distance(target, same, cfg) < 0.05);
    }
    std::mt19937_64 rng(3);
    SampleSet a(normal_rows(40, 0.0, rng));
    SampleSet b(normal_rows(30, 1.0, rng));
    CHECK(std::abs(subdomain_distance(a, a, cfg)) < 1e-12);
    CHECK(subdomain_distance(a, b, cfg) == subdomain_distance(b, a, cfg));
}

TEST_CASE("global average distance")
{
    const std::vector<double> d{1.0, 2.0, 2.5, 3.0, 4.0, 10.0};
    CHECK(global_average_distance(d) == 2.875);
    const std::vector<double> flat(5, 0.7);
    CHECK(global_average_distance(flat) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(global_average_distance(std::vector<double>{1, 5, 9}) == 5.0);
    CHECK(global_average_distance(std::vector<double>{9, 1, 9, 1}) == 5.0);
    CHECK_THROWS_AS(global_average_distance(std::vector<double>{1, 2}), TooFewSubdomainsError);
    CHECK_THROWS_AS(global_average_distance(std::vector<double>{1, -2, 3}), ValidationError);
}

TEST_CASE("transfer plan from distances")
{
    const auto plan = make_transfer_plan({1.0, 2.0, 2.5, 3.0, 4.0, 10.0}, {});
    CHECK(plan.threshold == 2.875);
    CHECK(plan.transferable == std::vector<bool>{true, true, true, false, false, false});
    CHECK(plan.transferable_indices() == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("transfer plan on sampled sub-domains")
{
    const KernelConfig cfg{1.0, MmdEstimator::biased};
    int excluded = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(100 + seed);
        SampleSet target(normal_rows(200, 0.0, rng));
        auto source = shifted_source({0, 0, 10, 0, 0, 0}, 100, rng);
        const auto plan = build_transfer_plan(target, equal_partition(6, 100), source, cfg);
        excluded += plan.transferable[2] ? 0 : 1;
        CHECK(plan.transferable_indices().size() >= 1);
    }
    CHECK(excluded >= 18);

    // sub-domains that match the target all sit near zero distance; the farthest
    // one is above the trimmed mean unless distances tie
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(900 + seed);
        SampleSet target(normal_rows(300, 0.0, rng));
        auto source = shifted_source({0, 0, 0, 0, 0, 0}, 100, rng);
        const auto plan = build_transfer_plan(target, equal_partition(6, 100), source, cfg);
        CHECK(*std::max_element(plan.distances.begin(), plan.distances.end()) < 0.05);
        const auto far = std::max_element(plan.distances.begin(), plan.distances.end()) - plan.distances.begin();
        CHECK_FALSE(plan.transferable[static_cast<std::size_t>(far)]);
    }

    std::mt19937_64 rng(1);
    SampleSet target(normal_rows(50, 0.0, rng));
    auto source = shifted_source({0, 1}, 50, rng);
    CHECK_THROWS_AS(build_transfer_plan(target, equal_partition(2, 50), source, cfg), TooFewSubdomainsError);
}

TEST_CASE("gate invariants")
{
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    std::uniform_int_distribution<std::size_t> count(3, 12);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> d(count(rng));
        for (double& v : d)
            v = u(rng);
        const auto plan = make_transfer_plan(d, {});
        CHECK(plan.threshold >= *std::min_element(d.begin(), d.end()));
        CHECK(plan.threshold <= *std::max_element(d.begin(), d.end()));
        CHECK(!plan.transferable_indices().empty());

        std::vector<std::size_t> order(d.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<double> permuted(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            permuted[i] = d[order[i]];
        const auto pp = make_transfer_plan(permuted, {});
        CHECK(pp.threshold == doctest::Approx(plan.threshold).epsilon(1e-14));
        for (std::size_t i = 0; i < d.size(); ++i)
            CHECK(pp.transferable[i] == plan.transferable[order[i]]);
    }

    // duplicating the most distant sub-domain keeps excluded ones excluded
    std::vector<double> d{0.2, 0.5, 0.9, 1.4, 3.0};
    const auto before = make_transfer_plan(d, {});
    d.push_back(3.0);
    const auto after = make_transfer_plan(d, {});
    for (std::size_t i = 0; i < 5; ++i)
        if (!before.transferable[i] && d[i] > after.threshold)
            CHECK_FALSE(after.transferable[i]);
    // the duplicate raises the trimmed mean to 1.45, admitting 1.4
    CHECK(after.threshold == doctest::Approx(1.45).epsilon(1e-14));
    CHECK(after.transferable_indices() == std::vector<std::size_t>{0, 1, 2, 3});
}
