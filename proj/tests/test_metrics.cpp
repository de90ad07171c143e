#include "driftgate/errors.hpp"
#include "driftgate/metrics.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace driftgate;

namespace {

std::filesystem::path temp_file(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / "driftgate_test_metrics";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<ForecastRow> rows(const std::vector<double>& gas, const std::vector<double>& water,
                              const std::string& well = "W-1")
{
    std::vector<ForecastRow> out;
    for (std::size_t i = 0; i < gas.size(); ++i)
        out.push_back({well, i / 3, i % 3, gas[i], water[i]});
    return out;
}

} // namespace

TEST_CASE("worked example")
{
    const std::vector<double> pred{1, 2, 3}, act{1, 2, 5};
    const ChannelMetrics m = compute_metrics(pred, act);
    CHECK(m.count == 3);
    CHECK(m.rmse == doctest::Approx(std::sqrt(4.0 / 3.0)).epsilon(1e-15));
    CHECK(m.mae == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    // mean 8/3, SST = 25/9 + 4/9 + 49/9 = 78/9, SSE = 4
    REQUIRE(m.r2);
    CHECK(*m.r2 == doctest::Approx(1.0 - 4.0 / (78.0 / 9.0)).epsilon(1e-15));
}

TEST_CASE("exact predictions and mean predictions")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(5.0, 2.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> act(2 + rep * 7);
        for (double& a : act)
            a = z(rng);
        const ChannelMetrics exact = compute_metrics(act, act);
        CHECK(exact.rmse == 0.0);
        CHECK(exact.mae == 0.0);
        REQUIRE(exact.r2);
        CHECK(*exact.r2 == 1.0);

        double mean = 0.0;
        for (double a : act)
            mean += a;
        mean /= static_cast<double>(act.size());
        const std::vector<double> flat(act.size(), mean);
        const ChannelMetrics m = compute_metrics(flat, act);
        REQUIRE(m.r2);
        CHECK(std::abs(*m.r2) < 1e-12);
    }
}

TEST_CASE("undefined r2 and argument errors")
{
    const std::vector<double> c{2, 2, 2}, p{1, 2, 3};
    const ChannelMetrics m = compute_metrics(p, c);
    CHECK_FALSE(m.r2);
    CHECK(m.r2_note == "constant actuals");
    CHECK(m.rmse == doctest::Approx(std::sqrt(2.0 / 3.0)));

    const std::vector<double> one{4}, other{1};
    const ChannelMetrics s = compute_metrics(one, other);
    CHECK_FALSE(s.r2);
    CHECK(s.r2_note == "fewer than 2 values");
    CHECK(s.mae == 3.0);

    const std::vector<double> empty;
    CHECK_THROWS_AS(compute_metrics(empty, empty), ValidationError);
    CHECK_THROWS_AS(compute_metrics(p, one), ShapeError);
}

TEST_CASE("forecast csv round trip")
{
    const auto r = rows({0.1, 1.0 / 3.0, 1e-300, 12345.678901234567, 0.0, 7.25},
                        {2.0, std::nextafter(2.0, 3.0), 5e300, 0.5, 9.0, 1e-7}, "B-12");
    const auto path = temp_file("pred.csv");
    write_forecast_csv(r, path, "_pred");
    CHECK(read_forecast_csv(path, "_pred") == r);
    CHECK_THROWS_AS(read_forecast_csv(path, ""), ValidationError);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "well_id,window_start,horizon_day,gas_pred,water_pred");
}

TEST_CASE("malformed forecast csv")
{
    const auto path = temp_file("bad.csv");
    {
        std::ofstream out(path);
        out << "well_id,window_start,horizon_day,gas,water\nW-1,0,0,1.5\n";
    }
    CHECK_THROWS_AS(read_forecast_csv(path, ""), ValidationError);
    {
        std::ofstream out(path);
        out << "well_id,window_start,horizon_day,gas,water\nW-1,0,0,abc,2\n";
    }
    CHECK_THROWS_AS(read_forecast_csv(path, ""), ValidationError);
    CHECK_THROWS_AS(read_forecast_csv(temp_file("missing.csv"), ""), ValidationError);
}

TEST_CASE("evaluate pools wells and breaks them down")
{
    auto pred = rows({1, 2, 3}, {10, 10, 10}, "W-1");
    auto act = rows({1, 2, 5}, {9, 10, 11}, "W-1");
    const auto p2 = rows({4, 4, 4}, {1, 1, 1}, "W-2");
    const auto a2 = rows({4, 4, 4}, {0, 2, 4}, "W-2");
    pred.insert(pred.end(), p2.begin(), p2.end());
    act.insert(act.end(), a2.begin(), a2.end());

    const MetricsReport r = evaluate_forecasts(pred, act);
    CHECK(r.count == 6);
    const std::vector<double> pg{1, 2, 3, 4, 4, 4}, ag{1, 2, 5, 4, 4, 4};
    const ChannelMetrics g = compute_metrics(pg, ag);
    CHECK(r.pooled[0].rmse == g.rmse);
    CHECK(*r.pooled[0].r2 == *g.r2);
    REQUIRE(r.per_well.size() == 2);
    CHECK(*r.per_well.at("W-1")[0].r2 == doctest::Approx(1.0 - 4.0 / (78.0 / 9.0)));
    CHECK_FALSE(r.per_well.at("W-2")[0].r2);
    CHECK(r.per_well.at("W-2")[1].mae == doctest::Approx(5.0 / 3.0));

    const auto j = nlohmann::json::parse(metrics_json(r));
    CHECK(j.at("n") == 6);
    CHECK(j.at("per_well").at("W-2").at("gas").at("r2").is_null());
    CHECK(j.at("pooled").at("gas").at("rmse").get<double>() == g.rmse);

    const auto csv = temp_file("metrics.csv");
    write_metrics_csv(r, csv);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "scope,channel,n,rmse,mae,r2");
    std::size_t lines = 0;
    while (std::getline(in, line))
        ++lines;
    CHECK(lines == 6); // pooled + two wells, two channels each
}

TEST_CASE("evaluate rejects mismatched rows")
{
    const auto pred = rows({1, 2, 3}, {1, 2, 3});
    CHECK_THROWS_AS(evaluate_forecasts(pred, rows({1, 2}, {1, 2})), ValidationError);
    auto shifted = pred;
    shifted[1].horizon_day = 7;
    CHECK_THROWS_AS(evaluate_forecasts(pred, shifted), ValidationError);
    auto other = pred;
    other[2].well_id = "W-9";
    CHECK_THROWS_AS(evaluate_forecasts(pred, other), ValidationError);
    CHECK_THROWS_AS(evaluate_forecasts({}, {}), ValidationError);
}

TEST_CASE("mean r2 and digest")
{
    MetricsReport r;
    CHECK_FALSE(mean_r2(r));
    r.pooled[0].r2 = 0.5;
    CHECK(*mean_r2(r) == 0.5);
    r.pooled[1].r2 = 0.7;
    CHECK(*mean_r2(r) == doctest::Approx(0.6));
    // FNV-1a 64 reference values
    CHECK(digest_hex("") == "cbf29ce484222325");
    CHECK(digest_hex("a") == "af63dc4c8601ec8c");
}
