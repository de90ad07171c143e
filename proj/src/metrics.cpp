#include "driftgate/metrics.hpp"

#include "driftgate/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace driftgate {

ChannelMetrics compute_metrics(std::span<const double> predictions, std::span<const double> actuals)
{
    if (predictions.size() != actuals.size())
        throw ShapeError("prediction count " + std::to_string(predictions.size()) + " differs from actual count " +
                         std::to_string(actuals.size()));
    if (predictions.empty())
        throw ValidationError("no values to score");
    const std::size_t n = actuals.size();
    double sse = 0.0, sae = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = predictions[i] - actuals[i];
        sse += d * d;
        sae += std::abs(d);
        mean += actuals[i];
    }
    mean /= static_cast<double>(n);
    double sst = 0.0;
    for (double a : actuals)
        sst += (a - mean) * (a - mean);

    ChannelMetrics m;
    m.count = n;
    m.rmse = std::sqrt(sse / static_cast<double>(n));
    m.mae = sae / static_cast<double>(n);
    if (n < 2)
        m.r2_note = "fewer than 2 values";
    else if (sst == 0.0)
        m.r2_note = "constant actuals";
    else
        m.r2 = 1.0 - sse / sst;
    return m;
}

namespace {

std::string format_double(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

template <class T>
T parse_number(const std::string& text, const std::string& where)
{
    T v{};
    const auto* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc{} || r.ptr != end)
        throw ValidationError(where + ": '" + text + "' is not a number");
    return v;
}

nlohmann::ordered_json channel_json(const ChannelMetrics& m)
{
    nlohmann::ordered_json j;
    j["n"] = m.count;
    j["rmse"] = m.rmse;
    j["mae"] = m.mae;
    if (m.r2) {
        j["r2"] = *m.r2;
    } else {
        j["r2"] = nullptr;
        j["r2_note"] = m.r2_note;
    }
    return j;
}

std::array<ChannelMetrics, 2> score(const std::vector<double>& pg, const std::vector<double>& ag,
                                    const std::vector<double>& pw, const std::vector<double>& aw)
{
    return {compute_metrics(pg, ag), compute_metrics(pw, aw)};
}

} // namespace

void write_forecast_csv(const std::vector<ForecastRow>& rows, const std::filesystem::path& path,
                        const std::string& value_suffix)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << "well_id,window_start,horizon_day,gas" << value_suffix << ",water" << value_suffix << '\n';
    for (const auto& r : rows)
        out << r.well_id << ',' << r.window_start << ',' << r.horizon_day << ',' << format_double(r.gas) << ','
            << format_double(r.water) << '\n';
    if (!out)
        throw std::runtime_error("write failed: " + path.string());
}

std::vector<ForecastRow> read_forecast_csv(const std::filesystem::path& path, const std::string& value_suffix)
{
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open " + path.string());
    const std::string expected =
        "well_id,window_start,horizon_day,gas" + value_suffix + ",water" + value_suffix;
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != expected)
        throw ValidationError(path.string() + ":1: expected header '" + expected + "'");
    std::vector<ForecastRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto cells = split_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (cells.size() != 5)
            throw ValidationError(where + ": expected 5 columns, got " + std::to_string(cells.size()));
        ForecastRow r;
        r.well_id = cells[0];
        r.window_start = parse_number<std::size_t>(cells[1], where);
        r.horizon_day = parse_number<std::size_t>(cells[2], where);
        r.gas = parse_number<double>(cells[3], where);
        r.water = parse_number<double>(cells[4], where);
        if (!std::isfinite(r.gas) || !std::isfinite(r.water))
            throw ValidationError(where + ": non-finite value");
        rows.push_back(std::move(r));
    }
    return rows;
}

MetricsReport evaluate_forecasts(const std::vector<ForecastRow>& predictions, const std::vector<ForecastRow>& actuals)
{
    if (predictions.size() != actuals.size())
        throw ValidationError("predictions have " + std::to_string(predictions.size()) + " rows, actuals " +
                              std::to_string(actuals.size()));
    MetricsReport report;
    report.count = predictions.size();
    std::vector<double> pg, ag, pw, aw;
    std::map<std::string, std::array<std::vector<double>, 4>> wells;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        const auto& a = actuals[i];
        if (p.well_id != a.well_id || p.window_start != a.window_start || p.horizon_day != a.horizon_day)
            throw ValidationError("row " + std::to_string(i + 1) + ": prediction key (" + p.well_id + ", " +
                                  std::to_string(p.window_start) + ", " + std::to_string(p.horizon_day) +
                                  ") does not match the actual row");
        pg.push_back(p.gas);
        ag.push_back(a.gas);
        pw.push_back(p.water);
        aw.push_back(a.water);
        auto& w = wells[p.well_id];
        w[0].push_back(p.gas);
        w[1].push_back(a.gas);
        w[2].push_back(p.water);
        w[3].push_back(a.water);
    }
    report.pooled = score(pg, ag, pw, aw);
    for (const auto& [id, v] : wells)
        report.per_well[id] = score(v[0], v[1], v[2], v[3]);
    return report;
}

std::string metrics_json(const MetricsReport& report)
{
    nlohmann::ordered_json j;
    j["n"] = report.count;
    if (!report.config_digest.empty())
        j["config_digest"] = report.config_digest;
    for (std::size_t c = 0; c < 2; ++c)
        j["pooled"][kOutputChannels[c]] = channel_json(report.pooled[c]);
    const auto r2 = mean_r2(report);
    j["mean_r2"] = r2 ? nlohmann::ordered_json(*r2) : nlohmann::ordered_json(nullptr);
    for (const auto& [id, m] : report.per_well)
        for (std::size_t c = 0; c < 2; ++c)
            j["per_well"][id][kOutputChannels[c]] = channel_json(m[c]);
    if (!report.static_attention.empty()) {
        j["attention"]["static_block"] = report.static_block_attention;
        j["attention"]["static_channels"] = report.static_attention;
    }
    return j.dump(2);
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << "scope,channel,n,rmse,mae,r2\n";
    auto row = [&](const std::string& scope, const std::array<ChannelMetrics, 2>& m) {
        for (std::size_t c = 0; c < 2; ++c)
            out << scope << ',' << kOutputChannels[c] << ',' << m[c].count << ',' << format_double(m[c].rmse) << ','
                << format_double(m[c].mae) << ',' << (m[c].r2 ? format_double(*m[c].r2) : std::string()) << '\n';
    };
    row("pooled", report.pooled);
    for (const auto& [id, m] : report.per_well)
        row(id, m);
}

std::optional<double> mean_r2(const MetricsReport& report)
{
    double sum = 0.0;
    int n = 0;
    for (const auto& m : report.pooled)
        if (m.r2) {
            sum += *m.r2;
            ++n;
        }
    if (n == 0)
        return std::nullopt;
    return sum / n;
}

std::string digest_hex(std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace driftgate
