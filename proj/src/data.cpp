#include "driftgate/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace driftgate {

namespace {

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::size_t static_index(std::string_view name)
{
    for (std::size_t i = 0; i < kStaticCount; ++i)
        if (kStaticColumns[i] == name)
            return i;
    return kStaticCount;
}

} // namespace

const WellRecord& WellDataset::well(std::string_view id) const
{
    for (const auto& w : wells)
        if (w.id == id)
            return w;
    throw ValidationError("unknown well '" + std::string(id) + "'");
}

void validate_dataset(const WellDataset& data)
{
    std::unordered_set<std::string> seen;
    for (const auto& w : data.wells) {
        if (w.id.empty())
            throw ValidationError("empty well id");
        if (!seen.insert(w.id).second)
            throw ValidationError("duplicate well id '" + w.id + "'");
        for (std::size_t k = 0; k < kStaticCount; ++k)
            if (!std::isfinite(w.static_features[k]))
                throw ValidationError("well " + w.id + ": non-finite " + std::string(kStaticColumns[k]));
        for (std::size_t d = 0; d < w.dynamic.size(); ++d)
            for (std::size_t k = 0; k < kDynamicCount; ++k) {
                const double v = w.dynamic[d][k];
                if (!std::isfinite(v))
                    throw ValidationError("well " + w.id + " day " + std::to_string(d) + ": non-finite " +
                                          std::string(kDynamicColumns[k]));
                if ((k == kGas || k == kWater) && v < 0.0)
                    throw ValidationError("well " + w.id + " day " + std::to_string(d) + ": negative " +
                                          std::string(kDynamicColumns[k]));
            }
    }
}

// ---- synthetic generation -------------------------------------------------

std::array<Range, kStaticCount> block_a_ranges()
{
    return {{{2240, 6165}, {20.6, 64.3}, {511, 2576}, {4, 36}, {16.5, 28.6},
             {0.54, 2.98}, {10.2, 16.8}, {3.2, 7.1}, {65.4, 99.6}, {5.1, 8.9}}};
}

std::array<Range, kStaticCount> block_b_ranges()
{
    return {{{3826, 6460}, {40.1, 66.2}, {1058, 2301}, {25, 34}, {21.6, 36.76},
             {1.69, 3.68}, {11.0, 18.2}, {2.4, 5.6}, {78.3, 100.8}, {2.5, 5.3}}};
}

double arps_rate(double qi, double di, double b, double t)
{
    if (b < 1e-6)
        return qi * std::exp(-di * t);
    return qi / std::pow(1.0 + b * di * t, 1.0 / b);
}

WellDataset generate_block(const BlockSpec& spec)
{
    if (spec.well_count == 0)
        throw ValidationError("block needs at least one well");
    if (spec.series_length < 150)
        throw ValidationError("series length must be at least 150 days");
    for (std::size_t k = 0; k < kStaticCount; ++k)
        if (!(spec.static_ranges[k].min <= spec.static_ranges[k].max))
            throw ValidationError("invalid range for " + std::string(kStaticColumns[k]));
    if (spec.regimes.empty() || spec.regimes.front().start_day != 0)
        throw ValidationError("the regime schedule must start at day 0");
    for (std::size_t r = 1; r < spec.regimes.size(); ++r)
        if (spec.regimes[r].start_day <= spec.regimes[r - 1].start_day ||
            spec.regimes[r].start_day >= spec.series_length)
            throw ValidationError("regime start days must increase inside the series");
    if (spec.base_rate <= 0 || spec.base_decline < 0 || spec.gas_noise < 0 || spec.water_noise < 0 ||
        spec.pressure_noise < 0)
        throw ValidationError("rates and noise scales must be non-negative");

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    const std::size_t ns = static_index("Ns");

    WellDataset out;
    out.wells.reserve(spec.well_count);
    for (std::size_t w = 0; w < spec.well_count; ++w) {
        WellRecord rec;
        rec.id = spec.name + "-" + std::to_string(w + 1);
        std::array<double, kStaticCount> pos{}; // centred position inside each range
        for (std::size_t k = 0; k < kStaticCount; ++k) {
            const Range& r = spec.static_ranges[k];
            double x = r.min + unit(rng) * (r.max - r.min);
            if (k == ns)
                x = std::clamp(std::round(x), std::ceil(r.min), std::floor(r.max));
            rec.static_features[k] = x;
            pos[k] = r.max > r.min ? (x - r.min) / (r.max - r.min) - 0.5 : 0.0;
        }
        double log_q = 0.0, log_d = 0.0, db = 0.0, log_w = 0.0;
        for (std::size_t k = 0; k < kStaticCount; ++k) {
            log_q += spec.rate_coef[k] * pos[k];
            log_d += spec.decline_coef[k] * pos[k];
            db += spec.exponent_coef[k] * pos[k];
            log_w += spec.water_coef[k] * pos[k];
        }
        const double qi = spec.base_rate * std::exp(log_q);
        const double di = spec.base_decline * std::exp(log_d);
        const double b = std::clamp(spec.base_exponent + db, 0.0, 1.5);
        const double w0 = spec.water_ratio * qi * std::exp(log_w);

        rec.dynamic.resize(spec.series_length);
        std::size_t regime = 0;
        for (std::size_t t = 0; t < spec.series_length; ++t) {
            while (regime + 1 < spec.regimes.size() && spec.regimes[regime + 1].start_day <= t)
                ++regime;
            const Regime& g = spec.regimes[regime];
            const double td = static_cast<double>(t);
            const double q = g.rate_multiplier * arps_rate(qi, di * g.decline_multiplier, b, td);
            const double water = g.water_multiplier * w0 * std::exp(-spec.water_decay * td);
            const double flp = std::max(0.1, g.flowline_pressure + spec.pressure_noise * z(rng));
            const double whp = flp + spec.drawdown_coef * q + spec.pressure_noise * z(rng);
            const double gas = q * std::exp(spec.gas_noise * z(rng));
            const double wat = water * std::exp(spec.water_noise * z(rng));
            rec.dynamic[t] = {std::max(whp, flp), flp, gas, wat};
        }
        out.wells.push_back(std::move(rec));
    }
    return out;
}

Scenario paper_like_scenario(std::uint64_t seed, std::size_t source_wells, std::size_t target_wells)
{
    Scenario s;
    BlockSpec& a = s.source;
    a.name = "A";
    a.well_count = source_wells;
    a.series_length = 800;
    a.static_ranges = block_a_ranges();
    // higher fluid and sand intensity, stage count, TOC and porosity raise q_i;
    // higher minimum horizontal stress steepens the decline
    a.rate_coef = {0.3, 0.1, 0.4, 0.3, 0.5, 0.5, 0.2, 0.4, -0.3, 0.4};
    a.decline_coef = {0.0, 0.0, -0.2, 0.0, 0.2, 0.0, 0.1, 0.0, 0.9, -0.3};
    a.exponent_coef = {0.0, 0.0, 0.0, 0.0, 0.2, 0.2, 0.0, 0.0, -0.3, 0.0};
    a.water_coef = {0.0, 0.3, 0.0, 0.0, 0.8, 0.2, 0.3, 0.0, 0.0, -0.2};
    const std::size_t unit = a.series_length / 10;
    // six operating periods of 2,2,1,2,2,1 units; low and high flowline
    // pressure alternate, each period with its own rate, decline and water response
    a.regimes = {
        Regime{0 * unit, 2.96, 1.03, 1.58, 0.665}, Regime{2 * unit, 7.60, 1.07, 1.65, 0.415},
        Regime{4 * unit, 2.03, 0.708, 1.60, 1.95}, Regime{5 * unit, 7.62, 0.89, 1.45, 0.55},
        Regime{7 * unit, 2.43, 0.525, 1.23, 0.50}, Regime{9 * unit, 6.00, 1.03, 1.55, 2.48},
    };
    a.seed = seed * 2 + 1;

    BlockSpec& b = s.target;
    b = a;
    b.name = "B";
    b.well_count = target_wells;
    b.series_length = 500;
    b.static_ranges = block_b_ranges();
    b.regimes = {Regime{0, 3.2, 1.0, 1.0, 1.0}};
    b.seed = seed * 2 + 2;
    return s;
}

// ---- CSV ------------------------------------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    for (auto& c : out)
        if (!c.empty() && c.back() == '\r')
            c.pop_back();
    return out;
}

[[noreturn]] void csv_error(const std::filesystem::path& file, std::size_t line, std::string_view column,
                            const std::string& msg)
{
    std::string where = file.string() + ":" + std::to_string(line);
    if (!column.empty())
        where += " column '" + std::string(column) + "'";
    throw ValidationError(where + ": " + msg);
}

double parse_number(const std::string& cell, const std::filesystem::path& file, std::size_t line,
                    std::string_view column)
{
    double v = 0.0;
    const char* end = cell.data() + cell.size();
    auto res = std::from_chars(cell.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end)
        csv_error(file, line, column, "not a number: '" + cell + "'");
    if (!std::isfinite(v))
        csv_error(file, line, column, "non-finite value");
    return v;
}

// maps header cells to schema positions; `names` lists every required column
std::vector<std::size_t> read_header(const std::string& line, const std::filesystem::path& file,
                                     std::span<const std::string_view> names)
{
    const auto cells = split_line(line);
    std::vector<std::size_t> position(names.size(), cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        auto it = std::find(names.begin(), names.end(), cells[c]);
        if (it == names.end())
            csv_error(file, 1, cells[c], "unknown column");
        const auto idx = static_cast<std::size_t>(it - names.begin());
        if (position[idx] != cells.size())
            csv_error(file, 1, cells[c], "duplicate column");
        position[idx] = c;
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        if (position[i] == cells.size())
            csv_error(file, 1, names[i], "missing column");
    return position;
}

std::ifstream open_input(const std::filesystem::path& p)
{
    std::ifstream in(p);
    if (!in)
        throw ValidationError("cannot open " + p.string());
    return in;
}

} // namespace

WellDataset load_csv(const std::filesystem::path& static_path, const std::filesystem::path& dynamic_path)
{
    WellDataset data;
    std::unordered_map<std::string, std::size_t> index;
    {
        std::vector<std::string_view> names{"well_id"};
        names.insert(names.end(), kStaticColumns.begin(), kStaticColumns.end());
        auto in = open_input(static_path);
        std::string line;
        if (!std::getline(in, line))
            csv_error(static_path, 1, "", "empty file");
        const auto pos = read_header(line, static_path, names);
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r")
                continue;
            const auto cells = split_line(line);
            if (cells.size() != names.size())
                csv_error(static_path, lineno, "",
                          "expected " + std::to_string(names.size()) + " fields, got " + std::to_string(cells.size()));
            WellRecord rec;
            rec.id = cells[pos[0]];
            if (rec.id.empty())
                csv_error(static_path, lineno, "well_id", "empty well id");
            for (std::size_t k = 0; k < kStaticCount; ++k)
                rec.static_features[k] = parse_number(cells[pos[k + 1]], static_path, lineno, kStaticColumns[k]);
            if (!index.emplace(rec.id, data.wells.size()).second)
                csv_error(static_path, lineno, "well_id", "duplicate well '" + rec.id + "'");
            data.wells.push_back(std::move(rec));
        }
    }
    {
        std::vector<std::string_view> names{"well_id", "day"};
        names.insert(names.end(), kDynamicColumns.begin(), kDynamicColumns.end());
        auto in = open_input(dynamic_path);
        std::string line;
        if (!std::getline(in, line))
            csv_error(dynamic_path, 1, "", "empty file");
        const auto pos = read_header(line, dynamic_path, names);
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r")
                continue;
            const auto cells = split_line(line);
            if (cells.size() != names.size())
                csv_error(dynamic_path, lineno, "",
                          "expected " + std::to_string(names.size()) + " fields, got " + std::to_string(cells.size()));
            const std::string& id = cells[pos[0]];
            auto it = index.find(id);
            if (it == index.end())
                csv_error(dynamic_path, lineno, "well_id", "well '" + id + "' has no static record");
            WellRecord& rec = data.wells[it->second];
            const double day = parse_number(cells[pos[1]], dynamic_path, lineno, "day");
            if (day != static_cast<double>(rec.dynamic.size()))
                csv_error(dynamic_path, lineno, "day",
                          "expected day " + std::to_string(rec.dynamic.size()) + " for well '" + id +
                              "' (days must start at 0 and increase by 1)");
            DynamicRow row{};
            for (std::size_t k = 0; k < kDynamicCount; ++k) {
                row[k] = parse_number(cells[pos[k + 2]], dynamic_path, lineno, kDynamicColumns[k]);
                if ((k == kGas || k == kWater) && row[k] < 0.0)
                    csv_error(dynamic_path, lineno, kDynamicColumns[k], "negative production");
            }
            rec.dynamic.push_back(row);
        }
    }
    return data;
}

void write_csv(const WellDataset& data, const std::filesystem::path& static_path,
               const std::filesystem::path& dynamic_path)
{
    std::ofstream s(static_path);
    std::ofstream d(dynamic_path);
    if (!s || !d)
        throw std::runtime_error("cannot write " + static_path.string() + " / " + dynamic_path.string());
    s << "well_id";
    for (auto c : kStaticColumns)
        s << ',' << c;
    s << '\n';
    d << "well_id,day";
    for (auto c : kDynamicColumns)
        d << ',' << c;
    d << '\n';
    for (const auto& w : data.wells) {
        s << w.id;
        for (double v : w.static_features)
            s << ',' << format_double(v);
        s << '\n';
        for (std::size_t t = 0; t < w.dynamic.size(); ++t) {
            d << w.id << ',' << t;
            for (double v : w.dynamic[t])
                d << ',' << format_double(v);
            d << '\n';
        }
    }
    if (!s || !d)
        throw std::runtime_error("write failed for " + static_path.string() + " / " + dynamic_path.string());
}

// ---- normalization --------------------------------------------------------

NormalizationParams NormalizationParams::fit(const WellDataset& train)
{
    return fit(std::vector<const WellDataset*>{&train});
}

NormalizationParams NormalizationParams::fit(const std::vector<const WellDataset*>& train)
{
    std::array<ColumnRange, kStaticCount> st;
    std::array<ColumnRange, kDynamicCount> dy;
    st.fill({INFINITY, -INFINITY});
    dy.fill({INFINITY, -INFINITY});
    bool any_well = false, any_day = false;
    for (const WellDataset* data : train)
        for (const auto& w : data->wells) {
            any_well = true;
            for (std::size_t k = 0; k < kStaticCount; ++k) {
                st[k].min = std::min(st[k].min, w.static_features[k]);
                st[k].max = std::max(st[k].max, w.static_features[k]);
            }
            for (const auto& row : w.dynamic) {
                any_day = true;
                for (std::size_t k = 0; k < kDynamicCount; ++k) {
                    dy[k].min = std::min(dy[k].min, row[k]);
                    dy[k].max = std::max(dy[k].max, row[k]);
                }
            }
        }
    if (!any_well || !any_day)
        throw ValidationError("normalization needs at least one training well with dynamic data");
    NormalizationParams p;
    for (std::size_t k = 0; k < kStaticCount; ++k)
        p.set(kStaticColumns[k], st[k]);
    for (std::size_t k = 0; k < kDynamicCount; ++k)
        p.set(kDynamicColumns[k], dy[k]);
    return p;
}

const ColumnRange& NormalizationParams::column(std::string_view name) const
{
    auto it = columns_.find(name);
    if (it == columns_.end())
        throw ValidationError("normalization has no column '" + std::string(name) + "'");
    return it->second;
}

void NormalizationParams::set(std::string_view name, ColumnRange range)
{
    if (!(range.max >= range.min) || !std::isfinite(range.min) || !std::isfinite(range.max))
        throw ValidationError("column '" + std::string(name) + "' needs finite max >= min");
    columns_.insert_or_assign(std::string(name), range);
}

double NormalizationParams::apply(std::string_view name, double x) const
{
    const auto& c = column(name);
    const double span = c.max - c.min;
    return (x - c.min) / (span > 0.0 ? span : 1.0);
}

double NormalizationParams::invert(std::string_view name, double y) const
{
    const auto& c = column(name);
    const double span = c.max - c.min;
    return y * (span > 0.0 ? span : 1.0) + c.min;
}

WellDataset NormalizationParams::apply(const WellDataset& data) const
{
    WellDataset out = data;
    for (auto& w : out.wells) {
        for (std::size_t k = 0; k < kStaticCount; ++k)
            w.static_features[k] = apply(kStaticColumns[k], w.static_features[k]);
        for (auto& row : w.dynamic)
            for (std::size_t k = 0; k < kDynamicCount; ++k)
                row[k] = apply(kDynamicColumns[k], row[k]);
    }
    return out;
}

WellDataset NormalizationParams::invert(const WellDataset& data) const
{
    WellDataset out = data;
    for (auto& w : out.wells) {
        for (std::size_t k = 0; k < kStaticCount; ++k)
            w.static_features[k] = invert(kStaticColumns[k], w.static_features[k]);
        for (auto& row : w.dynamic)
            for (std::size_t k = 0; k < kDynamicCount; ++k)
                row[k] = invert(kDynamicColumns[k], row[k]);
    }
    return out;
}

std::string NormalizationParams::to_json() const
{
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, r] : columns_)
        j[name] = {{"min", r.min}, {"max", r.max}};
    return j.dump(2);
}

NormalizationParams NormalizationParams::from_json(std::string_view text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("normalization JSON: ") + e.what());
    }
    if (!j.is_object())
        throw ValidationError("normalization JSON must be an object");
    NormalizationParams p;
    for (const auto& [name, r] : j.items()) {
        if (!r.is_object() || !r.contains("min") || !r.contains("max") || !r["min"].is_number() ||
            !r["max"].is_number())
            throw ValidationError("normalization column '" + name + "' needs numeric min and max");
        p.set(name, {r["min"].get<double>(), r["max"].get<double>()});
    }
    for (auto c : kStaticColumns)
        p.column(c);
    for (auto c : kDynamicColumns)
        p.column(c);
    return p;
}

// ---- windows and splits ---------------------------------------------------

std::vector<WindowSample> make_windows(const WellRecord& well, const WindowConfig& cfg)
{
    if (cfg.input_len == 0 || cfg.horizon == 0 || cfg.stride == 0)
        throw ValidationError("window lengths and stride must be positive");
    if (cfg.dynamic_features != 4 && cfg.dynamic_features != 2)
        throw ValidationError("dynamic feature count must be 2 or 4");
    std::vector<WindowSample> out;
    const std::size_t span = cfg.input_len + cfg.horizon;
    const std::size_t len = well.dynamic.size();
    if (len < span)
        return out;
    const std::size_t first_col = cfg.dynamic_features == 4 ? 0 : kGas;
    const std::size_t count = (len - span) / cfg.stride + 1;
    out.reserve(count);
    Tensor st(Shape{kStaticCount});
    std::copy(well.static_features.begin(), well.static_features.end(), st.data());
    for (std::size_t i = 0; i < count; ++i) {
        WindowSample s;
        s.well_id = well.id;
        s.start = i * cfg.stride;
        s.dynamic = Tensor(Shape{cfg.input_len, cfg.dynamic_features});
        for (std::size_t t = 0; t < cfg.input_len; ++t)
            for (std::size_t k = 0; k < cfg.dynamic_features; ++k)
                s.dynamic.at(t, k) = well.dynamic[s.start + t][first_col + k];
        s.static_features = st;
        s.target = Tensor(Shape{cfg.horizon, 2});
        for (std::size_t h = 0; h < cfg.horizon; ++h) {
            const auto& row = well.dynamic[s.start + cfg.input_len + h];
            s.target.at(h, 0) = row[kGas];
            s.target.at(h, 1) = row[kWater];
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<WindowSample> make_windows(const WellDataset& data, const WindowConfig& cfg)
{
    std::vector<WindowSample> out;
    for (const auto& w : data.wells) {
        auto ws = make_windows(w, cfg);
        out.insert(out.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
    }
    return out;
}

WellSplit split_wells(const std::vector<std::string>& ids, const SplitFractions& f, std::uint64_t seed)
{
    if (f.train < 0 || f.validation < 0 || f.test < 0 || std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
        throw ValidationError("split fractions must be non-negative and sum to 1");
    const std::size_t n = ids.size();
    if (n < 3)
        throw ValidationError("splitting needs at least 3 wells, got " + std::to_string(n));
    std::vector<std::string> order = ids;
    std::sort(order.begin(), order.end());
    if (std::adjacent_find(order.begin(), order.end()) != order.end())
        throw ValidationError("duplicate well ids in split");
    // Fisher-Yates with rejection sampling, independent of the library's distributions
    std::mt19937_64 rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::uint64_t bound = i + 1;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t r;
        do
            r = rng();
        while (r >= limit);
        std::swap(order[i], order[r % bound]);
    }
    const double nd = static_cast<double>(n);
    const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(nd * f.validation + 1e-9)));
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(nd * f.test + 1e-9)));
    if (n_val + n_test >= n)
        throw ValidationError("split leaves no training wells");
    WellSplit s;
    s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                  order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

SampleSplit split_samples(std::vector<WindowSample> samples, const SplitFractions& fractions, std::uint64_t seed)
{
    std::vector<std::string> ids;
    for (const auto& s : samples)
        if (std::find(ids.begin(), ids.end(), s.well_id) == ids.end())
            ids.push_back(s.well_id);
    const WellSplit ws = split_wells(ids, fractions, seed);
    const std::unordered_set<std::string> val(ws.validation.begin(), ws.validation.end());
    const std::unordered_set<std::string> test(ws.test.begin(), ws.test.end());
    SampleSplit out;
    for (auto& s : samples) {
        if (val.count(s.well_id))
            out.validation.push_back(std::move(s));
        else if (test.count(s.well_id))
            out.test.push_back(std::move(s));
        else
            out.train.push_back(std::move(s));
    }
    return out;
}

WellDataset select_wells(const WellDataset& data, const std::vector<std::string>& ids)
{
    WellDataset out;
    for (const auto& id : ids)
        out.wells.push_back(data.well(id));
    return out;
}

SeriesView block_series(const WellDataset& normalized)
{
    if (normalized.wells.empty())
        throw ValidationError("block series needs at least one well");
    std::size_t days = normalized.wells.front().dynamic.size();
    for (const auto& w : normalized.wells)
        days = std::min(days, w.dynamic.size());
    if (days == 0)
        throw ValidationError("block series: a well has no dynamic rows");
    const std::size_t wells = normalized.wells.size();
    Tensor rows(Shape{days * wells, kDynamicCount});
    std::vector<std::size_t> offsets(days + 1);
    for (std::size_t t = 0; t < days; ++t) {
        offsets[t] = t * wells;
        for (std::size_t w = 0; w < wells; ++w)
            for (std::size_t k = 0; k < kDynamicCount; ++k)
                rows.at(t * wells + w, k) = normalized.wells[w].dynamic[t][k];
    }
    offsets[days] = days * wells;
    return SeriesView(std::move(rows), std::move(offsets));
}

} // namespace driftgate
