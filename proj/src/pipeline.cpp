#include "driftgate/pipeline.hpp"

#include "driftgate/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <future>
#include <sstream>
#include <thread>

namespace driftgate {

using ojson = nlohmann::ordered_json;

namespace {

// Reads known keys from one config section and rejects the rest.
class Section {
public:
    Section(const nlohmann::json& root, const char* name) : name_(name)
    {
        if (root.contains(name)) {
            j_ = root.at(name);
            if (!j_.is_object())
                throw ValidationError(std::string("config section '") + name + "' must be an object");
        }
    }

    template <class T>
    void read(const char* key, T& out)
    {
        seen_.push_back(key);
        if (!j_.contains(key))
            return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("config " + name_ + "." + key + ": " + e.what());
        }
    }

    template <class T>
    void read_optional(const char* key, std::optional<T>& out)
    {
        seen_.push_back(key);
        if (!j_.contains(key))
            return;
        if (j_.at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        read(key, v);
        out = v;
    }

    void finish() const
    {
        for (const auto& [key, value] : j_.items())
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
                throw ValidationError("config " + name_ + ": unknown key '" + key + "'");
    }

private:
    std::string name_;
    nlohmann::json j_ = nlohmann::json::object();
    std::vector<std::string> seen_;
};

ojson partition_to_json(const Partition& p)
{
    ojson j;
    j["K"] = p.segments;
    j["boundaries"] = p.boundaries;
    j["objective"] = p.objective;
    return j;
}

ojson plan_to_json(const TransferPlan& plan)
{
    ojson j;
    j["distances"] = plan.distances;
    j["threshold"] = plan.threshold;
    std::vector<bool> t(plan.transferable.begin(), plan.transferable.end());
    j["transferable"] = t;
    j["transferable_indices"] = plan.transferable_indices();
    j["bandwidth"] = plan.kernel.bandwidth;
    j["estimator"] = estimator_name(plan.kernel.estimator);
    return j;
}

ojson report_to_json(const MetricsReport& r)
{
    return ojson::parse(metrics_json(r));
}

std::vector<const WindowSample*> strided_windows(const std::vector<WindowSample>& w, std::size_t take)
{
    const std::size_t n = w.size();
    take = take == 0 || take >= n ? n : take;
    std::vector<const WindowSample*> out;
    for (std::size_t i = 0; i < take; ++i)
        out.push_back(&w[i * n / take]);
    return out;
}

} // namespace

// ---- config ---------------------------------------------------------------

std::string_view averaging_name(PairAveraging a) noexcept
{
    return a == PairAveraging::ordered_pairs ? "ordered_pairs" : "segment_count";
}

PairAveraging parse_averaging(std::string_view name)
{
    if (name == "ordered_pairs")
        return PairAveraging::ordered_pairs;
    if (name == "segment_count")
        return PairAveraging::segment_count;
    throw ValidationError("unknown averaging '" + std::string(name) + "' (expected ordered_pairs or segment_count)");
}

std::string_view estimator_name(MmdEstimator e) noexcept
{
    return e == MmdEstimator::biased ? "biased" : "unbiased";
}

MmdEstimator parse_estimator(std::string_view name)
{
    if (name == "biased")
        return MmdEstimator::biased;
    if (name == "unbiased")
        return MmdEstimator::unbiased;
    throw ValidationError("unknown estimator '" + std::string(name) + "' (expected biased or unbiased)");
}

ModelConfig PipelineConfig::resolved_model() const
{
    ModelConfig m = model;
    m.input_len = windows.input_len;
    m.horizon = windows.horizon;
    m.dynamic_features = windows.dynamic_features;
    return m;
}

void PipelineConfig::validate() const
{
    if (source_wells < 3 || target_wells < 3)
        throw ValidationError("source and target blocks need at least 3 wells each");
    if (windows.dynamic_features != 2 && windows.dynamic_features != 4)
        throw ValidationError("dynamic_features must be 2 or 4");
    if (windows.input_len == 0 || windows.horizon == 0 || windows.stride == 0)
        throw ValidationError("window lengths and stride must be positive");
    if (kernel.bandwidth && !(*kernel.bandwidth > 0.0))
        throw ValidationError("kernel bandwidth must be positive");
    resolved_model().validate();
    train.validate();
}

PipelineConfig parse_pipeline_config(std::string_view json_text, PipelineConfig c)
{
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object())
        throw ValidationError("config must be a JSON object");
    for (const auto& [key, value] : root.items())
        if (key != "seed" && key != "data" && key != "segmentation" && key != "kernel" && key != "model" &&
            key != "train")
            throw ValidationError("config: unknown section '" + key + "'");
    if (root.contains("seed"))
        c.seed = root.at("seed").get<std::uint64_t>();

    Section d(root, "data");
    d.read("source_wells", c.source_wells);
    d.read("target_wells", c.target_wells);
    d.read("input_len", c.windows.input_len);
    d.read("horizon", c.windows.horizon);
    d.read("stride", c.windows.stride);
    d.read("dynamic_features", c.windows.dynamic_features);
    d.read("train_fraction", c.fractions.train);
    d.read("validation_fraction", c.fractions.validation);
    d.read("test_fraction", c.fractions.test);
    d.read("test_windows", c.test_windows);
    d.finish();

    Section s(root, "segmentation");
    s.read("max_segments", c.segmentation.max_segments);
    s.read("unit_count", c.segmentation.unit_count);
    s.read_optional("min_length", c.segmentation.min_length);
    s.read_optional("max_length", c.segmentation.max_length);
    std::string averaging(averaging_name(c.segmentation.averaging));
    s.read("averaging", averaging);
    c.segmentation.averaging = parse_averaging(averaging);
    s.read("max_rows_per_segment", c.segmentation.max_rows_per_segment);
    s.finish();

    Section k(root, "kernel");
    k.read_optional("bandwidth", c.kernel.bandwidth);
    std::string estimator(estimator_name(c.kernel.estimator));
    k.read("estimator", estimator);
    c.kernel.estimator = parse_estimator(estimator);
    k.read("max_rows", c.kernel.max_rows);
    k.finish();

    Section m(root, "model");
    m.read("d_model", c.model.d_model);
    m.read("heads", c.model.heads);
    m.read("encoder_layers", c.model.encoder_layers);
    m.read("decoder_layers", c.model.decoder_layers);
    m.read("mlp_hidden", c.model.mlp_hidden);
    m.read("static_ablation", c.model.static_ablation);
    m.finish();

    Section t(root, "train");
    t.read("epochs", c.train.epochs);
    t.read("batch_size", c.train.batch_size);
    t.read("learning_rate", c.train.learning_rate);
    std::string optimizer(optimizer_name(c.train.optimizer));
    t.read("optimizer", optimizer);
    c.train.optimizer = parse_optimizer(optimizer);
    t.read("da_weight", c.train.da_weight);
    t.read("keep_nontransferable_heads", c.train.keep_nontransferable_heads);
    t.read("validation_windows", c.train.validation_windows);
    t.read("validation_every", c.train.validation_every);
    t.read("pretrain_epochs", c.pretrain_epochs);
    t.read("ablation", c.ablation);
    t.finish();

    c.train.seed = c.seed;
    c.validate();
    return c;
}

std::string pipeline_config_json(const PipelineConfig& c)
{
    ojson j;
    j["seed"] = c.seed;
    j["data"]["source_wells"] = c.source_wells;
    j["data"]["target_wells"] = c.target_wells;
    j["data"]["input_len"] = c.windows.input_len;
    j["data"]["horizon"] = c.windows.horizon;
    j["data"]["stride"] = c.windows.stride;
    j["data"]["dynamic_features"] = c.windows.dynamic_features;
    j["data"]["train_fraction"] = c.fractions.train;
    j["data"]["validation_fraction"] = c.fractions.validation;
    j["data"]["test_fraction"] = c.fractions.test;
    j["data"]["test_windows"] = c.test_windows;
    auto& s = j["segmentation"];
    s["max_segments"] = c.segmentation.max_segments;
    s["unit_count"] = c.segmentation.unit_count;
    s["min_length"] = c.segmentation.min_length ? ojson(*c.segmentation.min_length) : ojson(nullptr);
    s["max_length"] = c.segmentation.max_length ? ojson(*c.segmentation.max_length) : ojson(nullptr);
    s["averaging"] = averaging_name(c.segmentation.averaging);
    s["max_rows_per_segment"] = c.segmentation.max_rows_per_segment;
    j["kernel"]["bandwidth"] = c.kernel.bandwidth ? ojson(*c.kernel.bandwidth) : ojson(nullptr);
    j["kernel"]["estimator"] = estimator_name(c.kernel.estimator);
    j["kernel"]["max_rows"] = c.kernel.max_rows;
    j["model"]["d_model"] = c.model.d_model;
    j["model"]["heads"] = c.model.heads;
    j["model"]["encoder_layers"] = c.model.encoder_layers;
    j["model"]["decoder_layers"] = c.model.decoder_layers;
    j["model"]["mlp_hidden"] = c.model.mlp_hidden;
    j["model"]["static_ablation"] = c.model.static_ablation;
    auto& t = j["train"];
    t["epochs"] = c.train.epochs;
    t["batch_size"] = c.train.batch_size;
    t["learning_rate"] = c.train.learning_rate;
    t["optimizer"] = optimizer_name(c.train.optimizer);
    t["da_weight"] = c.train.da_weight;
    t["keep_nontransferable_heads"] = c.train.keep_nontransferable_heads;
    t["validation_windows"] = c.train.validation_windows;
    t["validation_every"] = c.train.validation_every;
    t["pretrain_epochs"] = c.pretrain_epochs;
    t["ablation"] = c.ablation;
    return j.dump(2);
}

// ---- stages ---------------------------------------------------------------

PreparedData prepare(const WellDataset& source, const WellDataset& target, const PipelineConfig& config)
{
    config.validate();
    validate_dataset(source);
    validate_dataset(target);
    auto ids = [](const WellDataset& d) {
        std::vector<std::string> out;
        for (const auto& w : d.wells)
            out.push_back(w.id);
        return out;
    };
    PreparedData p;
    p.source_split = split_wells(ids(source), config.fractions, derive_seed(config.seed, 101));
    p.target_split = split_wells(ids(target), config.fractions, derive_seed(config.seed, 102));
    const WellDataset src_train = select_wells(source, p.source_split.train);
    const WellDataset tgt_train = select_wells(target, p.target_split.train);
    p.normalization = NormalizationParams::fit({&src_train, &tgt_train});
    p.source_train = p.normalization.apply(src_train);
    p.target_train = p.normalization.apply(tgt_train);
    p.source_series = block_series(p.source_train);
    p.target_rows = SampleSet(block_series(p.target_train).rows());
    p.kernel.estimator = config.kernel.estimator;
    p.kernel.bandwidth = config.kernel.bandwidth ? *config.kernel.bandwidth
                                                 : median_bandwidth(SampleSet(p.source_series.rows()), p.target_rows);
    return p;
}

TransferPlan gate(const PreparedData& data, const Partition& partition, const PipelineConfig& config)
{
    return build_transfer_plan(data.target_rows, partition, data.source_series, data.kernel, config.kernel.max_rows);
}

std::string partition_json(const Partition& p)
{
    return partition_to_json(p).dump(2);
}

Partition parse_partition_json(std::string_view text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        Partition p;
        p.segments = j.at("K").get<std::size_t>();
        p.boundaries = j.at("boundaries").get<std::vector<std::size_t>>();
        p.objective = j.value("objective", 0.0);
        if (p.boundaries.size() + 1 != p.segments)
            throw ValidationError("partition: K does not match the boundary count");
        if (!std::is_sorted(p.boundaries.begin(), p.boundaries.end()) ||
            std::adjacent_find(p.boundaries.begin(), p.boundaries.end()) != p.boundaries.end())
            throw ValidationError("partition: boundaries must be strictly increasing");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("partition JSON: ") + e.what());
    }
}

std::string transfer_plan_json(const TransferPlan& plan)
{
    return plan_to_json(plan).dump(2);
}

std::vector<WindowSample> windows_for(const WellDataset& raw, const std::vector<std::string>& ids,
                                      const NormalizationParams& norm, const WindowConfig& cfg)
{
    return make_windows(norm.apply(select_wells(raw, ids)), cfg);
}

DomainBundle make_bundle(const WellDataset& target, const PreparedData& data, const Partition& partition,
                         const TransferPlan& plan, const PipelineConfig& config)
{
    DomainBundle b;
    b.target_train = make_windows(data.target_train, config.windows);
    b.target_validation = windows_for(target, data.target_split.validation, data.normalization, config.windows);
    b.subdomains = partition_windows(make_windows(data.source_train, config.windows), partition, config.windows);
    b.plan = plan;
    if (b.target_train.empty())
        throw ValidationError("target training wells are shorter than one window");
    return b;
}

// ---- forecasting ----------------------------------------------------------

Forecast forecast(const Checkpoint& ck, const WellDataset& raw, std::size_t max_windows_per_well)
{
    if (!ck.normalization)
        throw ValidationError("checkpoint carries no normalization parameters");
    const ModelConfig& m = ck.config;
    if (ck.windows.input_len != m.input_len || ck.windows.horizon != m.horizon ||
        ck.windows.dynamic_features != m.dynamic_features)
        throw ValidationError("checkpoint window geometry does not match its model");
    if (m.static_features != kStaticCount || m.output_channels != 2)
        throw ValidationError("checkpoint model does not match the well schema");
    validate_dataset(raw);
    const NormalizationParams& norm = *ck.normalization;
    const WellDataset normalized = norm.apply(raw);

    Forecast f;
    std::vector<double> attention_sum(m.fusion_width(), 0.0);
    std::size_t attention_rows = 0;
    for (std::size_t wi = 0; wi < raw.wells.size(); ++wi) {
        const auto windows = make_windows(normalized.wells[wi], ck.windows);
        const auto picked = strided_windows(windows, max_windows_per_well);
        const WellRecord& well = raw.wells[wi];
        constexpr std::size_t chunk = 64;
        for (std::size_t s = 0; s < picked.size(); s += chunk) {
            const std::vector<const WindowSample*> part(
                picked.begin() + static_cast<std::ptrdiff_t>(s),
                picked.begin() + static_cast<std::ptrdiff_t>(std::min(picked.size(), s + chunk)));
            const Prediction pred = model_forward(make_batch(part), ck.params, m);
            for (std::size_t b = 0; b < part.size(); ++b) {
                const std::size_t day0 = part[b]->first_forecast_day(ck.windows);
                for (std::size_t h = 0; h < m.horizon; ++h) {
                    const double* v = pred.values.data() + (b * m.horizon + h) * 2;
                    ForecastRow p{well.id, part[b]->start, h, std::max(0.0, norm.invert("gas", v[0])),
                                  std::max(0.0, norm.invert("water", v[1]))};
                    const auto& actual = well.dynamic[day0 + h];
                    f.predictions.push_back(p);
                    f.actuals.push_back({well.id, part[b]->start, h, actual[kGas], actual[kWater]});
                }
            }
            const std::size_t w = m.fusion_width();
            for (std::size_t r = 0; r < pred.attention.size() / w; ++r)
                for (std::size_t k = 0; k < w; ++k)
                    attention_sum[k] += pred.attention[r * w + k];
            attention_rows += pred.attention.size() / w;
        }
    }
    if (f.predictions.empty())
        throw ValidationError("no well is long enough for one window");
    f.attention.per_channel.resize(m.fusion_width());
    for (std::size_t k = 0; k < m.fusion_width(); ++k) {
        f.attention.per_channel[k] = attention_sum[k] / static_cast<double>(attention_rows);
        (k < m.d_model ? f.attention.dynamic_block : f.attention.static_block) += f.attention.per_channel[k];
    }
    return f;
}

MetricsReport score(const Forecast& f, const std::string& config_digest)
{
    MetricsReport r = evaluate_forecasts(f.predictions, f.actuals);
    r.config_digest = config_digest;
    const std::size_t half = f.attention.per_channel.size() / 2;
    r.static_attention.assign(f.attention.per_channel.begin() + static_cast<std::ptrdiff_t>(half),
                              f.attention.per_channel.end());
    r.static_block_attention = f.attention.static_block;
    return r;
}

// ---- bench ----------------------------------------------------------------

const ArmReport& BenchReport::arm(std::string_view name) const
{
    for (const auto* list : {&arms, &source})
        for (const auto& a : *list)
            if (a.name == name)
                return a;
    throw ValidationError("no bench arm named '" + std::string(name) + "'");
}

std::string BenchReport::to_json() const
{
    ojson j;
    j["config"] = ojson::parse(pipeline_config_json(config));
    j["partition"] = partition_to_json(partition);
    j["transfer_plan"] = plan_to_json(plan);
    auto arm_json = [](const ArmReport& a) {
        ojson o;
        o["best_epoch"] = a.best_epoch;
        o["best_val_rmse"] = a.best_val_rmse;
        o["metrics"] = report_to_json(a.metrics);
        return o;
    };
    for (const auto& a : arms)
        j["target"][a.name] = arm_json(a);
    for (const auto& a : source)
        j["source"][a.name] = arm_json(a);
    auto r2 = [&](const char* name, std::size_t c) {
        for (const auto& a : arms)
            if (a.name == name && a.metrics.pooled[c].r2)
                return ojson(*a.metrics.pooled[c].r2);
        return ojson(nullptr);
    };
    for (std::size_t c = 0; c < 2; ++c)
        for (const char* name : {"da", "finetune", "target_only"})
            j["summary"]["r2"][kOutputChannels[c]][name] = r2(name, c);
    if (source.size() == 2) {
        const auto a = mean_r2(source[0].metrics), b = mean_r2(source[1].metrics);
        j["summary"]["static_mean_r2"] = a ? ojson(*a) : ojson(nullptr);
        j["summary"]["ablation_mean_r2"] = b ? ojson(*b) : ojson(nullptr);
    }
    return j.dump(2);
}

std::string BenchReport::to_csv() const
{
    std::ostringstream out;
    out << "block,arm,scope,channel,n,rmse,mae,r2\n";
    auto emit = [&](const char* block, const ArmReport& a) {
        auto row = [&](const std::string& scope, const std::array<ChannelMetrics, 2>& m) {
            for (std::size_t c = 0; c < 2; ++c) {
                out << block << ',' << a.name << ',' << scope << ',' << kOutputChannels[c] << ',' << m[c].count << ','
                    << ojson(m[c].rmse).dump() << ',' << ojson(m[c].mae).dump() << ',';
                if (m[c].r2)
                    out << ojson(*m[c].r2).dump();
                out << '\n';
            }
        };
        row("pooled", a.metrics.pooled);
        for (const auto& [id, m] : a.metrics.per_well)
            row(id, m);
    };
    for (const auto& a : arms)
        emit("target", a);
    for (const auto& a : source)
        emit("source", a);
    return out.str();
}

std::size_t thread_budget()
{
    if (const char* env = std::getenv("DRIFTGATE_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0)
            return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

BenchReport run_bench(const WellDataset& source, const WellDataset& target, const PipelineConfig& config,
                      std::size_t threads, std::ostream* progress)
{
    auto say = [&](const std::string& msg) {
        if (progress)
            *progress << msg << '\n' << std::flush;
    };
    BenchReport report;
    report.config = config;
    const ModelConfig model = config.resolved_model();
    const std::string digest = digest_hex(pipeline_config_json(config));

    const PreparedData data = prepare(source, target, config);
    report.partition = select_partition(data.source_series, config.segmentation, data.kernel);
    say("segmentation: K=" + std::to_string(report.partition.segments));
    report.plan = gate(data, report.partition, config);
    say("gate: " + std::to_string(report.plan.transferable_indices().size()) + " of " +
        std::to_string(report.plan.distances.size()) + " sub-domains transferable");

    const DomainBundle bundle = make_bundle(target, data, report.partition, report.plan, config);
    DomainBundle target_bundle;
    target_bundle.target_train = bundle.target_train;
    target_bundle.target_validation = bundle.target_validation;
    const auto target_test = select_wells(target, data.target_split.test);

    TrainConfig target_only = config.train;
    target_only.target_only = true;

    auto finish_arm = [&](std::string name, const TrainResult& r, const ModelConfig& m, const WellDataset& test) {
        ArmReport a;
        a.name = std::move(name);
        a.best_epoch = r.best_epoch;
        a.best_val_rmse = r.best_val_rmse;
        a.log = r.log;
        a.checkpoint = Checkpoint{m, r.best_params, data.normalization, config.windows};
        a.metrics = score(forecast(a.checkpoint, test, config.test_windows), digest);
        say("arm " + a.name + ": best epoch " + std::to_string(a.best_epoch));
        return a;
    };

    auto run_da = [&] { return finish_arm("da", fit(bundle, model, config.train), model, target_test); };
    auto run_finetune = [&] {
        DomainBundle pre;
        for (const auto& part : bundle.subdomains)
            pre.target_train.insert(pre.target_train.end(), part.begin(), part.end());
        pre.target_validation =
            windows_for(source, data.source_split.validation, data.normalization, config.windows);
        TrainConfig pt = target_only;
        pt.epochs = config.pretrain_epochs ? config.pretrain_epochs : config.train.epochs;
        const TrainResult pretrained = fit(pre, model, pt);
        FitOptions fo;
        fo.initial = transfer_extractor(pretrained.best_params, model, derive_seed(config.seed, 201));
        return finish_arm("finetune", fit(target_bundle, model, target_only, fo), model, target_test);
    };
    auto run_target_only = [&] {
        return finish_arm("target_only", fit(target_bundle, model, target_only), model, target_test);
    };

    std::vector<std::function<ArmReport()>> jobs{run_da, run_finetune, run_target_only};
    std::vector<ArmReport*> slots;
    report.arms.resize(3);
    for (auto& a : report.arms)
        slots.push_back(&a);

    if (config.ablation) {
        const auto source_test = select_wells(source, data.source_split.test);
        auto source_arm = [&, source_test](bool ablate) {
            DomainBundle sb;
            for (const auto& part : bundle.subdomains)
                sb.target_train.insert(sb.target_train.end(), part.begin(), part.end());
            sb.target_validation =
                windows_for(source, data.source_split.validation, data.normalization, config.windows);
            ModelConfig m = model;
            m.static_ablation = ablate;
            return finish_arm(ablate ? "ablation" : "static", fit(sb, m, target_only), m, source_test);
        };
        jobs.push_back([=] { return source_arm(false); });
        jobs.push_back([=] { return source_arm(true); });
        report.source.resize(2);
        for (auto& a : report.source)
            slots.push_back(&a);
    }

    threads = std::clamp<std::size_t>(threads, 1, jobs.size());
    if (threads == 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i)
            *slots[i] = jobs[i]();
    } else {
        // at most `threads` arms in flight, joined in order
        std::vector<std::future<ArmReport>> running;
        std::size_t next = 0, done = 0;
        while (done < jobs.size()) {
            while (next < jobs.size() && running.size() - done < threads)
                running.push_back(std::async(std::launch::async, jobs[next++]));
            *slots[done] = running[done].get();
            ++done;
        }
    }
    return report;
}

// ---- provenance -----------------------------------------------------------

std::string RunManifest::to_json() const
{
    ojson j;
    j["command"] = command;
    j["arguments"] = arguments;
    j["seed"] = seed;
    j["config_paths"] = config_paths;
    j["config"] = config_json.empty() ? ojson(nullptr) : ojson::parse(config_json);
    j["config_digest"] = config_json.empty() ? std::string() : digest_hex(config_json);
    auto files = [](const std::vector<std::pair<std::string, std::string>>& list) {
        ojson a = ojson::array();
        for (const auto& [path, digest] : list)
            a.push_back({{"path", path}, {"digest", digest}});
        return a;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    j["partition"] = partition ? partition_to_json(*partition) : ojson(nullptr);
    j["transfer_plan"] = plan ? plan_to_json(*plan) : ojson(nullptr);
    j["checkpoint"] = checkpoint;
    j["started"] = started;
    j["finished"] = finished;
    return j.dump(2);
}

std::string file_digest(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return digest_hex(s.str());
}

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace driftgate
