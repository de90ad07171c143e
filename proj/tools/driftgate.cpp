// driftgate command-line workflow:
//   generate -> segment -> gate -> train -> predict -> evaluate, and bench.

#include "driftgate/errors.hpp"
#include "driftgate/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace driftgate;

namespace {

std::string read_text(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!text.empty() && text.back() != '\n')
        out << '\n';
    if (!out)
        throw std::runtime_error("write failed: " + path.string());
}

// NAME.csv holds the daily rows, NAME_static.csv the well table.
fs::path static_path_for(const fs::path& dynamic)
{
    fs::path p = dynamic;
    p.replace_filename(dynamic.stem().string() + "_static" + dynamic.extension().string());
    return p;
}

struct DatasetArg {
    std::string dynamic;
    std::string static_override;

    fs::path static_path() const { return static_override.empty() ? static_path_for(dynamic) : fs::path(static_override); }
    WellDataset load() const { return load_csv(static_path(), dynamic); }
};

// Shared state of one invocation.
struct Run {
    std::string out = "driftgate-out";
    std::string config_path;
    std::optional<std::uint64_t> seed;
    RunManifest manifest;

    PipelineConfig config()
    {
        PipelineConfig c;
        if (!config_path.empty()) {
            c = parse_pipeline_config(read_text(config_path));
            manifest.config_paths.push_back(config_path);
            manifest.inputs.emplace_back(config_path, file_digest(config_path));
        }
        if (seed) {
            c.seed = *seed;
            c.train.seed = *seed;
        }
        c.validate();
        manifest.seed = c.seed;
        manifest.config_json = pipeline_config_json(c);
        return c;
    }

    void input(const fs::path& p) { manifest.inputs.emplace_back(p.string(), file_digest(p)); }
    void input(const DatasetArg& d)
    {
        input(fs::path(d.dynamic));
        input(d.static_path());
    }

    fs::path output(const std::string& name, const std::string& text)
    {
        const fs::path p = fs::path(out) / name;
        write_text(p, text);
        manifest.outputs.emplace_back(p.string(), file_digest(p));
        return p;
    }

    void record(const fs::path& p) { manifest.outputs.emplace_back(p.string(), file_digest(p)); }

    void finish()
    {
        manifest.finished = utc_timestamp();
        write_text(fs::path(out) / "manifest.json", manifest.to_json());
    }
};

void add_common(CLI::App* cmd, Run& run, bool with_config = true)
{
    cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
    cmd->add_option("--seed", run.seed, "Seed for data generation, splits and training");
    if (with_config)
        cmd->add_option("--config", run.config_path, "Pipeline config JSON {data, segmentation, kernel, model, train}")
            ->check(CLI::ExistingFile);
}

void add_dataset(CLI::App* cmd, DatasetArg& d, const std::string& name, const std::string& what, bool required = true)
{
    auto* o = cmd->add_option("--" + name, d.dynamic, what + " daily CSV (well_id,day,whp,flp,gas,water)");
    if (required)
        o->required();
    o->check(CLI::ExistingFile);
    cmd->add_option("--" + name + "-static", d.static_override,
                    "Well table CSV for --" + name + " (default: <name>_static.csv next to it)")
        ->check(CLI::ExistingFile);
}

int cmd_generate(Run& run, const std::string& preset, std::size_t source_wells, std::size_t target_wells)
{
    if (preset != "paper-like")
        throw ValidationError("unknown preset '" + preset + "' (available: paper-like)");
    const std::uint64_t seed = run.seed.value_or(7);
    run.manifest.seed = seed;
    const Scenario sc = paper_like_scenario(seed, source_wells, target_wells);
    const fs::path out(run.out);
    for (const auto& [name, spec] : {std::pair{"source", sc.source}, std::pair{"target", sc.target}}) {
        const fs::path dyn = out / (std::string(name) + ".csv");
        write_csv(generate_block(spec), static_path_for(dyn), dyn);
        run.record(dyn);
        run.record(static_path_for(dyn));
    }
    std::cout << "wrote " << (out / "source.csv").string() << " and " << (out / "target.csv").string() << '\n';
    return 0;
}

int cmd_segment(Run& run, const DatasetArg& input, const DatasetArg& target, std::optional<std::size_t> k0,
                std::optional<std::size_t> units)
{
    PipelineConfig c = run.config();
    if (k0)
        c.segmentation.max_segments = *k0;
    if (units)
        c.segmentation.unit_count = *units;
    run.input(input);
    const WellDataset source = input.load();
    std::vector<const WellDataset*> pool{&source};
    WellDataset tgt;
    if (!target.dynamic.empty()) {
        run.input(target);
        tgt = target.load();
        pool.push_back(&tgt);
    }
    const auto norm = NormalizationParams::fit(pool);
    const SeriesView series = block_series(norm.apply(source));
    KernelConfig k{0.0, c.kernel.estimator};
    if (c.kernel.bandwidth)
        k.bandwidth = *c.kernel.bandwidth;
    else if (pool.size() == 2)
        k.bandwidth = median_bandwidth(SampleSet(series.rows()), SampleSet(block_series(norm.apply(tgt)).rows()));
    else
        k.bandwidth = median_bandwidth(SampleSet(series.rows()));
    const Partition p = select_partition(series, c.segmentation, k);
    run.manifest.partition = p;
    const std::string text = partition_json(p);
    run.output("partition.json", text);
    std::cout << text << '\n';
    return 0;
}

int cmd_gate(Run& run, const DatasetArg& source_arg, const DatasetArg& target_arg, const std::string& partition_path)
{
    const PipelineConfig c = run.config();
    run.input(source_arg);
    run.input(target_arg);
    run.input(fs::path(partition_path));
    const WellDataset source = source_arg.load();
    const WellDataset target = target_arg.load();
    const Partition p = parse_partition_json(read_text(partition_path));
    const auto norm = NormalizationParams::fit({&source, &target});
    const SeriesView series = block_series(norm.apply(source));
    const SampleSet rows(block_series(norm.apply(target)).rows());
    KernelConfig k{c.kernel.bandwidth.value_or(0.0), c.kernel.estimator};
    if (!c.kernel.bandwidth)
        k.bandwidth = median_bandwidth(SampleSet(series.rows()), rows);
    const TransferPlan plan = build_transfer_plan(rows, p, series, k, c.kernel.max_rows);
    run.manifest.partition = p;
    run.manifest.plan = plan;
    const std::string text = transfer_plan_json(plan);
    run.output("plan.json", text);
    std::cout << text << '\n';
    return 0;
}

std::string log_text(const std::vector<EpochRecord>& log)
{
    std::string s;
    for (const auto& e : log)
        s += epoch_record_json(e) + '\n';
    return s;
}

int cmd_train(Run& run, const DatasetArg& source_arg, const DatasetArg& target_arg, const std::string& mode)
{
    const PipelineConfig c = run.config();
    if (mode != "da" && mode != "finetune" && mode != "target-only")
        throw ValidationError("unknown mode '" + mode + "' (expected da, finetune or target-only)");
    run.input(source_arg);
    run.input(target_arg);
    const WellDataset source = source_arg.load();
    const WellDataset target = target_arg.load();
    const ModelConfig model = c.resolved_model();

    const PreparedData data = prepare(source, target, c);
    const Partition p = select_partition(data.source_series, c.segmentation, data.kernel);
    const TransferPlan plan = gate(data, p, c);
    run.manifest.partition = p;
    run.manifest.plan = plan;
    run.output("partition.json", partition_json(p));
    run.output("plan.json", transfer_plan_json(plan));

    DomainBundle bundle = make_bundle(target, data, p, plan, c);
    TrainConfig t = c.train;
    FitOptions fo;
    const fs::path log_path = fs::path(run.out) / "train_log.jsonl";
    std::ofstream log(log_path);
    fo.log = &log;
    if (mode != "da") {
        t.target_only = true;
        if (mode == "finetune") {
            DomainBundle pre;
            for (const auto& part : bundle.subdomains)
                pre.target_train.insert(pre.target_train.end(), part.begin(), part.end());
            pre.target_validation = windows_for(source, data.source_split.validation, data.normalization, c.windows);
            TrainConfig pt = t;
            pt.epochs = c.pretrain_epochs ? c.pretrain_epochs : c.train.epochs;
            std::ofstream pre_log(fs::path(run.out) / "pretrain_log.jsonl");
            FitOptions pre_opts;
            pre_opts.log = &pre_log;
            const TrainResult pretrained = fit(pre, model, pt, pre_opts);
            run.record(fs::path(run.out) / "pretrain_log.jsonl");
            fo.initial = transfer_extractor(pretrained.best_params, model, derive_seed(c.seed, 201));
        }
        bundle.subdomains.clear();
    }
    const TrainResult r = fit(bundle, model, t, fo);
    log.close();
    run.record(log_path);

    const fs::path ck_path = fs::path(run.out) / "checkpoint.json";
    save_checkpoint(Checkpoint{model, r.best_params, data.normalization, c.windows}, ck_path);
    run.record(ck_path);
    run.manifest.checkpoint = ck_path.string();
    run.output("normalization.json", data.normalization.to_json());
    const fs::path test_dyn = fs::path(run.out) / "target_test.csv";
    write_csv(select_wells(target, data.target_split.test), static_path_for(test_dyn), test_dyn);
    run.record(test_dyn);
    run.record(static_path_for(test_dyn));
    std::cout << "best epoch " << r.best_epoch << ", validation RMSE " << r.best_val_rmse << "; wrote "
              << ck_path.string() << '\n';
    return 0;
}

int cmd_predict(Run& run, const std::string& checkpoint_path, const DatasetArg& input, std::size_t max_windows)
{
    run.input(fs::path(checkpoint_path));
    run.input(input);
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    run.manifest.checkpoint = checkpoint_path;
    run.manifest.config_json = model_config_json(ck.config);
    const Forecast f = forecast(ck, input.load(), max_windows);
    const fs::path pred = fs::path(run.out) / "predictions.csv";
    const fs::path act = fs::path(run.out) / "actuals.csv";
    write_forecast_csv(f.predictions, pred, "_pred");
    write_forecast_csv(f.actuals, act, "");
    run.record(pred);
    run.record(act);
    std::cout << "wrote " << f.predictions.size() << " rows to " << pred.string() << '\n';
    return 0;
}

int cmd_evaluate(Run& run, const std::string& pred_path, const std::string& actual_path)
{
    run.input(fs::path(pred_path));
    run.input(fs::path(actual_path));
    const MetricsReport r =
        evaluate_forecasts(read_forecast_csv(pred_path, "_pred"), read_forecast_csv(actual_path, ""));
    const std::string text = metrics_json(r);
    run.output("metrics.json", text);
    const fs::path csv = fs::path(run.out) / "metrics.csv";
    write_metrics_csv(r, csv);
    run.record(csv);
    std::cout << text << '\n';
    return 0;
}

int cmd_bench(Run& run, const std::string& preset)
{
    if (preset != "paper-like")
        throw ValidationError("unknown preset '" + preset + "' (available: paper-like)");
    const PipelineConfig c = run.config();
    const Scenario sc = paper_like_scenario(c.seed, c.source_wells, c.target_wells);
    const BenchReport report =
        run_bench(generate_block(sc.source), generate_block(sc.target), c, thread_budget(), &std::cerr);
    run.manifest.partition = report.partition;
    run.manifest.plan = report.plan;
    for (const auto* list : {&report.arms, &report.source})
        for (const auto& a : *list)
            run.output("log_" + a.name + ".jsonl", log_text(a.log));
    const fs::path ck = fs::path(run.out) / "checkpoint_da.json";
    save_checkpoint(report.arm("da").checkpoint, ck);
    run.record(ck);
    run.manifest.checkpoint = ck.string();
    run.output("report.csv", report.to_csv());
    const std::string text = report.to_json();
    run.output("report.json", text);

    std::cout << "K=" << report.partition.segments << ", transferable "
              << report.plan.transferable_indices().size() << "/" << report.plan.distances.size() << '\n';
    std::cout << "arm            gas_r2    water_r2\n";
    auto fmt = [](const std::optional<double>& v) {
        std::ostringstream s;
        if (v)
            s << std::fixed << std::setprecision(4) << *v;
        else
            s << "n/a";
        return s.str();
    };
    for (const auto* list : {&report.arms, &report.source})
        for (const auto& a : *list)
            std::cout << std::left << std::setw(14) << a.name << ' ' << std::setw(9) << fmt(a.metrics.pooled[0].r2)
                      << ' ' << fmt(a.metrics.pooled[1].r2) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"driftgate: segmented domain-adaptation transfer learning for shale gas production forecasts"};
    app.require_subcommand(1);
    Run run;
    for (int i = 0; i < argc; ++i)
        run.manifest.arguments.emplace_back(argv[i]);
    run.manifest.started = utc_timestamp();

    std::string preset = "paper-like";
    std::size_t source_wells = 30, target_wells = 8;
    auto* gen = app.add_subcommand("generate", "Write a synthetic source/target block pair as CSV");
    add_common(gen, run, false);
    gen->add_option("--preset", preset, "Scenario preset")->capture_default_str();
    gen->add_option("--source-wells", source_wells, "Wells in the source block")->capture_default_str();
    gen->add_option("--target-wells", target_wells, "Wells in the target block")->capture_default_str();

    DatasetArg seg_input, seg_target;
    std::optional<std::size_t> k0, units;
    auto* seg = app.add_subcommand("segment", "Split a source block into sub-domains; prints the partition JSON");
    add_common(seg, run);
    add_dataset(seg, seg_input, "input", "Source block");
    add_dataset(seg, seg_target, "target", "Target block, pooled into the normalization and bandwidth", false);
    seg->add_option("--k0", k0, "Largest segment count to consider");
    seg->add_option("--units", units, "Number of base units");

    DatasetArg gate_source, gate_target;
    std::string partition_path;
    auto* gt = app.add_subcommand("gate", "Score sub-domains against the target; prints the transfer plan JSON");
    add_common(gt, run);
    add_dataset(gt, gate_source, "source", "Source block");
    add_dataset(gt, gate_target, "target", "Target block");
    gt->add_option("--partition", partition_path, "Partition JSON from segment")->required()->check(CLI::ExistingFile);

    DatasetArg train_source, train_target;
    std::string mode = "da";
    auto* tr = app.add_subcommand("train", "Segment, gate and train; writes a checkpoint and the training log");
    add_common(tr, run);
    add_dataset(tr, train_source, "source", "Source block");
    add_dataset(tr, train_target, "target", "Target block");
    tr->add_option("--mode", mode, "da, finetune or target-only")->capture_default_str();

    std::string checkpoint_path;
    DatasetArg predict_input;
    std::size_t max_windows = 0;
    auto* pr = app.add_subcommand("predict", "Forecast every window of a dataset; writes predictions.csv and actuals.csv");
    add_common(pr, run, false);
    pr->add_option("--checkpoint", checkpoint_path, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    add_dataset(pr, predict_input, "input", "Wells to forecast");
    pr->add_option("--max-windows", max_windows, "Evenly strided windows per well (0 = all)")->capture_default_str();

    std::string pred_path, actual_path;
    auto* ev = app.add_subcommand("evaluate", "Score predictions against actuals; writes metrics.json and metrics.csv");
    add_common(ev, run, false);
    ev->add_option("--predictions", pred_path, "predictions.csv from predict")->required()->check(CLI::ExistingFile);
    ev->add_option("--actuals", actual_path, "actuals.csv from predict")->required()->check(CLI::ExistingFile);

    auto* bn = app.add_subcommand("bench", "Run the full pipeline with DA, fine-tune and target-only arms");
    add_common(bn, run);
    bn->add_option("--preset", preset, "Scenario preset")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    CLI::App* cmd = app.get_subcommands().front();
    run.manifest.command = cmd->get_name();
    try {
        fs::create_directories(run.out);
        int code = 0;
        if (cmd == gen)
            code = cmd_generate(run, preset, source_wells, target_wells);
        else if (cmd == seg)
            code = cmd_segment(run, seg_input, seg_target, k0, units);
        else if (cmd == gt)
            code = cmd_gate(run, gate_source, gate_target, partition_path);
        else if (cmd == tr)
            code = cmd_train(run, train_source, train_target, mode);
        else if (cmd == pr)
            code = cmd_predict(run, checkpoint_path, predict_input, max_windows);
        else if (cmd == ev)
            code = cmd_evaluate(run, pred_path, actual_path);
        else
            code = cmd_bench(run, preset);
        run.finish();
        return code;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << '\n';
        return 2;
    }
}
