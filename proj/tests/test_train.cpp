#include "driftgate/errors.hpp"
#include "driftgate/grad_check.hpp"
#include "driftgate/train.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace driftgate;

namespace {

ModelConfig small_model()
{
    ModelConfig c;
    c.d_model = 8;
    c.heads = 2;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.mlp_hidden = 6;
    c.input_len = 12;
    c.horizon = 4;
    return c;
}

WindowConfig small_windows()
{
    WindowConfig w;
    w.input_len = 12;
    w.horizon = 4;
    w.stride = 5;
    return w;
}

std::vector<WindowSample> synthetic_windows(std::uint64_t seed, std::size_t wells, double flp, double rate)
{
    BlockSpec spec;
    spec.well_count = wells;
    spec.series_length = 150;
    spec.static_ranges = block_a_ranges();
    spec.rate_coef[4] = 0.5;
    spec.regimes[0].flowline_pressure = flp;
    spec.regimes[0].rate_multiplier = rate;
    spec.seed = seed;
    const WellDataset raw = generate_block(spec);
    NormalizationParams norm;
    for (auto col : kStaticColumns)
        norm.set(col, {0.0, 1000.0});
    for (auto col : kDynamicColumns)
        norm.set(col, {0.0, 20.0});
    auto w = make_windows(norm.apply(raw), small_windows());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i].well_id += "-" + std::to_string(seed);
    return w;
}

DomainBundle small_bundle(std::uint64_t seed)
{
    DomainBundle b;
    b.target_train = synthetic_windows(seed, 2, 3.0, 1.0);
    b.target_validation = synthetic_windows(seed + 100, 1, 3.0, 1.0);
    b.subdomains.push_back(synthetic_windows(seed + 200, 2, 3.2, 1.1));
    b.subdomains.push_back(synthetic_windows(seed + 300, 2, 9.0, 2.0));
    b.plan.distances = {0.1, 0.9};
    b.plan.transferable = {true, false};
    return b;
}

TrainConfig quick_train(std::size_t epochs)
{
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 8;
    t.learning_rate = 3e-3;
    t.seed = 4;
    return t;
}

ad::Var column(ad::Graph& g, std::initializer_list<double> v)
{
    return g.constant(Tensor(Shape{v.size(), 1}, std::vector<double>(v)));
}

} // namespace

TEST_CASE("regression loss")
{
    ad::Graph g;
    const DomainOutput exact{column(g, {1.0, 2.0}), column(g, {1.0, 2.0})};
    CHECK(regression_loss(exact, {}).value().item() == 0.0);
    const std::array<DomainOutput, 2> exact_subs{exact, exact};
    CHECK(regression_loss(exact, exact_subs).value().item() == 0.0);

    const DomainOutput t{column(g, {1.0, 3.0}), column(g, {0.0, 0.0})};
    CHECK(regression_loss(t, {}).value().item() == 5.0);

    // target MSE 1, sub-domain MSEs 2 and 4
    const DomainOutput tgt{column(g, {1.0}), column(g, {0.0})};
    const std::array<DomainOutput, 2> subs{DomainOutput{column(g, {2.0, 0.0}), column(g, {0.0, 0.0})},
                                           DomainOutput{column(g, {2.0}), column(g, {0.0})}};
    CHECK(regression_loss(tgt, subs).value().item() == 4.0);

    CHECK_THROWS_AS(regression_loss({g.constant(Tensor(Shape{0, 1})), g.constant(Tensor(Shape{0, 1}))}, {}),
                    ValidationError);
    CHECK_THROWS_AS(regression_loss({column(g, {1.0}), column(g, {1.0, 2.0})}, {}), ShapeError);
}

TEST_CASE("domain adaptation loss")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    auto features = [&](double shift) {
        Tensor t(Shape{5, 3, 2});
        for (double& v : t.values())
            v = z(rng) + shift;
        return t;
    };
    ad::Graph g;
    const Tensor ft = features(0.0);
    const KernelConfig k{1.5, MmdEstimator::biased};
    ad::Var t = g.constant(ft);
    const std::array<ad::Var, 2> same{g.constant(ft), g.constant(ft)};
    CHECK(std::abs(domain_adaptation_loss(t, same, k).value().item()) < 1e-12);
    CHECK(domain_adaptation_loss(t, {}, k).value().item() == 0.0);

    const Tensor fs = features(0.7);
    const std::array<ad::Var, 1> one{g.constant(fs)};
    const double direct = mmd_squared(SampleSet(fs.reshaped({5, 6})), SampleSet(ft.reshaped({5, 6})), k);
    CHECK(domain_adaptation_loss(t, one, k).value().item() == doctest::Approx(direct).epsilon(1e-12));

    const Tensor other = features(-0.3);
    auto f = [&](ad::Var x) {
        const std::array<ad::Var, 2> subs{x.graph().constant(fs), x.graph().constant(other)};
        return domain_adaptation_loss(x, subs, k);
    };
    CHECK(ad::grad_check(f, ft) < 1e-4);

    const std::array<ad::Var, 1> wide{g.constant(Tensor(Shape{5, 7}))};
    CHECK_THROWS_AS(domain_adaptation_loss(t, wide, k), ShapeError);
}

TEST_CASE("total loss")
{
    ad::Graph g;
    auto s = [&](double v) { return g.constant(Tensor(Shape{1}, {v})); };
    CHECK(total_loss(s(2.0), s(0.5), 1.0).value().item() == 2.5);
    CHECK(total_loss(s(2.0), s(0.5), 0.0).value().item() == 2.0);
    CHECK(total_loss(s(0.0), s(0.0), 1.0).value().item() == 0.0);
    CHECK(total_loss(s(1.5), s(0.25), 0.3).value().item() == 1.5 + 0.3 * 0.25);
}

TEST_CASE("optimizers")
{
    CHECK(parse_optimizer("Adam") == OptimizerKind::adam);
    CHECK(parse_optimizer("SGD") == OptimizerKind::sgd);
    CHECK(parse_optimizer("rmsprop") == OptimizerKind::rmsprop);
    CHECK_THROWS_AS(parse_optimizer("lbfgs"), ValidationError);

    auto step = [](OptimizerKind kind, double lr, Tensor& p, const Tensor& g, OptimizerState& s) {
        Tensor* pp = &p;
        const Tensor* gp = &g;
        optimizer_step(std::span<Tensor* const>(&pp, 1), std::span<const Tensor* const>(&gp, 1), s, {kind, lr});
    };

    Tensor p = Tensor::vector({1.0});
    OptimizerState sgd;
    step(OptimizerKind::sgd, 0.1, p, Tensor::vector({2.0}), sgd);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));

    // zero gradient from a fresh state leaves parameters alone
    for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd, OptimizerKind::rmsprop}) {
        Tensor q = Tensor::vector({0.3, -2.0});
        OptimizerState s;
        step(kind, 0.1, q, Tensor::vector({0.0, 0.0}), s);
        CHECK(q == Tensor::vector({0.3, -2.0}));
    }
    // Adam moments decay by their betas under a zero gradient
    {
        Tensor q = Tensor::vector({1.0});
        OptimizerState s;
        step(OptimizerKind::adam, 0.01, q, Tensor::vector({3.0}), s);
        const double m = s.first[0][0], v = s.second[0][0];
        CHECK(m == doctest::Approx(0.3));
        CHECK(v == doctest::Approx(0.009));
        step(OptimizerKind::adam, 0.01, q, Tensor::vector({0.0}), s);
        CHECK(s.first[0][0] == 0.9 * m);
        CHECK(s.second[0][0] == 0.999 * v);
    }
    // first Adam step moves by lr * sign(g); first RMSprop step by lr / sqrt(1 - alpha)
    {
        Tensor q = Tensor::vector({1.0});
        OptimizerState s;
        step(OptimizerKind::adam, 0.01, q, Tensor::vector({-7.0}), s);
        CHECK(q[0] == doctest::Approx(1.01).epsilon(1e-9));
        Tensor r = Tensor::vector({1.0});
        OptimizerState rs;
        step(OptimizerKind::rmsprop, 0.01, r, Tensor::vector({2.0}), rs);
        CHECK(r[0] == doctest::Approx(1.0 - 0.01 / std::sqrt(0.01)).epsilon(1e-7));
    }
    // run to convergence on x^2
    {
        Tensor x = Tensor::vector({5.0});
        OptimizerState s;
        for (int i = 0; i < 2000; ++i)
            step(OptimizerKind::adam, 1e-2, x, Tensor::vector({2.0 * x[0]}), s);
        CHECK(std::abs(x[0]) < 1e-2);
    }
    Tensor a = Tensor::vector({1.0, 2.0});
    OptimizerState s;
    CHECK_THROWS_AS(step(OptimizerKind::sgd, 0.1, a, Tensor::vector({1.0}), s), ShapeError);
}

TEST_CASE("windows are assigned by first forecast day")
{
    WindowConfig cfg;
    cfg.input_len = 10;
    cfg.horizon = 2;
    std::vector<WindowSample> w(5);
    const std::array<std::size_t, 5> starts{0, 9, 10, 30, 60};
    for (std::size_t i = 0; i < 5; ++i)
        w[i].start = starts[i];
    Partition p;
    p.boundaries = {20, 40};
    const auto parts = partition_windows(w, p, cfg);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].size() == 2); // forecast days 10, 19
    CHECK(parts[1].size() == 1); // 20
    CHECK(parts[2].size() == 2); // 40, 70
}

TEST_CASE("fit: log decomposition, determinism and validation tracking")
{
    const auto bundle = small_bundle(1);
    const ModelConfig m = small_model();
    TrainConfig t = quick_train(6);
    t.da_weight = 0.7;
    std::ostringstream log;
    FitOptions fo;
    fo.log = &log;
    const auto r = fit(bundle, m, t, fo);
    REQUIRE(r.log.size() == 6);
    for (const auto& e : r.log) {
        CHECK(e.total == e.regression + 0.7 * e.da);
        CHECK(e.da >= 0.0);
        CHECK(e.val_rmse.has_value());
    }
    std::istringstream lines(log.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("epoch").get<std::size_t>() == n + 1);
        CHECK(j.at("total").get<double>() == r.log[n].total);
        CHECK(j.at("regression").get<double>() == r.log[n].regression);
        CHECK(j.at("da").get<double>() == r.log[n].da);
        CHECK(j.at("val_rmse").get<double>() == *r.log[n].val_rmse);
        ++n;
    }
    CHECK(n == 6);

    const auto again = fit(bundle, m, t);
    CHECK(again.log == r.log);
    CHECK(again.final_params == r.final_params);
    TrainConfig other = t;
    other.seed = 5;
    CHECK(fit(bundle, m, other).log != r.log);

    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.log)
        best = std::min(best, *e.val_rmse);
    CHECK(r.best_val_rmse == best);
    CHECK(validation_rmse(r.best_params, bundle.target_validation, m, t.validation_windows) == best);

    CHECK(r.subdomain_heads[0].size() > 0);
    CHECK(r.subdomain_heads[1].size() == 0);

    TrainConfig sparse = t;
    sparse.validation_every = 4;
    const auto rs = fit(bundle, m, sparse);
    CHECK(!rs.log[0].val_rmse.has_value());
    CHECK(rs.log[3].val_rmse.has_value());
    CHECK(rs.log[5].val_rmse.has_value());
}

TEST_CASE("fit: excluded sub-domains do not touch the shared model")
{
    const ModelConfig m = small_model();
    const TrainConfig t = quick_train(4);
    DomainBundle with = small_bundle(2);
    DomainBundle without = with;
    without.subdomains.pop_back();
    without.plan.distances.pop_back();
    without.plan.transferable.pop_back();
    const auto a = fit(with, m, t);
    const auto b = fit(without, m, t);
    CHECK(a.log == b.log);
    CHECK(a.final_params == b.final_params);

    // the else-branch mode trains a separate model on the excluded domain
    TrainConfig keep = t;
    keep.keep_nontransferable_heads = true;
    const auto c = fit(with, m, keep);
    CHECK(c.log.size() == 4);
    CHECK(c.log[0].regression != a.log[0].regression);
    CHECK(c.log[0].da == a.log[0].da);
}

TEST_CASE("fit: target-only mode and degenerate plans")
{
    const ModelConfig m = small_model();
    TrainConfig t = quick_train(4);
    t.target_only = true;
    DomainBundle full = small_bundle(3);
    DomainBundle bare;
    bare.target_train = full.target_train;
    bare.target_validation = full.target_validation;
    const auto a = fit(full, m, t);
    const auto b = fit(bare, m, t);
    CHECK(a.log == b.log);
    CHECK(a.final_params == b.final_params);
    for (const auto& e : a.log)
        CHECK(e.da == 0.0);

    TrainConfig gated = quick_train(4);
    full.plan.transferable = {false, false};
    CHECK_THROWS_AS(fit(full, m, gated), ValidationError);
    full.plan.transferable = {true};
    CHECK_THROWS_AS(fit(full, m, gated), ValidationError);

    DomainBundle empty;
    CHECK_THROWS_AS(fit(empty, m, t), ValidationError);
    TrainConfig bad = t;
    bad.epochs = 0;
    CHECK_THROWS_AS(fit(bare, m, bad), ValidationError);
    bad = t;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(fit(bare, m, bad), ValidationError);
}

TEST_CASE("fit: divergence names the epoch")
{
    TrainConfig t = quick_train(50);
    t.target_only = true;
    t.optimizer = OptimizerKind::sgd;
    t.learning_rate = 1e150;
    try {
        fit(small_bundle(4), small_model(), t);
        FAIL("expected divergence");
    } catch (const DivergedError& e) {
        CHECK(e.epoch() >= 1);
        CHECK(std::string(e.what()).find("epoch " + std::to_string(e.epoch())) != std::string::npos);
    }
}

TEST_CASE("fit: overfits a tiny dataset")
{
    DomainBundle b;
    auto w = synthetic_windows(5, 1, 3.0, 1.0);
    w.resize(20);
    b.target_train = w;
    TrainConfig t;
    t.epochs = 200;
    t.batch_size = 20;
    t.learning_rate = 3e-3;
    t.target_only = true;
    const auto r = fit(b, small_model(), t);
    CHECK(r.log.back().total <= 0.1 * r.log.front().total);
    CHECK(r.best_epoch == 200);
}

TEST_CASE("fit: DA loss falls when source and target share a distribution")
{
    const ModelConfig m = small_model();
    double first = 0.0, last = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        DomainBundle b;
        // both domains draw from one window pool
        b.target_train = synthetic_windows(10 + seed, 3, 3.0, 1.0);
        b.subdomains.push_back(b.target_train);
        b.plan.transferable = {true};
        b.plan.distances = {0.0};
        TrainConfig t = quick_train(50);
        t.seed = seed;
        const auto r = fit(b, m, t);
        first += r.log.front().da / 5.0;
        last += r.log.back().da / 5.0;
    }
    CHECK(last < first);
}

TEST_CASE("grid search")
{
    const auto bundle = small_bundle(6);
    const ModelConfig m = small_model();
    const TrainConfig t = quick_train(3);

    // defaults carry the searched ranges and the reference configuration
    const GridSpace defaults;
    auto has = [](const auto& v, auto x) { return std::find(v.begin(), v.end(), x) != v.end(); };
    CHECK(has(defaults.heads, std::size_t{6}));
    CHECK(has(defaults.encoder_layers, std::size_t{4}));
    CHECK(has(defaults.decoder_layers, std::size_t{4}));
    CHECK(has(defaults.mlp_hidden, std::size_t{20}));
    const ModelConfig ref;
    CHECK(ref.heads == 6);
    CHECK(ref.encoder_layers == 4);
    CHECK(ref.decoder_layers == 4);
    CHECK(ref.mlp_hidden == 20);
    CHECK(defaults.size() == 5 * 5 * 5 * 4 * 4 * 4 * 3);

    const auto all = expand_grid(defaults, ref, TrainConfig{});
    CHECK(all.size() == defaults.size());
    for (const auto& c : all) {
        CHECK(c.model.d_model % c.model.heads == 0);
        CHECK(c.model.d_model >= ref.d_model);
    }
    GridOptions budget;
    budget.budget = 7;
    const auto sub = expand_grid(defaults, ref, TrainConfig{}, budget);
    REQUIRE(sub.size() == 7);
    CHECK(sub[0].index == 0);
    CHECK(sub[1].index == defaults.size() / 7);

    GridSpace single;
    single.heads = {2};
    single.encoder_layers = {1};
    single.decoder_layers = {1};
    single.mlp_hidden = {6};
    single.batch_sizes = {8};
    single.learning_rates = {3e-3};
    single.optimizers = {OptimizerKind::adam};
    GridOptions go;
    go.epochs_per_candidate = 3;
    const auto one = grid_search(single, bundle, m, t, go);
    REQUIRE(one.leaderboard.size() == 1);
    CHECK(one.best.model == m);
    CHECK(one.best.train.batch_size == 8);
    CHECK(one.best.train.epochs == 3);

    GridSpace trained = single;
    trained.epochs = {0, 60};
    const auto two = grid_search(trained, bundle, m, t, go);
    REQUIRE(two.leaderboard.size() == 2);
    CHECK(two.best.train.epochs == 60);
    CHECK(two.leaderboard[0].val_rmse < two.leaderboard[1].val_rmse);

    GridOptions parallel = go;
    parallel.threads = 2;
    const auto par = grid_search(trained, bundle, m, t, parallel);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(par.leaderboard[i].candidate.index == two.leaderboard[i].candidate.index);
        CHECK(par.leaderboard[i].val_rmse == two.leaderboard[i].val_rmse);
    }

    GridSpace empty = single;
    empty.heads.clear();
    CHECK_THROWS_AS(grid_search(empty, bundle, m, t, go), ValidationError);
    DomainBundle no_val = bundle;
    no_val.target_validation.clear();
    CHECK_THROWS_AS(grid_search(single, no_val, m, t, go), ValidationError);
}
