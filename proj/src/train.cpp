#include "driftgate/train.hpp"

#include "driftgate/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace driftgate {

namespace {

ad::Var mean_sq_error(const DomainOutput& d)
{
    if (d.prediction.shape() != d.target.shape())
        throw ShapeError("prediction and target shapes differ");
    return ad::mean(ad::squared_difference(d.prediction, d.target));
}

ad::Var flatten_rows(ad::Var features)
{
    const auto& s = features.shape();
    if (s.empty())
        throw ShapeError("features must have a sample axis");
    const std::size_t rows = s[0];
    return ad::reshape(features, Shape{rows, rows ? features.value().size() / rows : 0});
}

// Uniform integer in [0, n) by rejection, independent of the standard
// library's distribution implementation.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n)
{
    const std::uint64_t range = n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t r = rng();
    while (r >= limit)
        r = rng();
    return static_cast<std::size_t>(r % range);
}

// Draws batch indices: without replacement while the domain is large
// enough, with replacement otherwise. The permutation persists across steps.
class BatchSampler {
public:
    explicit BatchSampler(std::size_t n) : order_(n) { std::iota(order_.begin(), order_.end(), std::size_t{0}); }

    std::vector<std::size_t> draw(std::size_t batch, std::mt19937_64& rng)
    {
        const std::size_t n = order_.size();
        std::vector<std::size_t> out(batch);
        if (n >= batch) {
            for (std::size_t i = 0; i < batch; ++i) {
                std::swap(order_[i], order_[i + uniform_index(rng, n - i)]);
                out[i] = order_[i];
            }
        } else {
            for (auto& v : out)
                v = uniform_index(rng, n);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
};

// Trainable tensors and their bound variables, in a fixed order.
struct TrainableSet {
    ParameterSet* set;
    const BoundParameters* bound;
};

void collect(const TrainableSet& t, const ad::Gradients& grads, std::vector<Tensor*>& params,
             std::vector<const Tensor*>& out)
{
    const auto& names = t.set->names();
    const auto& vars = t.bound->vars();
    for (std::size_t i = 0; i < names.size(); ++i) {
        params.push_back(&t.set->at(names[i]));
        out.push_back(&grads[vars[i]]);
    }
}

} // namespace

ad::Var regression_loss(const DomainOutput& target, std::span<const DomainOutput> subdomains)
{
    if (target.prediction.value().size() == 0)
        throw ValidationError("empty target batch");
    ad::Var loss = mean_sq_error(target);
    if (subdomains.empty())
        return loss;
    ad::Var sum = mean_sq_error(subdomains[0]);
    for (std::size_t i = 1; i < subdomains.size(); ++i)
        sum = ad::add(sum, mean_sq_error(subdomains[i]));
    return ad::add(loss, ad::scale(sum, 1.0 / static_cast<double>(subdomains.size())));
}

ad::Var domain_adaptation_loss(ad::Var target_features, std::span<const ad::Var> subdomain_features,
                               const KernelConfig& config)
{
    ad::Graph& g = target_features.graph();
    if (subdomain_features.empty())
        return g.constant(Tensor(Shape{1}));
    ad::Var t = flatten_rows(target_features);
    ad::Var sum;
    for (std::size_t i = 0; i < subdomain_features.size(); ++i) {
        ad::Var s = flatten_rows(subdomain_features[i]);
        if (s.shape()[1] != t.shape()[1])
            throw ShapeError("feature width mismatch between sub-domain and target");
        ad::Var term = ad::mmd_squared(s, t, config);
        sum = i == 0 ? term : ad::add(sum, term);
    }
    return sum;
}

ad::Var total_loss(ad::Var regression, ad::Var da, double lambda)
{
    return ad::add(regression, ad::scale(da, lambda));
}

std::string_view optimizer_name(OptimizerKind kind) noexcept
{
    switch (kind) {
    case OptimizerKind::adam:
        return "adam";
    case OptimizerKind::sgd:
        return "sgd";
    case OptimizerKind::rmsprop:
        return "rmsprop";
    }
    return "adam";
}

OptimizerKind parse_optimizer(std::string_view name)
{
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (auto k : {OptimizerKind::adam, OptimizerKind::sgd, OptimizerKind::rmsprop})
        if (optimizer_name(k) == lower)
            return k;
    throw ValidationError("unknown optimizer '" + std::string(name) + "' (expected adam, sgd or rmsprop)");
}

void optimizer_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimizerState& state,
                    const OptimizerConfig& config)
{
    if (params.size() != grads.size())
        throw ShapeError("parameter and gradient counts differ");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i]->shape() != grads[i]->shape())
            throw ShapeError("gradient shape does not match parameter " + std::to_string(i));
    const bool adam = config.kind == OptimizerKind::adam;
    if (config.kind != OptimizerKind::sgd) {
        if (state.second.empty()) {
            for (const Tensor* p : params) {
                state.second.emplace_back(p->shape());
                if (adam)
                    state.first.emplace_back(p->shape());
            }
        }
        if (state.second.size() != params.size())
            throw ShapeError("optimizer state was built for a different parameter list");
    }
    ++state.step;
    const double lr = config.learning_rate;
    const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i]->data();
        const double* g = grads[i]->data();
        const std::size_t n = params[i]->size();
        switch (config.kind) {
        case OptimizerKind::sgd:
            for (std::size_t k = 0; k < n; ++k)
                p[k] -= lr * g[k];
            break;
        case OptimizerKind::rmsprop: {
            double* v = state.second[i].data();
            for (std::size_t k = 0; k < n; ++k) {
                v[k] = config.rms_decay * v[k] + (1.0 - config.rms_decay) * g[k] * g[k];
                p[k] -= lr * g[k] / (std::sqrt(v[k]) + config.epsilon);
            }
            break;
        }
        case OptimizerKind::adam: {
            double* m = state.first[i].data();
            double* v = state.second[i].data();
            for (std::size_t k = 0; k < n; ++k) {
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
                p[k] -= lr * (m[k] / bias1) / (std::sqrt(v[k] / bias2) + config.epsilon);
            }
            break;
        }
        }
    }
}

void TrainConfig::validate() const
{
    if (epochs < 1)
        throw ValidationError("epochs must be >= 1");
    if (batch_size < 1)
        throw ValidationError("batch size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ValidationError("learning rate must be positive");
    if (!std::isfinite(da_weight) || da_weight < 0.0)
        throw ValidationError("domain adaptation weight must be finite and >= 0");
    if (validation_every < 1)
        throw ValidationError("validation interval must be >= 1");
}

std::vector<std::vector<WindowSample>> partition_windows(std::vector<WindowSample> windows,
                                                         const Partition& partition, const WindowConfig& windows_cfg)
{
    const auto& b = partition.boundaries;
    std::vector<std::vector<WindowSample>> out(b.size() + 1);
    for (auto& w : windows) {
        const std::size_t day = w.first_forecast_day(windows_cfg);
        const auto seg = static_cast<std::size_t>(std::upper_bound(b.begin(), b.end(), day) - b.begin());
        out[seg].push_back(std::move(w));
    }
    return out;
}

std::string epoch_record_json(const EpochRecord& r)
{
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["total"] = r.total;
    j["regression"] = r.regression;
    j["da"] = r.da;
    j["val_rmse"] = r.val_rmse ? nlohmann::ordered_json(*r.val_rmse) : nlohmann::ordered_json(nullptr);
    return j.dump();
}

namespace {

std::vector<const WindowSample*> strided(const std::vector<WindowSample>& samples, std::size_t take)
{
    const std::size_t n = samples.size();
    take = take == 0 || take >= n ? n : take;
    std::vector<const WindowSample*> out;
    for (std::size_t i = 0; i < take; ++i)
        out.push_back(&samples[i * n / take]);
    return out;
}

Tensor flat_features(const ModelParameters& params, const std::vector<const WindowSample*>& samples,
                     const ModelConfig& model)
{
    ad::Graph g;
    BoundParameters ext(g, params.extractor, false), head(g, params.head, false);
    ad::BatchNormStats stats = params.fusion_stats;
    ad::BatchNormOptions bn;
    bn.update_running = false;
    const auto r = extractor_forward(g, make_batch(samples), ext, head, stats, bn, model);
    const std::size_t rows = samples.size();
    return r.features.value().reshaped({rows, r.features.value().size() / rows});
}

} // namespace

double validation_rmse(const ModelParameters& params, const std::vector<WindowSample>& samples,
                       const ModelConfig& model, std::size_t max_windows)
{
    if (samples.empty())
        throw ValidationError("no validation windows");
    const auto picked = strided(samples, max_windows);

    const std::size_t c = model.output_channels;
    std::vector<double> sse(c, 0.0);
    std::size_t count = 0;
    constexpr std::size_t chunk = 32;
    for (std::size_t s = 0; s < picked.size(); s += chunk) {
        std::vector<const WindowSample*> part(picked.begin() + static_cast<std::ptrdiff_t>(s),
                                              picked.begin() + static_cast<std::ptrdiff_t>(std::min(picked.size(), s + chunk)));
        const Batch batch = make_batch(part);
        const Tensor pred = model_forward(batch, params, model).values;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - batch.target[i];
            sse[i % c] += d * d;
        }
        count += pred.size() / c;
    }
    double acc = 0.0;
    for (double v : sse)
        acc += std::sqrt(v / static_cast<double>(count));
    return acc / static_cast<double>(c);
}

double feature_bandwidth(const ModelParameters& params, const std::vector<WindowSample>& target,
                         const std::vector<const std::vector<WindowSample>*>& sources, const ModelConfig& model,
                         std::size_t max_windows)
{
    if (target.empty() || sources.empty())
        throw ValidationError("feature bandwidth needs target and sub-domain windows");
    std::vector<const WindowSample*> pooled;
    const std::size_t per = std::max<std::size_t>(1, max_windows / sources.size());
    for (const auto* s : sources) {
        const auto part = strided(*s, per);
        pooled.insert(pooled.end(), part.begin(), part.end());
    }
    return median_bandwidth(SampleSet(flat_features(params, strided(target, max_windows), model)),
                            SampleSet(flat_features(params, pooled, model)));
}

ModelParameters transfer_extractor(const ModelParameters& pretrained, const ModelConfig& model, std::uint64_t seed)
{
    ModelParameters p = pretrained;
    p.head = init_head(model, seed);
    return p;
}

TrainResult fit(const DomainBundle& bundle, const ModelConfig& model, const TrainConfig& train,
                const FitOptions& options)
{
    model.validate();
    train.validate();
    if (bundle.target_train.empty())
        throw ValidationError("target training split is empty");

    const std::size_t k = bundle.subdomains.size();
    std::vector<std::size_t> included, separate;
    if (!train.target_only) {
        if (bundle.plan.transferable.size() != k)
            throw ValidationError("transfer plan covers " + std::to_string(bundle.plan.transferable.size()) +
                                  " sub-domains, bundle has " + std::to_string(k));
        for (std::size_t i = 0; i < k; ++i) {
            if (bundle.plan.transferable[i])
                included.push_back(i);
            else if (train.keep_nontransferable_heads)
                separate.push_back(i);
        }
        if (included.empty())
            throw ValidationError("no transferable sub-domain; use target-only mode");
        for (std::size_t i : included)
            if (bundle.subdomains[i].empty())
                throw ValidationError("transferable sub-domain " + std::to_string(i) + " has no windows");
        std::erase_if(separate, [&](std::size_t i) { return bundle.subdomains[i].empty(); });
    }

    TrainResult result;
    result.final_params = options.initial ? *options.initial : init_parameters(model, train.seed);
    ModelParameters& params = result.final_params;
    result.subdomain_heads.resize(k);
    for (std::size_t i : included)
        result.subdomain_heads[i] = init_head(model, derive_seed(train.seed, i + 1));
    std::vector<ModelParameters> separate_models;
    for (std::size_t i : separate)
        separate_models.push_back(init_parameters(model, derive_seed(train.seed, 1000 + i)));

    std::mt19937_64 rng(train.seed);
    BatchSampler target_sampler(bundle.target_train.size());
    std::vector<BatchSampler> included_samplers, separate_samplers;
    for (std::size_t i : included)
        included_samplers.emplace_back(bundle.subdomains[i].size());
    for (std::size_t i : separate)
        separate_samplers.emplace_back(bundle.subdomains[i].size());

    KernelConfig da_kernel = options.kernel;
    if (options.median_bandwidth && !included.empty()) {
        std::vector<const std::vector<WindowSample>*> sources;
        for (std::size_t i : included)
            sources.push_back(&bundle.subdomains[i]);
        try {
            da_kernel.bandwidth = feature_bandwidth(params, bundle.target_train, sources, model);
        } catch (const ValidationError&) {
            // all feature rows coincide: keep the configured bandwidth
        }
    }
    result.da_bandwidth = da_kernel.bandwidth;

    const OptimizerConfig opt{train.optimizer, train.learning_rate};
    OptimizerState state;
    const bool has_validation = !bundle.target_validation.empty();

    ad::BatchNormOptions bn_target;
    ad::BatchNormOptions bn_source;
    bn_source.update_running = false;

    for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
        ad::Graph g;
        BoundParameters ext(g, params.extractor, true);
        BoundParameters head(g, params.head, true);
        const Batch tb = make_batch(bundle.target_train, target_sampler.draw(train.batch_size, rng));
        const ForwardResult rt = extractor_forward(g, tb, ext, head, params.fusion_stats, bn_target, model);
        const DomainOutput target_out{rt.prediction, g.constant(tb.target)};

        std::vector<DomainOutput> source_out;
        std::vector<ad::Var> source_features;
        std::vector<BoundParameters> sub_heads;
        sub_heads.reserve(included.size());
        for (std::size_t j = 0; j < included.size(); ++j) {
            const auto& samples = bundle.subdomains[included[j]];
            const Batch sb = make_batch(samples, included_samplers[j].draw(train.batch_size, rng));
            sub_heads.emplace_back(g, result.subdomain_heads[included[j]], true);
            const ForwardResult rs =
                extractor_forward(g, sb, ext, sub_heads.back(), params.fusion_stats, bn_source, model);
            source_out.push_back({rs.prediction, g.constant(sb.target)});
            source_features.push_back(rs.features);
        }
        std::vector<BoundParameters> sep_ext, sep_head;
        sep_ext.reserve(separate.size());
        sep_head.reserve(separate.size());
        for (std::size_t j = 0; j < separate.size(); ++j) {
            const auto& samples = bundle.subdomains[separate[j]];
            const Batch sb = make_batch(samples, separate_samplers[j].draw(train.batch_size, rng));
            auto& sm = separate_models[j];
            sep_ext.emplace_back(g, sm.extractor, true);
            sep_head.emplace_back(g, sm.head, true);
            const ForwardResult rs =
                extractor_forward(g, sb, sep_ext.back(), sep_head.back(), sm.fusion_stats, bn_target, model);
            source_out.push_back({rs.prediction, g.constant(sb.target)});
        }

        const ad::Var reg = regression_loss(target_out, source_out);
        const ad::Var da = domain_adaptation_loss(rt.features, source_features, da_kernel);
        const ad::Var total = total_loss(reg, da, train.da_weight);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.total = total.value().item();
        rec.regression = reg.value().item();
        rec.da = da.value().item();
        if (!std::isfinite(rec.total))
            throw DivergedError("training diverged at epoch " + std::to_string(epoch), epoch);

        const ad::Gradients grads = g.backward(total);
        std::vector<Tensor*> ptrs;
        std::vector<const Tensor*> gptrs;
        collect({&params.extractor, &ext}, grads, ptrs, gptrs);
        collect({&params.head, &head}, grads, ptrs, gptrs);
        for (std::size_t j = 0; j < included.size(); ++j)
            collect({&result.subdomain_heads[included[j]], &sub_heads[j]}, grads, ptrs, gptrs);
        for (std::size_t j = 0; j < separate.size(); ++j) {
            collect({&separate_models[j].extractor, &sep_ext[j]}, grads, ptrs, gptrs);
            collect({&separate_models[j].head, &sep_head[j]}, grads, ptrs, gptrs);
        }
        optimizer_step(ptrs, gptrs, state, opt);

        if (has_validation && (epoch % train.validation_every == 0 || epoch == train.epochs)) {
            rec.val_rmse = validation_rmse(params, bundle.target_validation, model, train.validation_windows);
            if (*rec.val_rmse < result.best_val_rmse) {
                result.best_val_rmse = *rec.val_rmse;
                result.best_epoch = epoch;
                result.best_params = params;
            }
        }
        if (options.log)
            *options.log << epoch_record_json(rec) << '\n' << std::flush;
        result.log.push_back(rec);
    }
    if (result.best_epoch == 0) {
        result.best_params = params;
        result.best_epoch = train.epochs;
    }
    return result;
}

// ---- grid search ----------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept
{
    // splitmix64 finalizer over the pair
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::size_t GridSpace::size() const
{
    return heads.size() * encoder_layers.size() * decoder_layers.size() * mlp_hidden.size() * batch_sizes.size() *
           learning_rates.size() * optimizers.size() * std::max<std::size_t>(1, epochs.size());
}

std::vector<GridCandidate> expand_grid(const GridSpace& space, const ModelConfig& base_model,
                                       const TrainConfig& base_train, const GridOptions& options)
{
    const std::size_t total = space.size();
    if (total == 0)
        throw ValidationError("empty hyperparameter grid");
    const std::vector<std::size_t> epoch_list =
        space.epochs.empty() ? std::vector<std::size_t>{options.epochs_per_candidate} : space.epochs;

    auto make = [&](std::size_t index) {
        std::size_t r = index;
        auto pick = [&r](std::size_t n) {
            const std::size_t v = r % n;
            r /= n;
            return v;
        };
        // last axis varies fastest
        const std::size_t e = pick(epoch_list.size());
        const std::size_t o = pick(space.optimizers.size());
        const std::size_t l = pick(space.learning_rates.size());
        const std::size_t b = pick(space.batch_sizes.size());
        const std::size_t m = pick(space.mlp_hidden.size());
        const std::size_t d = pick(space.decoder_layers.size());
        const std::size_t n = pick(space.encoder_layers.size());
        const std::size_t h = pick(space.heads.size());
        GridCandidate c;
        c.index = index;
        c.model = base_model;
        c.model.heads = space.heads[h];
        c.model.d_model = (base_model.d_model + c.model.heads - 1) / c.model.heads * c.model.heads;
        c.model.encoder_layers = space.encoder_layers[n];
        c.model.decoder_layers = space.decoder_layers[d];
        c.model.mlp_hidden = space.mlp_hidden[m];
        c.train = base_train;
        c.train.batch_size = space.batch_sizes[b];
        c.train.learning_rate = space.learning_rates[l];
        c.train.optimizer = space.optimizers[o];
        c.train.epochs = epoch_list[e];
        c.train.seed = derive_seed(base_train.seed, index);
        return c;
    };

    const std::size_t take = options.budget == 0 || options.budget >= total ? total : options.budget;
    std::vector<GridCandidate> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        out.push_back(make(i * total / take));
    return out;
}

GridResult grid_search(const GridSpace& space, const DomainBundle& bundle, const ModelConfig& base_model,
                       const TrainConfig& base_train, const GridOptions& options)
{
    if (bundle.target_validation.empty())
        throw ValidationError("grid search needs a validation split");
    const auto candidates = expand_grid(space, base_model, base_train, options);
    std::vector<GridEntry> entries(candidates.size());

    auto evaluate = [&](std::size_t i) {
        const GridCandidate& c = candidates[i];
        entries[i].candidate = c;
        try {
            if (c.train.epochs == 0) {
                entries[i].val_rmse = validation_rmse(init_parameters(c.model, c.train.seed), bundle.target_validation,
                                                      c.model, c.train.validation_windows);
            } else {
                FitOptions fo;
                fo.kernel = options.kernel;
                entries[i].val_rmse = fit(bundle, c.model, c.train, fo).best_val_rmse;
            }
        } catch (const DivergedError&) {
            entries[i].val_rmse = std::numeric_limits<double>::infinity();
        }
        if (std::isnan(entries[i].val_rmse))
            entries[i].val_rmse = std::numeric_limits<double>::infinity();
    };

    const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, candidates.size());
    if (threads == 1) {
        for (std::size_t i = 0; i < candidates.size(); ++i)
            evaluate(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < candidates.size(); i = next++) {
                    try {
                        evaluate(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure)
                            failure = std::current_exception();
                    }
                }
            });
        for (auto& th : pool)
            th.join();
        if (failure)
            std::rethrow_exception(failure);
    }

    GridResult result;
    result.leaderboard = entries;
    std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                     [](const GridEntry& a, const GridEntry& b) { return a.val_rmse < b.val_rmse; });
    result.best = result.leaderboard.front().candidate;
    return result;
}

} // namespace driftgate
