#include "driftgate/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace driftgate {

using ad::Var;

void ModelConfig::validate() const
{
    if (d_model == 0 || heads == 0 || mlp_hidden == 0 || dynamic_features == 0 || static_features == 0 ||
        input_len == 0 || horizon == 0 || output_channels == 0)
        throw ValidationError("model sizes must be positive");
    if (d_model % heads != 0)
        throw ValidationError("d_model " + std::to_string(d_model) + " is not divisible by " +
                              std::to_string(heads) + " heads");
}

// ---- parameter sets -------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value)
{
    if (contains(name))
        throw ValidationError("duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
}

bool ParameterSet::contains(std::string_view name) const
{
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor& ParameterSet::at(std::string_view name) const
{
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end())
        throw ValidationError("no parameter '" + std::string(name) + "'");
    return values_[static_cast<std::size_t>(it - names_.begin())];
}

Tensor& ParameterSet::at(std::string_view name)
{
    return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).at(name));
}

std::size_t ParameterSet::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& v : values_)
        n += v.size();
    return n;
}

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor glorot(std::size_t in, std::size_t out)
    {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Tensor t(Shape{in, out});
        for (double& v : t.values())
            v = u(rng_);
        return t;
    }

    Tensor uniform(Shape shape, double limit)
    {
        std::uniform_real_distribution<double> u(-limit, limit);
        Tensor t(std::move(shape));
        for (double& v : t.values())
            v = u(rng_);
        return t;
    }

private:
    std::mt19937_64 rng_;
};

void add_linear(ParameterSet& set, Initializer& init, const std::string& name, std::size_t in, std::size_t out,
                bool bias = true)
{
    set.add(name + ".w", init.glorot(in, out));
    if (bias)
        set.add(name + ".b", Tensor(Shape{out}));
}

void add_norm(ParameterSet& set, const std::string& name, std::size_t width)
{
    set.add(name + ".g", Tensor(Shape{width}, 1.0));
    set.add(name + ".b", Tensor(Shape{width}));
}

void add_attention(ParameterSet& set, Initializer& init, const std::string& name, const ModelConfig& c)
{
    for (const char* kind : {"q", "k", "v"})
        for (std::size_t h = 0; h < c.heads; ++h)
            set.add(name + "." + kind + std::to_string(h), init.glorot(c.d_model, c.head_dim()));
    set.add(name + ".o", init.glorot(c.heads * c.head_dim(), c.d_model));
}

void add_feed_forward(ParameterSet& set, Initializer& init, const std::string& name, const ModelConfig& c)
{
    add_linear(set, init, name + ".ff1", c.d_model, c.ff_width());
    add_linear(set, init, name + ".ff2", c.ff_width(), c.d_model);
}

} // namespace

ModelParameters init_parameters(const ModelConfig& c, std::uint64_t seed)
{
    c.validate();
    Initializer init(seed);
    ModelParameters p;
    ParameterSet& e = p.extractor;
    add_linear(e, init, "embed", c.dynamic_features, c.d_model);
    for (std::size_t l = 0; l < c.encoder_layers; ++l) {
        const std::string n = "enc" + std::to_string(l);
        add_attention(e, init, n + ".attn", c);
        add_norm(e, n + ".ln1", c.d_model);
        add_feed_forward(e, init, n, c);
        add_norm(e, n + ".ln2", c.d_model);
    }
    e.add("dec.query", init.uniform(Shape{c.horizon, c.d_model}, 1.0));
    for (std::size_t l = 0; l < c.decoder_layers; ++l) {
        const std::string n = "dec" + std::to_string(l);
        add_attention(e, init, n + ".self", c);
        add_norm(e, n + ".ln1", c.d_model);
        add_attention(e, init, n + ".cross", c);
        add_norm(e, n + ".ln2", c.d_model);
        add_feed_forward(e, init, n, c);
        add_norm(e, n + ".ln3", c.d_model);
    }
    add_linear(e, init, "static.expand", c.static_features, c.d_model);
    add_linear(e, init, "static.fc1", c.d_model, c.mlp_hidden);
    add_linear(e, init, "static.fc2", c.mlp_hidden, c.mlp_hidden);
    add_linear(e, init, "static.fc3", c.mlp_hidden, c.d_model);
    const std::size_t f = c.fusion_width();
    add_norm(e, "fusion.bn", f);
    add_linear(e, init, "fusion.att1", f, f);
    add_linear(e, init, "fusion.att2", f, f);
    p.head = init_head(c, seed ^ 0x9e3779b97f4a7c15ULL);
    p.fusion_stats.running_mean = Tensor(Shape{f}, 0.0);
    p.fusion_stats.running_var = Tensor(Shape{f}, 1.0);
    return p;
}

ParameterSet init_head(const ModelConfig& c, std::uint64_t seed)
{
    Initializer init(seed);
    ParameterSet h;
    add_linear(h, init, "out", c.fusion_width(), c.output_channels);
    return h;
}

BoundParameters::BoundParameters(ad::Graph& graph, const ParameterSet& set, bool trainable) : set_(&set)
{
    vars_.reserve(set.size());
    for (const auto& name : set.names())
        vars_.push_back(trainable ? graph.parameter(set.at(name)) : graph.constant(set.at(name)));
}

Var BoundParameters::operator[](std::string_view name) const
{
    const auto& names = set_->names();
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end())
        throw ValidationError("no parameter '" + std::string(name) + "'");
    return vars_[static_cast<std::size_t>(it - names.begin())];
}

// ---- building blocks ------------------------------------------------------

Var scaled_dot_attention(Var q, Var k, Var v, Var* weights)
{
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    const Shape& vs = v.shape();
    if (qs.size() != ks.size() || qs.size() != vs.size() || (qs.size() != 2 && qs.size() != 3))
        throw ShapeError("attention operands must all be rank 2 or all rank 3");
    if (qs.back() != ks.back())
        throw ShapeError("attention: query width " + std::to_string(qs.back()) + " != key width " +
                         std::to_string(ks.back()));
    if (ks[ks.size() - 2] != vs[vs.size() - 2])
        throw ShapeError("attention: key and value row counts differ");
    const double inv = 1.0 / std::sqrt(static_cast<double>(qs.back()));
    Var att = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv));
    if (weights)
        *weights = att;
    return ad::matmul(att, v);
}

AttentionWeights attention_weights(const BoundParameters& p, const std::string& prefix, std::size_t heads)
{
    AttentionWeights w;
    for (std::size_t h = 0; h < heads; ++h) {
        w.wq.push_back(p[prefix + ".q" + std::to_string(h)]);
        w.wk.push_back(p[prefix + ".k" + std::to_string(h)]);
        w.wv.push_back(p[prefix + ".v" + std::to_string(h)]);
    }
    w.wo = p[prefix + ".o"];
    return w;
}

Var multi_head_attention(Var queries, Var keys_values, const AttentionWeights& w)
{
    const std::size_t heads = w.wq.size();
    if (heads == 0 || w.wk.size() != heads || w.wv.size() != heads)
        throw ShapeError("attention needs the same number (>= 1) of query, key and value projections");
    const std::size_t width = queries.shape().back();
    if (keys_values.shape().back() != width)
        throw ShapeError("queries and keys/values must share the model width");
    const std::size_t dk = w.wq[0].shape().back();
    if (width % heads != 0 || dk * heads != w.wo.shape()[0])
        throw ValidationError("model width " + std::to_string(width) + " is not divisible into " +
                              std::to_string(heads) + " heads");
    // one projection per kind over the concatenated head matrices, then split
    const std::size_t axis = queries.shape().size() - 1;
    Var q_all = ad::matmul(queries, ad::concat(w.wq, 1));
    Var k_all = ad::matmul(keys_values, ad::concat(w.wk, 1));
    Var v_all = ad::matmul(keys_values, ad::concat(w.wv, 1));
    if (heads == 1)
        return ad::matmul(scaled_dot_attention(q_all, k_all, v_all), w.wo);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h)
        outs.push_back(scaled_dot_attention(ad::slice(q_all, axis, h * dk, dk), ad::slice(k_all, axis, h * dk, dk),
                                            ad::slice(v_all, axis, h * dk, dk)));
    return ad::matmul(ad::concat(outs, axis), w.wo);
}

namespace {

Var linear(Var x, const BoundParameters& p, const std::string& name)
{
    return ad::add(ad::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

Var add_norm(Var x, Var sub, const BoundParameters& p, const std::string& name)
{
    return ad::layer_norm(ad::add(x, sub), p[name + ".g"], p[name + ".b"]);
}

Var feed_forward(Var x, const BoundParameters& p, const std::string& name)
{
    return linear(ad::relu(linear(x, p, name + ".ff1")), p, name + ".ff2");
}

void expect_shape(const Var& v, const Shape& shape, const char* what)
{
    if (v.shape() != shape)
        throw ShapeError(std::string(what) + ": expected " + shape_string(shape) + ", got " +
                         shape_string(v.shape()));
}

} // namespace

Var encode(Var dynamic, const BoundParameters& p, const ModelConfig& c)
{
    if (dynamic.shape().size() != 3)
        throw ShapeError("encode: dynamic input must be [B, t, F], got " + shape_string(dynamic.shape()));
    const std::size_t b = dynamic.shape()[0];
    expect_shape(dynamic, Shape{b, c.input_len, c.dynamic_features}, "encode");
    Var x = ad::positional_add(linear(dynamic, p, "embed"));
    for (std::size_t l = 0; l < c.encoder_layers; ++l) {
        const std::string n = "enc" + std::to_string(l);
        x = add_norm(x, multi_head_attention(x, x, attention_weights(p, n + ".attn", c.heads)), p, n + ".ln1");
        x = add_norm(x, feed_forward(x, p, n), p, n + ".ln2");
    }
    return x;
}

Var decode(Var memory, const BoundParameters& p, const ModelConfig& c)
{
    if (memory.shape().size() != 3 || memory.shape()[2] != c.d_model)
        throw ShapeError("decode: memory must be [B, L, d_model], got " + shape_string(memory.shape()));
    const std::size_t b = memory.shape()[0];
    Var x = ad::add(memory.graph().constant(Tensor(Shape{b, c.horizon, c.d_model})), p["dec.query"]);
    for (std::size_t l = 0; l < c.decoder_layers; ++l) {
        const std::string n = "dec" + std::to_string(l);
        x = add_norm(x, multi_head_attention(x, x, attention_weights(p, n + ".self", c.heads)), p, n + ".ln1");
        x = add_norm(x, multi_head_attention(x, memory, attention_weights(p, n + ".cross", c.heads)), p,
                     n + ".ln2");
        x = add_norm(x, feed_forward(x, p, n), p, n + ".ln3");
    }
    return x;
}

Var static_branch(Var s, const BoundParameters& p, const ModelConfig& c)
{
    if (s.shape().size() != 2 || s.shape()[1] != c.static_features)
        throw ShapeError("static branch: expected [B, " + std::to_string(c.static_features) + "], got " +
                         shape_string(s.shape()));
    Var x = linear(s, p, "static.expand");
    x = ad::relu(linear(x, p, "static.fc1"));
    x = ad::relu(linear(x, p, "static.fc2"));
    return linear(x, p, "static.fc3");
}

FusionOutput fuse(Var decoded, Var static_vec, const BoundParameters& p, ad::BatchNormStats& stats,
                  const ad::BatchNormOptions& bn, const ModelConfig& c)
{
    if (decoded.shape().size() != 3 || decoded.shape()[2] != c.d_model)
        throw ShapeError("fuse: decoder features must be [B, H, d_model], got " + shape_string(decoded.shape()));
    const std::size_t b = decoded.shape()[0];
    const std::size_t h = decoded.shape()[1];
    expect_shape(static_vec, Shape{b, c.d_model}, "fuse: static features");
    ad::Graph& g = decoded.graph();
    Var per_step;
    if (c.static_ablation)
        per_step = g.constant(Tensor(Shape{b, h, c.d_model}));
    else
        per_step = ad::matmul(g.constant(Tensor(Shape{b, h, 1}, 1.0)), ad::reshape(static_vec, Shape{b, 1, c.d_model}));
    std::array parts{decoded, per_step};
    Var z = ad::concat(parts, 2);
    z = ad::batch_norm(z, p["fusion.bn.g"], p["fusion.bn.b"], stats, bn);
    Var scores = linear(ad::tanh(linear(z, p, "fusion.att1")), p, "fusion.att2");
    Var alpha = ad::softmax(scores);
    Var gated = ad::scale(ad::mul(alpha, z), static_cast<double>(c.fusion_width()));
    return {gated, alpha};
}

Var predict_head(Var features, const BoundParameters& head)
{
    return linear(features, head, "out");
}

Var fuse_predict(Var decoded, Var static_vec, const BoundParameters& p, const BoundParameters& head,
                 ad::BatchNormStats& stats, const ad::BatchNormOptions& bn, const ModelConfig& c)
{
    return predict_head(fuse(decoded, static_vec, p, stats, bn, c).features, head);
}

// ---- whole model ----------------------------------------------------------

Batch make_batch(const std::vector<const WindowSample*>& samples)
{
    if (samples.empty())
        throw ValidationError("empty batch");
    const Shape ds = samples[0]->dynamic.shape();
    const Shape ss = samples[0]->static_features.shape();
    const Shape ts = samples[0]->target.shape();
    const std::size_t n = samples.size();
    Batch b;
    b.dynamic = Tensor(Shape{n, ds[0], ds[1]});
    b.statics = Tensor(Shape{n, ss[0]});
    if (ts.size() == 2)
        b.target = Tensor(Shape{n, ts[0], ts[1]});
    for (std::size_t i = 0; i < n; ++i) {
        const WindowSample& s = *samples[i];
        if (s.dynamic.shape() != ds || s.static_features.shape() != ss || s.target.shape() != ts)
            throw ShapeError("batch samples have inconsistent shapes");
        std::copy(s.dynamic.values().begin(), s.dynamic.values().end(), b.dynamic.data() + i * s.dynamic.size());
        std::copy(s.static_features.values().begin(), s.static_features.values().end(),
                  b.statics.data() + i * s.static_features.size());
        if (ts.size() == 2)
            std::copy(s.target.values().begin(), s.target.values().end(), b.target.data() + i * s.target.size());
    }
    return b;
}

Batch make_batch(const std::vector<WindowSample>& samples, std::span<const std::size_t> indices)
{
    std::vector<const WindowSample*> ptrs;
    ptrs.reserve(indices.size());
    for (std::size_t i : indices)
        ptrs.push_back(&samples.at(i));
    return make_batch(ptrs);
}

ForwardResult extractor_forward(ad::Graph& g, const Batch& batch, const BoundParameters& extractor,
                                const BoundParameters& head, ad::BatchNormStats& stats,
                                const ad::BatchNormOptions& bn, const ModelConfig& c)
{
    Var memory = encode(g.constant(batch.dynamic), extractor, c);
    Var decoded = decode(memory, extractor, c);
    Var s = static_branch(g.constant(batch.statics), extractor, c);
    FusionOutput f = fuse(decoded, s, extractor, stats, bn, c);
    return {predict_head(f.features, head), f.features, f.attention};
}

Prediction model_forward(const Batch& batch, const ModelParameters& params, const ModelConfig& c)
{
    ad::Graph g;
    BoundParameters e(g, params.extractor, false);
    BoundParameters h(g, params.head, false);
    ad::BatchNormStats stats = params.fusion_stats;
    ad::BatchNormOptions bn;
    bn.training = false;
    bn.update_running = false;
    auto r = extractor_forward(g, batch, e, h, stats, bn, c);
    return {r.prediction.value(), r.attention.value()};
}

AttentionSummary summarize_attention(const Tensor& attention, const ModelConfig& c)
{
    const std::size_t f = c.fusion_width();
    if (attention.rank() != 3 || attention.shape()[2] != f)
        throw ShapeError("attention summary: expected [B, H, " + std::to_string(f) + "]");
    AttentionSummary s;
    s.per_channel.assign(f, 0.0);
    const std::size_t rows = attention.size() / f;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < f; ++k)
            s.per_channel[k] += attention[r * f + k];
    for (double& v : s.per_channel)
        v /= static_cast<double>(rows);
    for (std::size_t k = 0; k < f; ++k)
        (k < c.d_model ? s.dynamic_block : s.static_block) += s.per_channel[k];
    return s;
}

// ---- persistence ----------------------------------------------------------

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& c)
{
    return {{"d_model", c.d_model},
            {"heads", c.heads},
            {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers},
            {"mlp_hidden", c.mlp_hidden},
            {"dynamic_features", c.dynamic_features},
            {"static_features", c.static_features},
            {"input_len", c.input_len},
            {"horizon", c.horizon},
            {"output_channels", c.output_channels},
            {"static_ablation", c.static_ablation}};
}

ModelConfig config_from_json(const nlohmann::json& j)
{
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.dynamic_features = j.at("dynamic_features").get<std::size_t>();
    c.static_features = j.at("static_features").get<std::size_t>();
    c.input_len = j.at("input_len").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.output_channels = j.at("output_channels").get<std::size_t>();
    c.static_ablation = j.at("static_ablation").get<bool>();
    c.validate();
    return c;
}

nlohmann::ordered_json tensor_json(const Tensor& t)
{
    return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from_json(const nlohmann::json& j)
{
    return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

nlohmann::ordered_json set_json(const ParameterSet& s)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& name : s.names())
        j.push_back({{"name", name}, {"tensor", tensor_json(s.at(name))}});
    return j;
}

ParameterSet set_from_json(const nlohmann::json& j)
{
    ParameterSet s;
    for (const auto& e : j)
        s.add(e.at("name").get<std::string>(), tensor_from_json(e.at("tensor")));
    return s;
}

void check_against(const ParameterSet& loaded, const ParameterSet& expected, const char* what)
{
    if (loaded.names() != expected.names())
        throw ValidationError(std::string("checkpoint ") + what + " parameters do not match the stored config");
    for (const auto& n : expected.names())
        if (loaded.at(n).shape() != expected.at(n).shape())
            throw ValidationError("checkpoint parameter '" + n + "' has shape " +
                                  shape_string(loaded.at(n).shape()) + ", expected " +
                                  shape_string(expected.at(n).shape()));
}

} // namespace

std::string model_config_json(const ModelConfig& c)
{
    return config_to_json(c).dump();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    nlohmann::ordered_json j;
    j["format"] = "driftgate-checkpoint";
    j["version"] = 1;
    j["config"] = config_to_json(ckpt.config);
    j["windows"] = {{"input_len", ckpt.windows.input_len},
                    {"horizon", ckpt.windows.horizon},
                    {"stride", ckpt.windows.stride},
                    {"dynamic_features", ckpt.windows.dynamic_features}};
    j["extractor"] = set_json(ckpt.params.extractor);
    j["head"] = set_json(ckpt.params.head);
    j["fusion_stats"] = {{"running_mean", tensor_json(ckpt.params.fusion_stats.running_mean)},
                         {"running_var", tensor_json(ckpt.params.fusion_stats.running_var)}};
    if (ckpt.normalization)
        j["normalization"] = nlohmann::json::parse(ckpt.normalization->to_json());
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write checkpoint " + path.string());
    out << j.dump();
    if (!out)
        throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        const auto j = nlohmann::json::parse(ss.str());
        if (j.at("format") != "driftgate-checkpoint" || j.at("version") != 1)
            throw ValidationError("not a driftgate checkpoint: " + path.string());
        Checkpoint c;
        c.config = config_from_json(j.at("config"));
        const auto& w = j.at("windows");
        c.windows.input_len = w.at("input_len").get<std::size_t>();
        c.windows.horizon = w.at("horizon").get<std::size_t>();
        c.windows.stride = w.at("stride").get<std::size_t>();
        c.windows.dynamic_features = w.at("dynamic_features").get<std::size_t>();
        c.params.extractor = set_from_json(j.at("extractor"));
        c.params.head = set_from_json(j.at("head"));
        c.params.fusion_stats.running_mean = tensor_from_json(j.at("fusion_stats").at("running_mean"));
        c.params.fusion_stats.running_var = tensor_from_json(j.at("fusion_stats").at("running_var"));
        if (j.contains("normalization"))
            c.normalization = NormalizationParams::from_json(j.at("normalization").dump());
        const auto reference = init_parameters(c.config, 0);
        check_against(c.params.extractor, reference.extractor, "extractor");
        check_against(c.params.head, reference.head, "head");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed checkpoint " + path.string() + ": " + e.what());
    }
}

} // namespace driftgate
