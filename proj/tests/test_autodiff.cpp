#include "driftgate/autodiff.hpp"
#include "driftgate/errors.hpp"
#include "driftgate/grad_check.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

using namespace driftgate;
using namespace driftgate::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double spread = 1.0)
{
    std::normal_distribution<double> n(0.0, spread);
    Tensor t(std::move(shape));
    for (double& v : t.values())
        v = n(rng);
    return t;
}

// Random linear read-out so that every output coordinate contributes an O(1) gradient.
Var readout(Var y, const Tensor& weights)
{
    return sum(mul(y, y.graph().constant(weights)));
}

struct OpCase {
    const char* name;
    Shape input_shape;
    std::function<Var(Var, std::mt19937_64&)> build;
};

} // namespace

TEST_CASE("forward ops: shape rules and definitions")
{
    Graph g;
    auto a = g.constant(Tensor(Shape{2, 3}, 1.0));
    auto b = g.constant(Tensor(Shape{3, 4}, 1.0));
    CHECK(matmul(a, b).shape() == Shape{2, 4});

    auto zero_row = softmax(g.constant(Tensor(Shape{1, 5}, 0.0)));
    for (double v : zero_row.value().values())
        CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

    auto r = relu(g.constant(Tensor::vector({-1.0, 0.0, 2.0})));
    CHECK(r.value() == Tensor::vector({0.0, 0.0, 2.0}));

    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_AS(parse_op_kind("conv2d"), ValidationError);
    CHECK(parse_op_kind("layer_norm") == OpKind::layer_norm);
}

TEST_CASE("backward: worked examples")
{
    {
        Graph g;
        auto x = g.parameter(Tensor::vector({0.5, -1.0, 3.0}));
        auto loss = sum(scale(x, 2.0));
        auto grads = g.backward(loss);
        CHECK(grads[x] == Tensor::vector({2.0, 2.0, 2.0}));
    }
    {
        Graph g;
        auto x = g.parameter(Tensor::vector({1.0, 2.0, 3.0}));
        auto y = g.constant(Tensor::vector({1.0, 2.0, 3.0}));
        auto grads = g.backward(mean(squared_difference(x, y)));
        for (double v : grads[x].values())
            CHECK(v == 0.0);
    }
    {
        Graph g;
        auto x = g.parameter(Tensor::vector({1.0, 2.0}));
        auto unused = g.parameter(Tensor(Shape{2, 2}, 5.0));
        auto grads = g.backward(sum(x));
        CHECK(grads[unused] == Tensor(Shape{2, 2}, 0.0));
        CHECK(grads.count() == 2);
    }
    {
        Graph g;
        auto x = g.parameter(Tensor::vector({1.0, 2.0}));
        CHECK_THROWS_AS(g.backward(x), ShapeError);
    }
}

TEST_CASE("grad_check: linear function is exact")
{
    Tensor w = Tensor::vector({0.3, -1.7, 2.2, 4.0});
    auto f = [&](Var x) { return sum(mul(x, x.graph().constant(w))); };
    CHECK(grad_check(f, Tensor::vector({1.0, 2.0, 3.0, 4.0})) < 1e-9);
    CHECK_THROWS_AS(grad_check([](Var x) { return x; }, Tensor::vector({1.0, 2.0})), ShapeError);
}

TEST_CASE("grad_check: random three-layer composite")
{
    std::mt19937_64 rng(11);
    const Tensor w1 = random_tensor({4, 6}, rng);
    const Tensor w2 = random_tensor({6, 5}, rng);
    const Tensor w3 = random_tensor({5, 1}, rng);
    auto f = [&](Var x) {
        Graph& g = x.graph();
        auto h1 = tanh(matmul(x, g.constant(w1)));
        auto h2 = softmax(matmul(h1, g.constant(w2)));
        return sum(matmul(h2, g.constant(w3)));
    };
    CHECK(grad_check(f, random_tensor({3, 4}, rng)) < 1e-4);
}

TEST_CASE("every op kind matches central differences on 100 random instances")
{
    std::vector<OpCase> cases;
    cases.push_back({"matmul_lhs", {3, 4}, [](Var x, std::mt19937_64& rng) {
                         return matmul(x, x.graph().constant(random_tensor({4, 2}, rng)));
                     }});
    cases.push_back({"matmul_rhs", {4, 2}, [](Var x, std::mt19937_64& rng) {
                         return matmul(x.graph().constant(random_tensor({3, 4}, rng)), x);
                     }});
    cases.push_back({"matmul_batched", {2, 3, 4}, [](Var x, std::mt19937_64& rng) {
                         return matmul(x, x.graph().constant(random_tensor({2, 4, 3}, rng)));
                     }});
    cases.push_back({"matmul_broadcast_weight", {3, 2}, [](Var w, std::mt19937_64& rng) {
                         return matmul(w.graph().constant(random_tensor({2, 4, 3}, rng)), w);
                     }});
    cases.push_back({"add", {2, 3}, [](Var x, std::mt19937_64& rng) {
                         return add(x, x.graph().constant(random_tensor({2, 3}, rng)));
                     }});
    cases.push_back({"add_bias", {3}, [](Var b, std::mt19937_64& rng) {
                         return add(b.graph().constant(random_tensor({4, 3}, rng)), b);
                     }});
    cases.push_back({"mul", {2, 3}, [](Var x, std::mt19937_64& rng) {
                         return mul(x, x.graph().constant(random_tensor({3}, rng)));
                     }});
    cases.push_back({"mul_broadcast_rhs", {3}, [](Var x, std::mt19937_64& rng) {
                         return mul(x.graph().constant(random_tensor({2, 3}, rng)), x);
                     }});
    cases.push_back({"scale", {5}, [](Var x, std::mt19937_64&) { return scale(x, -1.3); }});
    cases.push_back({"concat", {2, 3}, [](Var x, std::mt19937_64& rng) {
                         std::array parts{x, x.graph().constant(random_tensor({2, 2}, rng)), x};
                         return concat(parts, 1);
                     }});
    cases.push_back({"slice", {3, 5}, [](Var x, std::mt19937_64&) { return slice(x, 1, 1, 3); }});
    cases.push_back({"transpose", {2, 3, 4}, [](Var x, std::mt19937_64&) { return transpose(x); }});
    cases.push_back({"reshape", {2, 6}, [](Var x, std::mt19937_64&) { return reshape(x, {3, 4}); }});
    cases.push_back({"softmax", {3, 4}, [](Var x, std::mt19937_64&) { return softmax(x); }});
    cases.push_back({"relu", {4, 3}, [](Var x, std::mt19937_64&) { return relu(x); }});
    cases.push_back({"tanh", {4, 3}, [](Var x, std::mt19937_64&) { return tanh(x); }});
    cases.push_back({"exp", {4}, [](Var x, std::mt19937_64&) { return exp(x); }});
    cases.push_back({"layer_norm_x", {3, 5}, [](Var x, std::mt19937_64& rng) {
                         Graph& g = x.graph();
                         return layer_norm(x, g.constant(random_tensor({5}, rng)),
                                           g.constant(random_tensor({5}, rng)));
                     }});
    cases.push_back({"layer_norm_gamma", {5}, [](Var gamma, std::mt19937_64& rng) {
                         Graph& g = gamma.graph();
                         return layer_norm(g.constant(random_tensor({3, 5}, rng)), gamma,
                                           g.constant(random_tensor({5}, rng)));
                     }});
    cases.push_back({"batch_norm_train", {8, 3}, [](Var x, std::mt19937_64& rng) {
                         Graph& g = x.graph();
                         static thread_local BatchNormStats stats{Tensor({3}, 0.0), Tensor({3}, 1.0)};
                         BatchNormOptions opt;
                         opt.update_running = false;
                         return batch_norm(x, g.constant(random_tensor({3}, rng)),
                                           g.constant(random_tensor({3}, rng)), stats, opt);
                     }});
    cases.push_back({"batch_norm_gamma", {3}, [](Var gamma, std::mt19937_64& rng) {
                         Graph& g = gamma.graph();
                         static thread_local BatchNormStats stats{Tensor({3}, 0.0), Tensor({3}, 1.0)};
                         BatchNormOptions opt;
                         opt.update_running = false;
                         return batch_norm(g.constant(random_tensor({8, 3}, rng)), gamma,
                                           g.constant(random_tensor({3}, rng)), stats, opt);
                     }});
    cases.push_back({"batch_norm_infer", {4, 3}, [](Var x, std::mt19937_64& rng) {
                         Graph& g = x.graph();
                         static thread_local BatchNormStats stats{Tensor({3}, 0.2), Tensor({3}, 1.7)};
                         BatchNormOptions opt;
                         opt.training = false;
                         return batch_norm(x, g.constant(random_tensor({3}, rng)),
                                           g.constant(random_tensor({3}, rng)), stats, opt);
                     }});
    cases.push_back({"mean", {3, 4}, [](Var x, std::mt19937_64&) { return scale(mean(x), 7.0); }});
    cases.push_back({"sum", {3, 4}, [](Var x, std::mt19937_64&) { return sum(x); }});
    cases.push_back({"squared_difference", {6}, [](Var x, std::mt19937_64& rng) {
                         return squared_difference(x, x.graph().constant(random_tensor({6}, rng)));
                     }});
    cases.push_back({"embedding_lookup", {4, 3}, [](Var table, std::mt19937_64&) {
                         const std::array<std::size_t, 5> idx{2, 0, 2, 3, 1};
                         return embedding_lookup(table, idx);
                     }});
    cases.push_back({"positional_add", {2, 5, 4}, [](Var x, std::mt19937_64&) { return positional_add(x); }});
    cases.push_back({"pairwise_sq_dist", {4, 3}, [](Var x, std::mt19937_64& rng) {
                         return pairwise_sq_dist(x, x.graph().constant(random_tensor({5, 3}, rng)));
                     }});
    cases.push_back({"pairwise_sq_dist_self", {4, 3}, [](Var x, std::mt19937_64&) {
                         return pairwise_sq_dist(x, x);
                     }});

    for (const auto& c : cases) {
        CAPTURE(c.name);
        double worst = 0.0;
        for (int instance = 0; instance < 100; ++instance) {
            std::mt19937_64 rng(1000 + instance);
            Tensor point = random_tensor(c.input_shape, rng);
            for (double& v : point.values())
                if (std::abs(v) < 1e-3)
                    v += 0.01; // keep relu kinks out of the difference stencil
            const std::uint64_t op_seed = rng();
            std::mt19937_64 probe(op_seed);
            const Tensor w = random_tensor(c.build(Graph().constant(point), probe).shape(), probe);
            auto f = [&](Var x) {
                std::mt19937_64 r(op_seed);
                return readout(c.build(x, r), w);
            };
            worst = std::max(worst, grad_check(f, point, 1e-5));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("softmax rows are probability vectors")
{
    std::mt19937_64 rng(5);
    Graph g;
    auto y = softmax(g.constant(random_tensor({20, 7}, rng, 5.0)));
    for (std::size_t r = 0; r < 20; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
            const double v = y.value().at(r, c);
            CHECK(v > 0.0);
            CHECK(v < 1.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-10);
    }
}

TEST_CASE("backward is deterministic")
{
    std::mt19937_64 rng(3);
    const Tensor point = random_tensor({6, 4}, rng);
    const Tensor w = random_tensor({4, 4}, rng);
    auto run = [&] {
        Graph g;
        auto x = g.parameter(point);
        auto h = softmax(matmul(tanh(x), g.constant(w)));
        return g.backward(mean(squared_difference(h, x)))[x];
    };
    CHECK(run() == run());
}

TEST_CASE("batch norm normalises each feature in training mode")
{
    std::mt19937_64 rng(9);
    Tensor x = random_tensor({16, 5}, rng, 3.0);
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 5; ++c)
            x.at(r, c) += static_cast<double>(c) * 10.0;
    Graph g;
    BatchNormStats stats{Tensor({5}, 0.0), Tensor({5}, 1.0)};
    auto y = batch_norm(g.constant(x), g.constant(Tensor({5}, 1.0)), g.constant(Tensor({5}, 0.0)),
                        stats, BatchNormOptions{});
    for (std::size_t c = 0; c < 5; ++c) {
        double mu = 0.0, var = 0.0;
        for (std::size_t r = 0; r < 16; ++r)
            mu += y.value().at(r, c);
        mu /= 16.0;
        for (std::size_t r = 0; r < 16; ++r)
            var += (y.value().at(r, c) - mu) * (y.value().at(r, c) - mu);
        var /= 16.0;
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
    // running averages moved toward the batch statistics with momentum 0.1
    CHECK(stats.running_mean[4] > 0.0);
    CHECK(stats.running_mean[4] < 40.0 * 0.1 + 1.0);
}

TEST_CASE("untracked inputs record no backward work")
{
    Graph g;
    auto c = g.constant(Tensor::vector({1.0, 2.0}));
    auto y = scale(c, 3.0);
    CHECK_FALSE(y.tracked());
    auto p = g.parameter(Tensor::vector({1.0, 1.0}));
    CHECK(add(y, p).tracked());
}
