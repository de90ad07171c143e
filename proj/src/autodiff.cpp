#include "driftgate/autodiff.hpp"

#include "driftgate/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace driftgate::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr std::array op_names{
    "leaf",      "matmul",  "add",       "mul",        "scale",      "concat",
    "slice",     "transpose", "reshape", "softmax",    "relu",       "tanh",
    "exp",       "layer_norm", "batch_norm", "mean",   "sum",        "squared_difference",
    "embedding_lookup", "positional_add", "pairwise_sq_dist",
};

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail)
{
    throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

bool is_suffix(const Shape& whole, const Shape& tail)
{
    if (tail.size() > whole.size())
        return false;
    return std::equal(tail.rbegin(), tail.rend(), whole.rbegin());
}

Graph& graph_of(std::span<const Var> inputs)
{
    return inputs.front().graph();
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

} // namespace

std::string_view op_name(OpKind kind) noexcept
{
    return op_names[static_cast<std::size_t>(kind)];
}

OpKind parse_op_kind(std::string_view name)
{
    for (std::size_t i = 0; i < op_names.size(); ++i)
        if (name == op_names[i])
            return static_cast<OpKind>(i);
    throw ValidationError("unknown op kind '" + std::string(name) + "'");
}

const Tensor& Var::value() const { return graph_->value(*this); }
bool Var::tracked() const { return graph_->tracked(*this); }

const Tensor& Gradients::operator[](Var parameter) const { return at(parameter.id()); }

const Tensor& Gradients::at(std::size_t node_id) const
{
    auto it = std::lower_bound(ids_.begin(), ids_.end(), node_id);
    if (it == ids_.end() || *it != node_id)
        throw ValidationError("gradients: node " + std::to_string(node_id) + " is not a parameter");
    return grads_[static_cast<std::size_t>(it - ids_.begin())];
}

std::size_t Gradients::count() const noexcept { return ids_.size(); }

Var Graph::constant(Tensor value)
{
    nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), false, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Tensor value)
{
    nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), true, true, {}});
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(OpKind kind, std::span<const Var> inputs, Tensor value, BackwardFn backward)
{
    Node node{kind, {}, std::move(value), false, false, {}};
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        node.inputs.push_back(in.id());
        node.tracked = node.tracked || nodes_[in.id()].tracked;
    }
    if (node.tracked)
        node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(Var loss) const
{
    const Node& root = nodes_[loss.id()];
    if (root.value.size() != 1)
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         shape_string(root.value.shape()));

    std::vector<Tensor> grads(loss.id() + 1);
    if (root.tracked)
        grads[loss.id()] = Tensor(root.value.shape(), 1.0);

    std::vector<Tensor*> ptrs;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.backward || grads[i].size() == 0)
            continue;
        ptrs.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const std::size_t in = node.inputs[k];
            if (!nodes_[in].tracked)
                continue;
            if (grads[in].size() == 0)
                grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
            ptrs[k] = &grads[in];
        }
        node.backward(node.value, grads[i], ptrs);
        if (!node.parameter)
            grads[i] = Tensor();
    }

    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].parameter)
            continue;
        out.ids_.push_back(i);
        if (i < grads.size() && grads[i].size() != 0)
            out.grads_.push_back(std::move(grads[i]));
        else
            out.grads_.emplace_back(nodes_[i].value.shape(), 0.0);
    }
    return out;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool batched_rhs = bv.rank() == 3;
    if ((av.rank() != 2 && av.rank() != 3) || (bv.rank() != 2 && bv.rank() != 3) ||
        (batched_rhs && av.rank() != 3))
        shape_fail(OpKind::matmul, "unsupported ranks " + shape_string(av.shape()) + " x " +
                                       shape_string(bv.shape()));
    const std::size_t k = av.shape().back();
    const std::size_t m = av.shape()[av.rank() - 2];
    const std::size_t kb = bv.shape()[bv.rank() - 2];
    const std::size_t n = bv.shape().back();
    if (k != kb)
        shape_fail(OpKind::matmul, "inner dims differ: " + shape_string(av.shape()) + " x " +
                                       shape_string(bv.shape()));
    const std::size_t batch = av.rank() == 3 ? av.shape()[0] : 1;
    if (batched_rhs && bv.shape()[0] != batch)
        shape_fail(OpKind::matmul, "batch dims differ: " + shape_string(av.shape()) + " x " +
                                       shape_string(bv.shape()));

    Shape out_shape = av.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
    Tensor out(out_shape);
    if (!batched_rhs) {
        ConstMapMat A(av.data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(k));
        ConstMapMat B(bv.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        MapMat C(out.data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(n));
        C.noalias() = A * B;
    } else {
        for (std::size_t s = 0; s < batch; ++s) {
            ConstMapMat A(av.data() + s * m * k, m, k);
            ConstMapMat B(bv.data() + s * k * n, k, n);
            MapMat C(out.data() + s * m * n, m, n);
            C.noalias() = A * B;
        }
    }

    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    std::array inputs{a, b};
    return a.graph().record(
        OpKind::matmul, inputs, std::move(out),
        [ap, bp, batch, m, k, n, batched_rhs](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
            if (!batched_rhs) {
                const auto rows = static_cast<Eigen::Index>(batch * m);
                ConstMapMat G(up.data(), rows, n);
                if (g[0]) {
                    ConstMapMat B(bp->data(), k, n);
                    MapMat(g[0]->data(), rows, k).noalias() += G * B.transpose();
                }
                if (g[1]) {
                    ConstMapMat A(ap->data(), rows, k);
                    MapMat(g[1]->data(), k, n).noalias() += A.transpose() * G;
                }
                return;
            }
            for (std::size_t s = 0; s < batch; ++s) {
                ConstMapMat G(up.data() + s * m * n, m, n);
                if (g[0]) {
                    ConstMapMat B(bp->data() + s * k * n, k, n);
                    MapMat(g[0]->data() + s * m * k, m, k).noalias() += G * B.transpose();
                }
                if (g[1]) {
                    ConstMapMat A(ap->data() + s * m * k, m, k);
                    MapMat(g[1]->data() + s * k * n, k, n).noalias() += A.transpose() * G;
                }
            }
        });
}

namespace {

void check_broadcast(OpKind kind, const Tensor& a, const Tensor& b)
{
    if (!is_suffix(a.shape(), b.shape()))
        shape_fail(kind, "cannot broadcast " + shape_string(b.shape()) + " onto " +
                             shape_string(a.shape()));
}

} // namespace

Var add(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check_broadcast(OpKind::add, av, bv);
    const std::size_t inner = bv.size();
    const std::size_t outer = av.size() / inner;
    Tensor out = av;
    for (std::size_t o = 0; o < outer; ++o) {
        double* dst = out.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i)
            dst[i] += bv[i];
    }
    std::array inputs{a, b};
    return a.graph().record(OpKind::add, inputs, std::move(out),
                            [inner, outer](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                if (g[0])
                                    for (std::size_t i = 0; i < up.size(); ++i)
                                        (*g[0])[i] += up[i];
                                if (g[1])
                                    for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t i = 0; i < inner; ++i)
                                            (*g[1])[i] += up[o * inner + i];
                            });
}

Var mul(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check_broadcast(OpKind::mul, av, bv);
    const std::size_t inner = bv.size();
    const std::size_t outer = av.size() / inner;
    Tensor out = av;
    for (std::size_t o = 0; o < outer; ++o) {
        double* dst = out.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i)
            dst[i] *= bv[i];
    }
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    std::array inputs{a, b};
    return a.graph().record(
        OpKind::mul, inputs, std::move(out),
        [ap, bp, inner, outer](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t idx = o * inner + i;
                    if (g[0])
                        (*g[0])[idx] += up[idx] * (*bp)[i];
                    if (g[1])
                        (*g[1])[i] += up[idx] * (*ap)[idx];
                }
        });
}

Var scale(Var a, double factor)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v *= factor;
    std::array inputs{a};
    return a.graph().record(OpKind::scale, inputs, std::move(out),
                            [factor](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t i = 0; i < up.size(); ++i)
                                    (*g[0])[i] += factor * up[i];
                            });
}

Var concat(std::span<const Var> parts, std::size_t axis)
{
    if (parts.empty())
        shape_fail(OpKind::concat, "no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size())
        shape_fail(OpKind::concat, "axis " + std::to_string(axis) + " out of range for " +
                                       shape_string(first));
    std::vector<std::size_t> lens;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d)
            ok = d == axis || s[d] == first[d];
        if (!ok)
            shape_fail(OpKind::concat, "mismatched part " + shape_string(s) + " vs " +
                                           shape_string(first));
        lens.push_back(s[axis]);
        total += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d)
        outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d)
        inner *= first[d];
    Shape out_shape = first;
    out_shape[axis] = total;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& pv = parts[p].value();
        const std::size_t chunk = lens[p] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * total * inner + offset);
        offset += chunk;
    }
    return graph_of(parts).record(
        OpKind::concat, parts, std::move(out),
        [lens, outer, inner, total](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < lens.size(); ++p) {
                const std::size_t chunk = lens[p] * inner;
                if (g[p])
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* src = up.data() + o * total * inner + off;
                        double* dst = g[p]->data() + o * chunk;
                        for (std::size_t i = 0; i < chunk; ++i)
                            dst[i] += src[i];
                    }
                off += chunk;
            }
        });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length)
{
    const Shape& s = a.shape();
    if (axis >= s.size() || length == 0 || start + length > s[axis])
        shape_fail(OpKind::slice, "range [" + std::to_string(start) + "," +
                                      std::to_string(start + length) + ") on axis " +
                                      std::to_string(axis) + " of " + shape_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d)
        outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d)
        inner *= s[d];
    const std::size_t full = s[axis];
    Shape out_shape = s;
    out_shape[axis] = length;
    Tensor out(out_shape);
    const Tensor& av = a.value();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(av.data() + (o * full + start) * inner, length * inner,
                    out.data() + o * length * inner);
    std::array inputs{a};
    return a.graph().record(
        OpKind::slice, inputs, std::move(out),
        [outer, inner, full, start, length](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
            for (std::size_t o = 0; o < outer; ++o) {
                const double* src = up.data() + o * length * inner;
                double* dst = g[0]->data() + (o * full + start) * inner;
                for (std::size_t i = 0; i < length * inner; ++i)
                    dst[i] += src[i];
            }
        });
}

Var transpose(Var a)
{
    const Tensor& av = a.value();
    if (av.rank() != 2 && av.rank() != 3)
        shape_fail(OpKind::transpose, "needs rank 2 or 3, got " + shape_string(av.shape()));
    const std::size_t batch = av.rank() == 3 ? av.shape()[0] : 1;
    const std::size_t r = av.shape()[av.rank() - 2];
    const std::size_t c = av.shape().back();
    Shape out_shape = av.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out(out_shape);
    for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                out[s * r * c + j * r + i] = av[s * r * c + i * c + j];
    std::array inputs{a};
    return a.graph().record(OpKind::transpose, inputs, std::move(out),
                            [batch, r, c](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t s = 0; s < batch; ++s)
                                    for (std::size_t i = 0; i < r; ++i)
                                        for (std::size_t j = 0; j < c; ++j)
                                            (*g[0])[s * r * c + i * c + j] += up[s * r * c + j * r + i];
                            });
}

Var reshape(Var a, Shape shape)
{
    if (shape_size(shape) != a.value().size())
        shape_fail(OpKind::reshape, shape_string(a.shape()) + " -> " + shape_string(shape));
    Tensor out = a.value().reshaped(std::move(shape));
    std::array inputs{a};
    return a.graph().record(OpKind::reshape, inputs, std::move(out),
                            [](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t i = 0; i < up.size(); ++i)
                                    (*g[0])[i] += up[i];
                            });
}

Var softmax(Var a)
{
    const Tensor& av = a.value();
    if (av.rank() == 0)
        shape_fail(OpKind::softmax, "needs rank >= 1");
    const std::size_t n = av.shape().back();
    const std::size_t rows = av.size() / n;
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * n;
        double* y = out.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - mx);
            total += y[i];
        }
        for (std::size_t i = 0; i < n; ++i)
            y[i] /= total;
    }
    std::array inputs{a};
    return a.graph().record(OpKind::softmax, inputs, std::move(out),
                            [n, rows](const Tensor& y, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t r = 0; r < rows; ++r) {
                                    const double* yr = y.data() + r * n;
                                    const double* ur = up.data() + r * n;
                                    double dot = 0.0;
                                    for (std::size_t i = 0; i < n; ++i)
                                        dot += yr[i] * ur[i];
                                    double* gr = g[0]->data() + r * n;
                                    for (std::size_t i = 0; i < n; ++i)
                                        gr[i] += yr[i] * (ur[i] - dot);
                                }
                            });
}

Var relu(Var a)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v = v > 0.0 ? v : 0.0;
    std::array inputs{a};
    return a.graph().record(OpKind::relu, inputs, std::move(out),
                            [](const Tensor& y, const Tensor& up, std::span<Tensor* const> g) {
                                // subgradient 0 at the kink
                                for (std::size_t i = 0; i < up.size(); ++i)
                                    if (y[i] > 0.0)
                                        (*g[0])[i] += up[i];
                            });
}

Var tanh(Var a)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v = std::tanh(v);
    std::array inputs{a};
    return a.graph().record(OpKind::tanh, inputs, std::move(out),
                            [](const Tensor& y, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t i = 0; i < up.size(); ++i)
                                    (*g[0])[i] += up[i] * (1.0 - y[i] * y[i]);
                            });
}

Var exp(Var a)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v = std::exp(v);
    std::array inputs{a};
    return a.graph().record(OpKind::exp, inputs, std::move(out),
                            [](const Tensor& y, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t i = 0; i < up.size(); ++i)
                                    (*g[0])[i] += up[i] * y[i];
                            });
}

namespace {

// Shared backward of the two normalisations: given xhat, inv_std per group
// and the upstream gradient already multiplied by gamma, accumulate dx.
// Groups are either rows (layer norm) or columns (batch norm).
struct NormSaved {
    Tensor xhat;
    std::vector<double> inv_std;
};

} // namespace

Var layer_norm(Var x, Var gamma, Var beta, double epsilon)
{
    const Tensor& xv = x.value();
    const std::size_t d = last_dim(xv);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        shape_fail(OpKind::layer_norm, "gamma/beta must be [" + std::to_string(d) + "], got " +
                                           shape_string(gamma.shape()) + " and " +
                                           shape_string(beta.shape()));
    const std::size_t rows = xv.size() / d;
    auto saved = std::make_shared<NormSaved>();
    saved->xhat = Tensor(xv.shape());
    saved->inv_std.resize(rows);
    Tensor out(xv.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + epsilon);
        saved->inv_std[r] = inv;
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (xr[i] - mu) * inv;
            saved->xhat[r * d + i] = h;
            out[r * d + i] = gv[i] * h + bv[i];
        }
    }
    const Tensor* gp = &gv;
    std::array inputs{x, gamma, beta};
    return x.graph().record(
        OpKind::layer_norm, inputs, std::move(out),
        [saved, gp, rows, d](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
            const double nd = static_cast<double>(d);
            std::vector<double> dh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* h = saved->xhat.data() + r * d;
                const double* u = up.data() + r * d;
                if (g[1])
                    for (std::size_t i = 0; i < d; ++i)
                        (*g[1])[i] += u[i] * h[i];
                if (g[2])
                    for (std::size_t i = 0; i < d; ++i)
                        (*g[2])[i] += u[i];
                if (!g[0])
                    continue;
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    dh[i] = u[i] * (*gp)[i];
                    s1 += dh[i];
                    s2 += dh[i] * h[i];
                }
                const double inv = saved->inv_std[r];
                double* gx = g[0]->data() + r * d;
                for (std::size_t i = 0; i < d; ++i)
                    gx[i] += inv / nd * (nd * dh[i] - s1 - h[i] * s2);
            }
        });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormStats& stats, const BatchNormOptions& options)
{
    const Tensor& xv = x.value();
    const std::size_t d = last_dim(xv);
    const std::size_t rows = xv.size() / d;
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d} ||
        stats.running_mean.shape() != Shape{d} || stats.running_var.shape() != Shape{d})
        shape_fail(OpKind::batch_norm, "gamma/beta/stats must be [" + std::to_string(d) + "]");
    if (options.training && rows < 2)
        shape_fail(OpKind::batch_norm, "training mode needs at least 2 rows");

    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(xv.shape());
    auto saved = std::make_shared<NormSaved>();
    saved->xhat = Tensor(xv.shape());
    saved->inv_std.resize(d);
    std::vector<double> mu(d, 0.0), var(d, 0.0);
    if (options.training) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i)
                mu[i] += xv[r * d + i];
        for (double& m : mu)
            m /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) {
                const double c = xv[r * d + i] - mu[i];
                var[i] += c * c;
            }
        for (double& v : var)
            v /= static_cast<double>(rows);
        if (options.update_running) {
            const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
            for (std::size_t i = 0; i < d; ++i) {
                stats.running_mean[i] =
                    (1.0 - options.momentum) * stats.running_mean[i] + options.momentum * mu[i];
                stats.running_var[i] =
                    (1.0 - options.momentum) * stats.running_var[i] + options.momentum * var[i] * unbias;
            }
        }
    } else {
        for (std::size_t i = 0; i < d; ++i) {
            mu[i] = stats.running_mean[i];
            var[i] = stats.running_var[i];
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        saved->inv_std[i] = 1.0 / std::sqrt(var[i] + options.epsilon);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (xv[r * d + i] - mu[i]) * saved->inv_std[i];
            saved->xhat[r * d + i] = h;
            out[r * d + i] = gv[i] * h + bv[i];
        }

    const Tensor* gp = &gv;
    const bool training = options.training;
    std::array inputs{x, gamma, beta};
    return x.graph().record(
        OpKind::batch_norm, inputs, std::move(out),
        [saved, gp, rows, d, training](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
            std::vector<double> s1(d, 0.0), s2(d, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < d; ++i) {
                    const double u = up[r * d + i];
                    const double h = saved->xhat[r * d + i];
                    if (g[1])
                        (*g[1])[i] += u * h;
                    if (g[2])
                        (*g[2])[i] += u;
                    s1[i] += u * (*gp)[i];
                    s2[i] += u * (*gp)[i] * h;
                }
            if (!g[0])
                return;
            const double n = static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < d; ++i) {
                    const double dh = up[r * d + i] * (*gp)[i];
                    const double inv = saved->inv_std[i];
                    if (training)
                        (*g[0])[r * d + i] +=
                            inv / n * (n * dh - s1[i] - saved->xhat[r * d + i] * s2[i]);
                    else
                        (*g[0])[r * d + i] += inv * dh;
                }
        });
}

Var sum(Var a)
{
    const Tensor& av = a.value();
    const double total = std::accumulate(av.values().begin(), av.values().end(), 0.0);
    std::array inputs{a};
    return a.graph().record(OpKind::sum, inputs, Tensor(Shape{1}, std::vector<double>{total}),
                            [](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                const double u = up[0];
                                for (double& v : g[0]->values())
                                    v += u;
                            });
}

Var mean(Var a)
{
    const Tensor& av = a.value();
    const double n = static_cast<double>(av.size());
    const double total = std::accumulate(av.values().begin(), av.values().end(), 0.0);
    std::array inputs{a};
    return a.graph().record(OpKind::mean, inputs, Tensor(Shape{1}, std::vector<double>{total / n}),
                            [n](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                const double u = up[0] / n;
                                for (double& v : g[0]->values())
                                    v += u;
                            });
}

Var squared_difference(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape())
        shape_fail(OpKind::squared_difference,
                   shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double diff = av[i] - bv[i];
        out[i] = diff * diff;
    }
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    std::array inputs{a, b};
    return a.graph().record(OpKind::squared_difference, inputs, std::move(out),
                            [ap, bp](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t i = 0; i < up.size(); ++i) {
                                    const double d2 = 2.0 * up[i] * ((*ap)[i] - (*bp)[i]);
                                    if (g[0])
                                        (*g[0])[i] += d2;
                                    if (g[1])
                                        (*g[1])[i] -= d2;
                                }
                            });
}

Var embedding_lookup(Var table, std::span<const std::size_t> indices)
{
    const Tensor& tv = table.value();
    if (tv.rank() != 2)
        shape_fail(OpKind::embedding_lookup, "table must be rank 2, got " + shape_string(tv.shape()));
    if (indices.empty())
        shape_fail(OpKind::embedding_lookup, "no indices");
    const std::size_t vocab = tv.dim(0);
    const std::size_t d = tv.dim(1);
    Tensor out(Shape{indices.size(), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= vocab)
            shape_fail(OpKind::embedding_lookup, "index " + std::to_string(indices[r]) +
                                                     " out of range for table of " +
                                                     std::to_string(vocab) + " rows");
        std::copy_n(tv.data() + indices[r] * d, d, out.data() + r * d);
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    std::array inputs{table};
    return table.graph().record(OpKind::embedding_lookup, inputs, std::move(out),
                                [idx = std::move(idx), d](const Tensor&, const Tensor& up,
                                                          std::span<Tensor* const> g) {
                                    for (std::size_t r = 0; r < idx.size(); ++r)
                                        for (std::size_t i = 0; i < d; ++i)
                                            (*g[0])[idx[r] * d + i] += up[r * d + i];
                                });
}

Tensor sinusoidal_encoding(std::size_t positions, std::size_t dims)
{
    Tensor pe(Shape{positions, dims});
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t i = 0; i < dims; ++i) {
            const double pair = static_cast<double>(i - i % 2);
            const double angle =
                static_cast<double>(p) / std::pow(10000.0, pair / static_cast<double>(dims));
            pe.at(p, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

Var positional_add(Var x)
{
    const Tensor& xv = x.value();
    if (xv.rank() < 2)
        shape_fail(OpKind::positional_add, "needs rank >= 2, got " + shape_string(xv.shape()));
    const std::size_t positions = xv.shape()[xv.rank() - 2];
    const std::size_t dims = xv.shape().back();
    const Tensor pe = sinusoidal_encoding(positions, dims);
    Tensor out = xv;
    const std::size_t block = positions * dims;
    for (std::size_t o = 0; o < xv.size() / block; ++o)
        for (std::size_t i = 0; i < block; ++i)
            out[o * block + i] += pe[i];
    std::array inputs{x};
    return x.graph().record(OpKind::positional_add, inputs, std::move(out),
                            [](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
                                for (std::size_t i = 0; i < up.size(); ++i)
                                    (*g[0])[i] += up[i];
                            });
}

Var pairwise_sq_dist(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1))
        shape_fail(OpKind::pairwise_sq_dist,
                   shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
    const std::size_t n = av.dim(0), m = bv.dim(0), d = av.dim(1);
    Tensor out(Shape{n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = av[i * d + k] - bv[j * d + k];
                acc += diff * diff;
            }
            out[i * m + j] = acc;
        }
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    std::array inputs{a, b};
    return a.graph().record(
        OpKind::pairwise_sq_dist, inputs, std::move(out),
        [ap, bp, n, m, d](const Tensor&, const Tensor& up, std::span<Tensor* const> g) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double w = 2.0 * up[i * m + j];
                    if (w == 0.0)
                        continue;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = w * ((*ap)[i * d + k] - (*bp)[j * d + k]);
                        if (g[0])
                            (*g[0])[i * d + k] += diff;
                        if (g[1])
                            (*g[1])[j * d + k] -= diff;
                    }
                }
        });
}

Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs)
{
    auto need = [&](std::size_t count) {
        if (inputs.size() != count)
            shape_fail(kind, "expects " + std::to_string(count) + " inputs, got " +
                                 std::to_string(inputs.size()));
    };
    switch (kind) {
    case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::scale: need(1); return scale(inputs[0], attrs.factor);
    case OpKind::concat: return concat(inputs, attrs.axis);
    case OpKind::slice: need(1); return slice(inputs[0], attrs.axis, attrs.start, attrs.length);
    case OpKind::transpose: need(1); return transpose(inputs[0]);
    case OpKind::reshape: need(1); return reshape(inputs[0], attrs.shape);
    case OpKind::softmax: need(1); return softmax(inputs[0]);
    case OpKind::relu: need(1); return relu(inputs[0]);
    case OpKind::tanh: need(1); return tanh(inputs[0]);
    case OpKind::exp: need(1); return exp(inputs[0]);
    case OpKind::layer_norm: need(3); return layer_norm(inputs[0], inputs[1], inputs[2], attrs.epsilon);
    case OpKind::batch_norm:
        need(3);
        if (!attrs.stats)
            shape_fail(kind, "missing running statistics");
        return batch_norm(inputs[0], inputs[1], inputs[2], *attrs.stats, attrs.batch_norm);
    case OpKind::mean: need(1); return mean(inputs[0]);
    case OpKind::sum: need(1); return sum(inputs[0]);
    case OpKind::squared_difference: need(2); return squared_difference(inputs[0], inputs[1]);
    case OpKind::embedding_lookup: need(1); return embedding_lookup(inputs[0], attrs.indices);
    case OpKind::positional_add: need(1); return positional_add(inputs[0]);
    case OpKind::pairwise_sq_dist: need(2); return pairwise_sq_dist(inputs[0], inputs[1]);
    case OpKind::leaf: break;
    }
    throw ValidationError("forward_op: unsupported op kind '" + std::string(op_name(kind)) + "'");
}

} // namespace driftgate::ad
