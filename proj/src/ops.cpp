#include <amlora/ops.hpp>

#include <amlora/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace amlora::ops {

namespace {

Graph &graph_of(Var a)
{
    if (!a.graph)
        throw UsageError("variable is not bound to a graph");
    return *a.graph;
}

Graph &graph_of(Var a, Var b)
{
    if (a.graph != b.graph || !a.graph)
        throw UsageError("operands live on different graphs");
    return *a.graph;
}

void require_matrix(const Tensor &t, const char *op)
{
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor &a, const Tensor &b, const char *op)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

// C += A * B with A [m x k], B [k x n].
void gemm_nn(const double *a, const double *b, double *c, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        double *crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0)
                continue;
            const double *brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T with A [m x k], B [n x k].
void gemm_nt(const double *a, const double *b, double *c, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double *arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double *brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C += A^T * B with A [k x m], B [k x n].
void gemm_tn(const double *a, const double *b, double *c, std::size_t k, std::size_t m, std::size_t n)
{
    for (std::size_t p = 0; p < k; ++p) {
        const double *arow = a + p * m;
        const double *brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0)
                continue;
            double *crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
    }
}

void accumulate(Graph &g, NodeId target, const Tensor &delta)
{
    if (!g.requires_grad(target))
        return;
    auto dst = g.grad_slot(target).data();
    auto src = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] += src[i];
}

} // namespace

Var matmul(Var a, Var b)
{
    Graph &g = graph_of(a, b);
    const Tensor &av = a.value();
    const Tensor &bv = b.value();
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    if (bv.shape()[0] != k)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()));
    Tensor out({m, n});
    gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return g.record("matmul", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id, m, k, n](Graph &g, NodeId self) {
        const Tensor &dy = g.grad(self);
        if (g.requires_grad(ai))
            gemm_nt(dy.data().data(), g.value(bi).data().data(), g.grad_slot(ai).data().data(), m, n, k);
        if (g.requires_grad(bi))
            gemm_tn(g.value(ai).data().data(), dy.data().data(), g.grad_slot(bi).data().data(), m, k, n);
    });
}

Var linear(Var x, Var w)
{
    Graph &g = graph_of(x, w);
    const Tensor &xv = x.value();
    const Tensor &wv = w.value();
    require_matrix(xv, "linear");
    require_matrix(wv, "linear");
    const std::size_t m = xv.shape()[0], k = xv.shape()[1], n = wv.shape()[0];
    if (wv.shape()[1] != k)
        throw DimensionError("linear: input " + shape_string(xv.shape()) + " incompatible with weight " +
                             shape_string(wv.shape()));
    Tensor out({m, n});
    gemm_nt(xv.data().data(), wv.data().data(), out.data().data(), m, k, n);
    return g.record("linear", {x.id, w.id}, std::move(out), [xi = x.id, wi = w.id, m, k, n](Graph &g, NodeId self) {
        const Tensor &dy = g.grad(self);
        if (g.requires_grad(xi))
            gemm_nn(dy.data().data(), g.value(wi).data().data(), g.grad_slot(xi).data().data(), m, n, k);
        if (g.requires_grad(wi))
            gemm_tn(dy.data().data(), g.value(xi).data().data(), g.grad_slot(wi).data().data(), m, n, k);
    });
}

Var add(Var a, Var b)
{
    Graph &g = graph_of(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    auto bd = b.value().data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i)
        od[i] += bd[i];
    return g.record("add", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id](Graph &g, NodeId self) {
        accumulate(g, ai, g.grad(self));
        accumulate(g, bi, g.grad(self));
    });
}

Var sub(Var a, Var b)
{
    Graph &g = graph_of(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    auto bd = b.value().data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i)
        od[i] -= bd[i];
    return g.record("sub", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id](Graph &g, NodeId self) {
        accumulate(g, ai, g.grad(self));
        if (g.requires_grad(bi)) {
            auto dst = g.grad_slot(bi).data();
            auto src = g.grad(self).data();
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] -= src[i];
        }
    });
}

Var mul(Var a, Var b)
{
    Graph &g = graph_of(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    auto bd = b.value().data();
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i)
        od[i] *= bd[i];
    return g.record("mul", {a.id, b.id}, std::move(out), [ai = a.id, bi = b.id](Graph &g, NodeId self) {
        auto dy = g.grad(self).data();
        if (g.requires_grad(ai)) {
            auto dst = g.grad_slot(ai).data();
            auto other = g.value(bi).data();
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] += dy[i] * other[i];
        }
        if (g.requires_grad(bi)) {
            auto dst = g.grad_slot(bi).data();
            auto other = g.value(ai).data();
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] += dy[i] * other[i];
        }
    });
}

Var scale(Var a, double factor)
{
    Graph &g = graph_of(a);
    Tensor out = a.value();
    for (auto &v : out.data())
        v *= factor;
    return g.record("scale", {a.id}, std::move(out), [ai = a.id, factor](Graph &g, NodeId self) {
        auto dst = g.grad_slot(ai).data();
        auto dy = g.grad(self).data();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] += factor * dy[i];
    });
}

Var add_bias(Var x, Var bias)
{
    Graph &g = graph_of(x, bias);
    const Tensor &xv = x.value();
    const std::size_t n = xv.cols();
    if (bias.value().size() != n)
        throw DimensionError("add_bias: bias " + shape_string(bias.value().shape()) + " does not match rows of " +
                             shape_string(xv.shape()));
    Tensor out = xv;
    const std::size_t m = xv.rows();
    auto bd = bias.value().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] += bd[j];
    return g.record("add_bias", {x.id, bias.id}, std::move(out), [xi = x.id, bi = bias.id, m, n](Graph &g, NodeId self) {
        accumulate(g, xi, g.grad(self));
        if (g.requires_grad(bi)) {
            auto dst = g.grad_slot(bi).data();
            auto dy = g.grad(self).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    dst[j] += dy[i * n + j];
        }
    });
}

Var row_scale(Var x, Var s)
{
    Graph &g = graph_of(x, s);
    const Tensor &xv = x.value();
    const Tensor &sv = s.value();
    require_matrix(xv, "row_scale");
    const std::size_t m = xv.shape()[0], n = xv.shape()[1];
    if (sv.size() != m)
        throw DimensionError("row_scale: scales " + shape_string(sv.shape()) + " do not match rows of " +
                             shape_string(xv.shape()));
    Tensor out = xv;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] *= sv[i];
    return g.record("row_scale", {x.id, s.id}, std::move(out), [xi = x.id, si = s.id, m, n](Graph &g, NodeId self) {
        auto dy = g.grad(self).data();
        if (g.requires_grad(xi)) {
            auto dst = g.grad_slot(xi).data();
            auto sd = g.value(si).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    dst[i * n + j] += dy[i * n + j] * sd[i];
        }
        if (g.requires_grad(si)) {
            auto dst = g.grad_slot(si).data();
            auto xd = g.value(xi).data();
            for (std::size_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    acc += dy[i * n + j] * xd[i * n + j];
                dst[i] += acc;
            }
        }
    });
}

Var select_column(Var gv, std::size_t j)
{
    Graph &g = graph_of(gv);
    const Tensor &v = gv.value();
    require_matrix(v, "select_column");
    const std::size_t m = v.shape()[0], k = v.shape()[1];
    if (j >= k)
        throw DimensionError("select_column: column " + std::to_string(j) + " outside " + shape_string(v.shape()));
    Tensor out({m, 1});
    for (std::size_t i = 0; i < m; ++i)
        out[i] = v[i * k + j];
    return g.record("select_column", {gv.id}, std::move(out), [gi = gv.id, j, m, k](Graph &g, NodeId self) {
        auto dst = g.grad_slot(gi).data();
        auto dy = g.grad(self).data();
        for (std::size_t i = 0; i < m; ++i)
            dst[i * k + j] += dy[i];
    });
}

Var concat_cols(std::span<const Var> blocks)
{
    if (blocks.empty())
        throw DimensionError("concat_cols: no blocks");
    Graph &g = graph_of(blocks.front());
    const std::size_t m = blocks.front().value().rows();
    std::vector<NodeId> ids;
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var &b : blocks) {
        graph_of(blocks.front(), b);
        const Tensor &v = b.value();
        require_matrix(v, "concat_cols");
        if (v.shape()[0] != m)
            throw DimensionError("concat_cols: row mismatch " + shape_string(blocks.front().value().shape()) +
                                 " vs " + shape_string(v.shape()));
        ids.push_back(b.id);
        widths.push_back(v.shape()[1]);
        total += v.shape()[1];
    }
    Tensor out({m, total});
    std::size_t offset = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const Tensor &v = blocks[b].value();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[b]; ++j)
                out[i * total + offset + j] = v[i * widths[b] + j];
        offset += widths[b];
    }
    return g.record("concat_cols", ids, std::move(out), [ids, widths, m, total](Graph &g, NodeId self) {
        auto dy = g.grad(self).data();
        std::size_t off = 0;
        for (std::size_t b = 0; b < ids.size(); ++b) {
            if (g.requires_grad(ids[b])) {
                auto dst = g.grad_slot(ids[b]).data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < widths[b]; ++j)
                        dst[i * widths[b] + j] += dy[i * total + off + j];
            }
            off += widths[b];
        }
    });
}

Var relu(Var x)
{
    Graph &g = graph_of(x);
    Tensor out = x.value();
    for (auto &v : out.data())
        v = v > 0.0 ? v : 0.0;
    return g.record("relu", {x.id}, std::move(out), [xi = x.id](Graph &g, NodeId self) {
        auto dst = g.grad_slot(xi).data();
        auto dy = g.grad(self).data();
        auto xd = g.value(xi).data();
        for (std::size_t i = 0; i < dst.size(); ++i)
            if (xd[i] > 0.0)
                dst[i] += dy[i];
    });
}

namespace {
void softmax_rows(const Tensor &in, Tensor &out)
{
    const std::size_t m = in.rows(), n = in.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double *row = in.data().data() + i * n;
        double *dst = out.data().data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = std::exp(row[j] - mx);
            total += dst[j];
        }
        for (std::size_t j = 0; j < n; ++j)
            dst[j] /= total;
    }
}
} // namespace

Var softmax(Var logits)
{
    Graph &g = graph_of(logits);
    const Tensor &lv = logits.value();
    if (lv.empty() || lv.cols() == 0)
        throw DimensionError("softmax: empty axis");
    Tensor out(lv.shape());
    softmax_rows(lv, out);
    const std::size_t m = lv.rows(), n = lv.cols();
    return g.record("softmax", {logits.id}, std::move(out), [li = logits.id, m, n](Graph &g, NodeId self) {
        auto y = g.value(self).data();
        auto dy = g.grad(self).data();
        auto dst = g.grad_slot(li).data();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += dy[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                dst[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
        }
    });
}

Var cross_entropy(Var logits, std::span<const std::uint32_t> labels)
{
    Graph &g = graph_of(logits);
    const Tensor &lv = logits.value();
    require_matrix(lv, "cross_entropy");
    const std::size_t b = lv.shape()[0], c = lv.shape()[1];
    if (labels.size() != b)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             shape_string(lv.shape()));
    for (std::size_t i = 0; i < b; ++i)
        if (labels[i] >= c)
            throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                                  std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    Tensor probs(lv.shape());
    softmax_rows(lv, probs);
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double *row = lv.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            total += std::exp(row[j] - mx);
        loss += (mx + std::log(total)) - row[labels[i]];
    }
    loss /= static_cast<double>(b);
    std::vector<std::uint32_t> owned(labels.begin(), labels.end());
    return g.record("cross_entropy", {logits.id}, Tensor::scalar(loss),
                    [li = logits.id, probs = std::move(probs), owned = std::move(owned), b, c](Graph &g, NodeId self) {
                        const double upstream = g.grad(self)[0] / static_cast<double>(b);
                        auto dst = g.grad_slot(li).data();
                        for (std::size_t i = 0; i < b; ++i)
                            for (std::size_t j = 0; j < c; ++j) {
                                const double target = j == owned[i] ? 1.0 : 0.0;
                                dst[i * c + j] += upstream * (probs[i * c + j] - target);
                            }
                    });
}

Var l1_norm(Var t)
{
    Graph &g = graph_of(t);
    double total = 0.0;
    for (double v : t.value().data())
        total += std::abs(v);
    return g.record("l1_norm", {t.id}, Tensor::scalar(total), [ti = t.id](Graph &g, NodeId self) {
        const double upstream = g.grad(self)[0];
        auto dst = g.grad_slot(ti).data();
        auto xd = g.value(ti).data();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] += upstream * (xd[i] > 0.0 ? 1.0 : (xd[i] < 0.0 ? -1.0 : 0.0));
    });
}

Var sum(Var t)
{
    Graph &g = graph_of(t);
    double total = 0.0;
    for (double v : t.value().data())
        total += v;
    return g.record("sum", {t.id}, Tensor::scalar(total), [ti = t.id](Graph &g, NodeId self) {
        const double upstream = g.grad(self)[0];
        for (auto &v : g.grad_slot(ti).data())
            v += upstream;
    });
}

Var layer_norm(Var x, double eps)
{
    Graph &g = graph_of(x);
    const Tensor &xv = x.value();
    const std::size_t m = xv.rows(), n = xv.cols();
    Tensor out(xv.shape());
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double *row = xv.data().data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = (row[j] - mean) * inv_std[i];
    }
    return g.record("layer_norm", {x.id}, std::move(out),
                    [xi = x.id, inv_std = std::move(inv_std), m, n](Graph &g, NodeId self) {
                        auto y = g.value(self).data();
                        auto dy = g.grad(self).data();
                        auto dst = g.grad_slot(xi).data();
                        const double inv_n = 1.0 / static_cast<double>(n);
                        for (std::size_t i = 0; i < m; ++i) {
                            double mean_dy = 0.0, mean_dyy = 0.0;
                            for (std::size_t j = 0; j < n; ++j) {
                                mean_dy += dy[i * n + j];
                                mean_dyy += dy[i * n + j] * y[i * n + j];
                            }
                            mean_dy *= inv_n;
                            mean_dyy *= inv_n;
                            for (std::size_t j = 0; j < n; ++j)
                                dst[i * n + j] += inv_std[i] * (dy[i * n + j] - mean_dy - y[i * n + j] * mean_dyy);
                        }
                    });
}

Var embedding(Var table, std::span<const std::uint32_t> ids)
{
    Graph &g = graph_of(table);
    const Tensor &tv = table.value();
    require_matrix(tv, "embedding");
    const std::size_t vocab = tv.shape()[0], d = tv.shape()[1];
    if (ids.empty())
        throw DimensionError("embedding: no ids");
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab)
            throw ValidationError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                                  " is outside the vocabulary of size " + std::to_string(vocab));
        std::copy_n(tv.data().data() + ids[i] * d, d, out.data().data() + i * d);
    }
    std::vector<std::uint32_t> owned(ids.begin(), ids.end());
    return g.record("embedding", {table.id}, std::move(out), [ti = table.id, owned = std::move(owned), d](Graph &g, NodeId self) {
        auto dst = g.grad_slot(ti).data();
        auto dy = g.grad(self).data();
        for (std::size_t i = 0; i < owned.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                dst[owned[i] * d + j] += dy[i * d + j];
    });
}

Var add_positional(Var x, Var pos, std::size_t seq_len)
{
    Graph &g = graph_of(x, pos);
    const Tensor &xv = x.value();
    const Tensor &pv = pos.value();
    require_matrix(xv, "add_positional");
    require_matrix(pv, "add_positional");
    const std::size_t rows = xv.shape()[0], d = xv.shape()[1];
    if (pv.shape()[1] != d || pv.shape()[0] < seq_len || seq_len == 0 || rows % seq_len != 0)
        throw DimensionError("add_positional: " + shape_string(xv.shape()) + " with positions " +
                             shape_string(pv.shape()) + " and seq_len " + std::to_string(seq_len));
    Tensor out = xv;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] += pv[(i % seq_len) * d + j];
    return g.record("add_positional", {x.id, pos.id}, std::move(out),
                    [xi = x.id, pi = pos.id, rows, d, seq_len](Graph &g, NodeId self) {
                        accumulate(g, xi, g.grad(self));
                        if (g.requires_grad(pi)) {
                            auto dst = g.grad_slot(pi).data();
                            auto dy = g.grad(self).data();
                            for (std::size_t i = 0; i < rows; ++i)
                                for (std::size_t j = 0; j < d; ++j)
                                    dst[(i % seq_len) * d + j] += dy[i * d + j];
                        }
                    });
}

Var mean_pool(Var x, std::size_t seq_len)
{
    Graph &g = graph_of(x);
    const Tensor &xv = x.value();
    require_matrix(xv, "mean_pool");
    const std::size_t rows = xv.shape()[0], d = xv.shape()[1];
    if (seq_len == 0 || rows % seq_len != 0)
        throw DimensionError("mean_pool: " + shape_string(xv.shape()) + " is not a whole number of length-" +
                             std::to_string(seq_len) + " sequences");
    const std::size_t b = rows / seq_len;
    const double inv = 1.0 / static_cast<double>(seq_len);
    Tensor out({b, d});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[(i / seq_len) * d + j] += xv[i * d + j] * inv;
    return g.record("mean_pool", {x.id}, std::move(out), [xi = x.id, rows, d, seq_len, inv](Graph &g, NodeId self) {
        auto dst = g.grad_slot(xi).data();
        auto dy = g.grad(self).data();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j)
                dst[i * d + j] += dy[(i / seq_len) * d + j] * inv;
    });
}

Var attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t num_heads)
{
    Graph &g = graph_of(q, k);
    graph_of(q, v);
    const Tensor &qv = q.value();
    const Tensor &kv = k.value();
    const Tensor &vv = v.value();
    require_matrix(qv, "attention");
    require_same_shape(qv, kv, "attention");
    require_same_shape(qv, vv, "attention");
    const std::size_t rows = qv.shape()[0], d = qv.shape()[1];
    if (seq_len == 0 || rows % seq_len != 0 || num_heads == 0 || d % num_heads != 0)
        throw DimensionError("attention: " + shape_string(qv.shape()) + " cannot be split into length-" +
                             std::to_string(seq_len) + " sequences over " + std::to_string(num_heads) + " heads");
    const std::size_t batch = rows / seq_len, dh = d / num_heads, L = seq_len;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    // probs[b][h] is an L x L row-stochastic matrix.
    std::vector<double> probs(batch * num_heads * L * L);
    Tensor out({rows, d});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < num_heads; ++h) {
            double *p = probs.data() + (b * num_heads + h) * L * L;
            for (std::size_t i = 0; i < L; ++i) {
                const double *qi = qv.data().data() + (b * L + i) * d + h * dh;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < L; ++j) {
                    const double *kj = kv.data().data() + (b * L + j) * d + h * dh;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c)
                        s += qi[c] * kj[c];
                    p[i * L + j] = s * inv_sqrt;
                    mx = std::max(mx, p[i * L + j]);
                }
                double total = 0.0;
                for (std::size_t j = 0; j < L; ++j) {
                    p[i * L + j] = std::exp(p[i * L + j] - mx);
                    total += p[i * L + j];
                }
                double *oi = out.data().data() + (b * L + i) * d + h * dh;
                for (std::size_t j = 0; j < L; ++j) {
                    p[i * L + j] /= total;
                    const double *vj = vv.data().data() + (b * L + j) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c)
                        oi[c] += p[i * L + j] * vj[c];
                }
            }
        }
    return g.record(
        "attention", {q.id, k.id, v.id}, std::move(out),
        [qi_ = q.id, ki_ = k.id, vi_ = v.id, probs = std::move(probs), batch, num_heads, L, d, dh, inv_sqrt](Graph &g,
                                                                                                          NodeId self) {
            auto dy = g.grad(self).data();
            auto qd = g.value(qi_).data();
            auto kd = g.value(ki_).data();
            auto vd = g.value(vi_).data();
            const bool need_q = g.requires_grad(qi_), need_k = g.requires_grad(ki_), need_v = g.requires_grad(vi_);
            double *dq = need_q ? g.grad_slot(qi_).data().data() : nullptr;
            double *dk = need_k ? g.grad_slot(ki_).data().data() : nullptr;
            double *dv = need_v ? g.grad_slot(vi_).data().data() : nullptr;
            std::vector<double> dp(L * L), ds(L * L);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t h = 0; h < num_heads; ++h) {
                    const double *p = probs.data() + (b * num_heads + h) * L * L;
                    for (std::size_t i = 0; i < L; ++i)
                        for (std::size_t j = 0; j < L; ++j) {
                            const double *doi = dy.data() + (b * L + i) * d + h * dh;
                            const double *vj = vd.data() + (b * L + j) * d + h * dh;
                            double s = 0.0;
                            for (std::size_t c = 0; c < dh; ++c)
                                s += doi[c] * vj[c];
                            dp[i * L + j] = s;
                            if (dv) {
                                double *dvj = dv + (b * L + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c)
                                    dvj[c] += p[i * L + j] * doi[c];
                            }
                        }
                    for (std::size_t i = 0; i < L; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < L; ++j)
                            dot += dp[i * L + j] * p[i * L + j];
                        for (std::size_t j = 0; j < L; ++j)
                            ds[i * L + j] = p[i * L + j] * (dp[i * L + j] - dot) * inv_sqrt;
                    }
                    for (std::size_t i = 0; i < L; ++i)
                        for (std::size_t j = 0; j < L; ++j) {
                            const double w = ds[i * L + j];
                            if (w == 0.0)
                                continue;
                            if (dq) {
                                double *dqi = dq + (b * L + i) * d + h * dh;
                                const double *kj = kd.data() + (b * L + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c)
                                    dqi[c] += w * kj[c];
                            }
                            if (dk) {
                                double *dkj = dk + (b * L + j) * d + h * dh;
                                const double *qi = qd.data() + (b * L + i) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c)
                                    dkj[c] += w * qi[c];
                            }
                        }
                }
        });
}

Var dropout(Var x, double p, Rng &rng)
{
    Graph &g = graph_of(x);
    if (p < 0.0 || p >= 1.0)
        throw UsageError("dropout probability must lie in [0, 1), got " + std::to_string(p));
    if (p == 0.0)
        return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::bernoulli_distribution keep(1.0 - p);
    std::vector<double> mask(x.value().size());
    Tensor out = x.value();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = keep(rng) ? keep_scale : 0.0;
        out[i] *= mask[i];
    }
    return g.record("dropout", {x.id}, std::move(out), [xi = x.id, mask = std::move(mask)](Graph &g, NodeId self) {
        auto dst = g.grad_slot(xi).data();
        auto dy = g.grad(self).data();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] += dy[i] * mask[i];
    });
}

} // namespace amlora::ops
