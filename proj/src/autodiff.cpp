#include "cla/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace cla::ad {

namespace {

void check_same_graph(Var a, Var b, const char* op) {
    if (!a.valid() || !b.valid() || a.g != b.g)
        throw DimensionError(std::string(op) + ": operands belong to different graphs");
}

bool any_parent_requires(const Graph& g, const std::vector<int>& parents) {
    for (int p : parents)
        if (g.node(p).requires_grad) return true;
    return false;
}

}  // namespace

Var Graph::leaf(Tensor& t) {
    Node n;
    n.value = t;  // copy of shape+data; grads flow back through `bound`
    n.value.grad.clear();
    n.requires_grad = t.requires_grad;
    n.bound = &t;
    return Var{this, append(std::move(n))};
}

Var Graph::constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    n.value.grad.clear();
    n.requires_grad = false;
    return Var{this, append(std::move(n))};
}

int Graph::append(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Graph::value(Var v) const { return node(v.id).value; }

double Graph::scalar_value(Var v) const {
    const Tensor& t = value(v);
    if (!t.is_scalar()) throw DimensionError("scalar_value: tensor is not scalar " + t.shape_str());
    return t.data[0];
}

const std::vector<double>& Graph::node_grad(Var v) const { return node(v.id).grad; }

void Graph::accumulate(int parent, const std::vector<double>& src) {
    Node& p = nodes_[static_cast<std::size_t>(parent)];
    if (!p.requires_grad) return;
    if (p.grad.size() != p.value.data.size()) p.grad.assign(p.value.data.size(), 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) p.grad[i] += src[i];
}

double* Graph::grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() != n.value.data.size()) n.grad.assign(n.value.data.size(), 0.0);
    return n.grad.data();
}

void Graph::backward(Var loss) {
    if (!loss.valid() || loss.g != this) throw DimensionError("backward: loss is not a node of this graph");
    Node& ln = node(loss.id);
    if (!ln.value.is_scalar()) throw DimensionError("backward: loss must be scalar, got " + ln.value.shape_str());
    if (backward_hook) backward_hook();
    if (!ln.requires_grad) return;  // fully constant loss: nothing to do
    ln.grad.assign(1, 1.0);
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.pull) n.pull(*this, i);
        if (n.bound != nullptr && n.bound->requires_grad) {
            n.bound->ensure_grad();
            for (std::size_t k = 0; k < n.grad.size(); ++k) n.bound->grad[k] += n.grad[k];
        }
    }
}

// ---- op helpers -----------------------------------------------------------

namespace {

Var make_op(Graph& g, Tensor value, std::vector<int> parents,
            std::function<void(Graph&, int)> pull) {
    Graph::Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.requires_grad = any_parent_requires(g, n.parents);
    if (n.requires_grad) n.pull = std::move(pull);
    return Var{&g, g.append(std::move(n))};
}

}  // namespace

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
    check_same_graph(a, b, "matmul");
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (A.rank() != 2 || B.rank() != 2)
        throw DimensionError("matmul: expected rank-2 operands, got " + A.shape_str() + " and " + B.shape_str());
    if (A.cols() != B.rows())
        throw DimensionError("matmul: inner dimensions disagree, " + A.shape_str() + " x " + B.shape_str());
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &A.data[i * k];
        double* crow = &C.data[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = &B.data[p * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    const int pa = a.id, pb = b.id;
    return make_op(g, std::move(C), {pa, pb}, [pa, pb, m, k, n](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        const Tensor& Av = gr.node(pa).value;
        const Tensor& Bv = gr.node(pb).value;
        if (gr.node(pa).requires_grad) {
            // dA = dC * B^T
            double* da = gr.grad_buffer(pa);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = &gout[i * n];
                    const double* brow = &Bv.data[p * n];
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    da[i * k + p] += acc;
                }
        }
        if (gr.node(pb).requires_grad) {
            // dB = A^T * dC
            double* db = gr.grad_buffer(pb);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t i = 0; i < m; ++i) {
                    const double av = Av.data[i * k + p];
                    const double* grow = &gout[i * n];
                    double* brow = &db[p * n];
                    for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

Var transpose(Var a) {
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    if (A.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + A.shape_str());
    const std::size_t m = A.rows(), n = A.cols();
    Tensor T = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) T.data[j * m + i] = A.data[i * n + j];
    const int pa = a.id;
    return make_op(g, std::move(T), {pa}, [pa, m, n](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        double* da = gr.grad_buffer(pa);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) da[i * n + j] += gout[j * m + i];
    });
}

// ---- elementwise ------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& A, const Tensor& B, const char* op) {
    if (!A.same_shape(B))
        throw DimensionError(std::string(op) + ": shape mismatch " + A.shape_str() + " vs " + B.shape_str());
}

}  // namespace

Var add(Var a, Var b) {
    check_same_graph(a, b, "add");
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    check_same_shape(A, B, "add");
    Tensor C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    const int pa = a.id, pb = b.id;
    return make_op(g, std::move(C), {pa, pb}, [pa, pb](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        gr.accumulate(pa, gout);
        gr.accumulate(pb, gout);
    });
}

Var sub(Var a, Var b) {
    check_same_graph(a, b, "sub");
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    check_same_shape(A, B, "sub");
    Tensor C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] -= B.data[i];
    const int pa = a.id, pb = b.id;
    return make_op(g, std::move(C), {pa, pb}, [pa, pb](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        gr.accumulate(pa, gout);
        if (gr.node(pb).requires_grad) {
            double* db = gr.grad_buffer(pb);
            for (std::size_t i = 0; i < gout.size(); ++i) db[i] -= gout[i];
        }
    });
}

Var mul(Var a, Var b) {
    check_same_graph(a, b, "mul");
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    check_same_shape(A, B, "mul");
    Tensor C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    const int pa = a.id, pb = b.id;
    return make_op(g, std::move(C), {pa, pb}, [pa, pb](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        const Tensor& Av = gr.node(pa).value;
        const Tensor& Bv = gr.node(pb).value;
        if (gr.node(pa).requires_grad) {
            double* da = gr.grad_buffer(pa);
            for (std::size_t i = 0; i < gout.size(); ++i) da[i] += gout[i] * Bv.data[i];
        }
        if (gr.node(pb).requires_grad) {
            double* db = gr.grad_buffer(pb);
            for (std::size_t i = 0; i < gout.size(); ++i) db[i] += gout[i] * Av.data[i];
        }
    });
}

Var scale(Var a, double c) {
    Graph& g = *a.g;
    Tensor C = g.value(a);
    for (double& v : C.data) v *= c;
    const int pa = a.id;
    return make_op(g, std::move(C), {pa}, [pa, c](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        double* da = gr.grad_buffer(pa);
        for (std::size_t i = 0; i < gout.size(); ++i) da[i] += gout[i] * c;
    });
}

Var relu(Var a) {
    Graph& g = *a.g;
    Tensor C = g.value(a);
    for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    const int pa = a.id;
    return make_op(g, std::move(C), {pa}, [pa](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        const Tensor& Av = gr.node(pa).value;
        double* da = gr.grad_buffer(pa);
        for (std::size_t i = 0; i < gout.size(); ++i)
            if (Av.data[i] > 0.0) da[i] += gout[i];
    });
}

Var add_rowvec(Var m, Var v) {
    check_same_graph(m, v, "add_rowvec");
    Graph& g = *m.g;
    const Tensor& M = g.value(m);
    const Tensor& V = g.value(v);
    if (V.rank() != 1 || V.cols() != M.cols())
        throw DimensionError("add_rowvec: bias " + V.shape_str() + " does not match " + M.shape_str());
    Tensor C = M;
    const std::size_t r = M.rows(), c = M.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) C.data[i * c + j] += V.data[j];
    const int pm = m.id, pv = v.id;
    return make_op(g, std::move(C), {pm, pv}, [pm, pv, r, c](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        gr.accumulate(pm, gout);
        if (gr.node(pv).requires_grad) {
            double* dv = gr.grad_buffer(pv);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dv[j] += gout[i * c + j];
        }
    });
}

// ---- normalizations ---------------------------------------------------------

Var l2_normalize(Var a) {
    constexpr double kEps = 1e-12;
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    if (A.rank() > 2) throw DimensionError("l2_normalize: expected rank 1 or 2, got " + A.shape_str());
    const std::size_t r = A.rows(), c = A.cols();
    Tensor C = A;
    std::vector<double> norms(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += A.data[i * c + j] * A.data[i * c + j];
        const double n = std::sqrt(sq);
        norms[i] = n;
        if (n < kEps) g.diagnostics.zero_norm_rows++;
        const double inv = 1.0 / (n + kEps);
        for (std::size_t j = 0; j < c; ++j) C.data[i * c + j] *= inv;
    }
    const int pa = a.id;
    return make_op(g, std::move(C), {pa}, [pa, r, c, norms](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        const Tensor& Av = gr.node(pa).value;
        double* da = gr.grad_buffer(pa);
        for (std::size_t i = 0; i < r; ++i) {
            const double n = norms[i];
            const double s = n + kEps;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += gout[i * c + j] * Av.data[i * c + j];
            // d/dx_k [x/(||x||+eps)] = g_k/s - x_k <g,x> / (n s^2); the second
            // term vanishes with x, so it is dropped for numerically zero rows.
            const double coef = n < 1e-150 ? 0.0 : dot / (n * s * s);
            for (std::size_t j = 0; j < c; ++j)
                da[i * c + j] += gout[i * c + j] / s - Av.data[i * c + j] * coef;
        }
    });
}

Var batch_norm(Var x, Var gamma, Var beta, bool training,
               std::vector<double>& running_mean, std::vector<double>& running_var,
               double momentum, double eps) {
    check_same_graph(x, gamma, "batch_norm");
    check_same_graph(x, beta, "batch_norm");
    Graph& g = *x.g;
    const Tensor& X = g.value(x);
    const Tensor& G = g.value(gamma);
    const Tensor& B = g.value(beta);
    if (X.rank() != 2) throw DimensionError("batch_norm: expected rank-2 input, got " + X.shape_str());
    const std::size_t r = X.rows(), c = X.cols();
    if (G.count() != c || B.count() != c)
        throw DimensionError("batch_norm: gamma/beta width does not match input " + X.shape_str());
    if (running_mean.size() != c || running_var.size() != c)
        throw DimensionError("batch_norm: running stats width mismatch");

    std::vector<double> inv(c), xhat;
    Tensor Y = Tensor::zeros({r, c});
    if (training) {
        if (r < 2) throw DimensionError("batch_norm: train mode needs at least 2 rows (degenerate variance)");
        std::vector<double> mean(c, 0.0), var(c, 0.0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) mean[j] += X.data[i * c + j];
        for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = X.data[i * c + j] - mean[j];
                var[j] += d * d;
            }
        for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(r);
        xhat.resize(r * c);
        for (std::size_t j = 0; j < c; ++j) inv[j] = 1.0 / std::sqrt(var[j] + eps);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double h = (X.data[i * c + j] - mean[j]) * inv[j];
                xhat[i * c + j] = h;
                Y.data[i * c + j] = G.data[j] * h + B.data[j];
            }
        // running stats use the unbiased variance
        const double unbias = static_cast<double>(r) / static_cast<double>(r - 1);
        for (std::size_t j = 0; j < c; ++j) {
            running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
            running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j] * unbias;
        }
    } else {
        xhat.resize(r * c);
        for (std::size_t j = 0; j < c; ++j) inv[j] = 1.0 / std::sqrt(running_var[j] + eps);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double h = (X.data[i * c + j] - running_mean[j]) * inv[j];
                xhat[i * c + j] = h;
                Y.data[i * c + j] = G.data[j] * h + B.data[j];
            }
    }

    const int px = x.id, pg = gamma.id, pb = beta.id;
    return make_op(g, std::move(Y), {px, pg, pb},
                   [px, pg, pb, r, c, training, inv, xhat](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        const Tensor& Gv = gr.node(pg).value;
        if (gr.node(pb).requires_grad) {
            double* db = gr.grad_buffer(pb);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) db[j] += gout[i * c + j];
        }
        if (gr.node(pg).requires_grad) {
            double* dg = gr.grad_buffer(pg);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dg[j] += gout[i * c + j] * xhat[i * c + j];
        }
        if (!gr.node(px).requires_grad) return;
        double* dx = gr.grad_buffer(px);
        if (!training) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += gout[i * c + j] * Gv.data[j] * inv[j];
            return;
        }
        // dL/dx = gamma*inv * (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)),
        // column-wise, where dxhat = gout (gamma folded in below).
        std::vector<double> mg(c, 0.0), mgx(c, 0.0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double dh = gout[i * c + j] * Gv.data[j];
                mg[j] += dh;
                mgx[j] += dh * xhat[i * c + j];
            }
        for (std::size_t j = 0; j < c; ++j) {
            mg[j] /= static_cast<double>(r);
            mgx[j] /= static_cast<double>(r);
        }
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double dh = gout[i * c + j] * Gv.data[j];
                dx[i * c + j] += inv[j] * (dh - mg[j] - xhat[i * c + j] * mgx[j]);
            }
    });
}

// ---- reductions & structure --------------------------------------------------

Var sum_all(Var a) {
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    double s = 0.0;
    for (double v : A.data) s += v;
    const int pa = a.id;
    return make_op(g, Tensor::scalar(s), {pa}, [pa](Graph& gr, int self) {
        const double go = gr.node(self).grad[0];
        double* da = gr.grad_buffer(pa);
        const std::size_t n = gr.node(pa).value.data.size();
        for (std::size_t i = 0; i < n; ++i) da[i] += go;
    });
}

Var detach(Var a) {
    Graph& g = *a.g;
    return g.constant(g.value(a));
}

Var concat_rows(Var a, Var b) {
    check_same_graph(a, b, "concat_rows");
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (A.cols() != B.cols())
        throw DimensionError("concat_rows: column mismatch " + A.shape_str() + " vs " + B.shape_str());
    const std::size_t ra = A.rows(), rb = B.rows(), c = A.cols();
    Tensor C = Tensor::zeros({ra + rb, c});
    std::copy(A.data.begin(), A.data.end(), C.data.begin());
    std::copy(B.data.begin(), B.data.end(), C.data.begin() + static_cast<std::ptrdiff_t>(ra * c));
    const int pa = a.id, pb = b.id;
    return make_op(g, std::move(C), {pa, pb}, [pa, pb, ra, rb, c](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        if (gr.node(pa).requires_grad) {
            double* da = gr.grad_buffer(pa);
            for (std::size_t i = 0; i < ra * c; ++i) da[i] += gout[i];
        }
        if (gr.node(pb).requires_grad) {
            double* db = gr.grad_buffer(pb);
            for (std::size_t i = 0; i < rb * c; ++i) db[i] += gout[ra * c + i];
        }
    });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
    Graph& g = *a.g;
    const Tensor& A = g.value(a);
    if (A.rank() != 2) throw DimensionError("slice_rows: expected rank-2, got " + A.shape_str());
    if (start + count > A.rows()) throw DimensionError("slice_rows: range out of bounds");
    const std::size_t c = A.cols();
    Tensor C = Tensor::zeros({count, c});
    std::copy(A.data.begin() + static_cast<std::ptrdiff_t>(start * c),
              A.data.begin() + static_cast<std::ptrdiff_t>((start + count) * c), C.data.begin());
    const int pa = a.id;
    return make_op(g, std::move(C), {pa}, [pa, start, count, c](Graph& gr, int self) {
        const std::vector<double>& gout = gr.node(self).grad;
        double* da = gr.grad_buffer(pa);
        for (std::size_t i = 0; i < count * c; ++i) da[start * c + i] += gout[i];
    });
}

Var softmax_cross_entropy_rows(Var logits, std::vector<int> targets) {
    Graph& g = *logits.g;
    const Tensor& L = g.value(logits);
    if (L.rank() != 2) throw DimensionError("softmax_cross_entropy_rows: expected rank-2 logits");
    const std::size_t r = L.rows(), c = L.cols();
    if (targets.size() != r) throw DimensionError("softmax_cross_entropy_rows: one target per row required");
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= c)
            throw DimensionError("softmax_cross_entropy_rows: target out of range");

    std::vector<double> probs(r * c);
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = &L.data[i * c];
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(row[j] - mx);
            z += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
        loss += std::log(z) + mx - row[static_cast<std::size_t>(targets[i])];
    }
    loss /= static_cast<double>(r);

    const int pl = logits.id;
    return make_op(g, Tensor::scalar(loss), {pl},
                   [pl, r, c, probs = std::move(probs), targets = std::move(targets)](Graph& gr, int self) {
        const double go = gr.node(self).grad[0] / static_cast<double>(r);
        double* dl = gr.grad_buffer(pl);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) dl[i * c + j] += go * probs[i * c + j];
            dl[i * c + static_cast<std::size_t>(targets[i])] -= go;
        }
    });
}

// ---- finite differences -------------------------------------------------------

double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps) {
    Tensor probe = x;
    probe.requires_grad = true;
    probe.grad.clear();
    {
        Graph g;
        Var vx = g.leaf(probe);
        Var loss = f(g, vx);
        if (!g.value(loss).is_scalar()) throw DimensionError("finite_diff_check: f must be scalar-valued");
        g.backward(loss);
    }
    if (probe.grad.size() != probe.data.size()) probe.grad.assign(probe.data.size(), 0.0);

    double max_rel = 0.0;
    Tensor shifted = x;
    shifted.requires_grad = false;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double orig = shifted.data[i];
        shifted.data[i] = orig + eps;
        double fplus;
        {
            Graph g;
            fplus = g.scalar_value(f(g, g.leaf(shifted)));
        }
        shifted.data[i] = orig - eps;
        double fminus;
        {
            Graph g;
            fminus = g.scalar_value(f(g, g.leaf(shifted)));
        }
        shifted.data[i] = orig;
        const double fd = (fplus - fminus) / (2.0 * eps);
        const double ad = probe.grad[i];
        const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
        max_rel = std::max(max_rel, std::abs(fd - ad) / denom);
    }
    return max_rel;
}

}  // namespace cla::ad
