#include "dualdetr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dualdetr {

namespace {

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.val) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

// Wires a new graph node. The backward closure only gets registered when a
// parent participates in differentiation; forward-only passes build no graph.
TensorRef node(std::vector<int> shape, std::vector<double> vals, std::vector<TensorRef> parents,
               std::function<void(Tensor&)> back, const char* op) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->val = std::move(vals);
    check_finite(*t, op);
    bool rg = false;
    for (const auto& p : parents) {
        if (p && p->requires_grad) rg = true;
    }
    if (rg) {
        t->requires_grad = true;
        t->ensure_grad();
        for (auto& p : parents) p->ensure_grad();
        t->parents = std::move(parents);
        t->backward_fn = std::move(back);
    }
    return t;
}

void require(bool cond, const char* msg) {
    if (!cond) throw NumericError(msg);
}

}  // namespace

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

TensorRef make_tensor(std::vector<int> shape, double fill, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->val.assign(static_cast<size_t>(shape_numel(shape)), fill);
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

TensorRef make_tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    require(shape_numel(shape) == static_cast<int64_t>(values.size()),
            "value count does not match shape");
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->val = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    check_finite(*t, "make_tensor");
    return t;
}

TensorRef make_scalar(double v) { return make_tensor({1}, std::vector<double>{v}); }

void backward(const TensorRef& root) {
    require(root->size() == 1, "backward root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    struct Frame {
        Tensor* t;
        size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.t->parents.size()) {
            Tensor* p = f.t->parents[f.next++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.t);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------- elementwise

namespace {

TensorRef binary_elementwise(const TensorRef& a, const TensorRef& b, const char* op,
                             const std::function<double(double, double)>& f,
                             const std::function<void(double, double, double, double&, double&)>& df) {
    if (a->size() != b->size())
        throw NumericError(std::string(op) + ": operand sizes " + std::to_string(a->size()) +
                           " and " + std::to_string(b->size()) + " differ");
    std::vector<double> out(a->val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(a->val[i], b->val[i]);
    return node(
        a->shape, std::move(out), {a, b},
        [df](Tensor& self) {
            Tensor& a = *self.parents[0];
            Tensor& b = *self.parents[1];
            for (size_t i = 0; i < self.val.size(); ++i) {
                double da = 0, db = 0;
                df(a.val[i], b.val[i], self.grad[i], da, db);
                a.grad[i] += da;
                b.grad[i] += db;
            }
        },
        op);
}

TensorRef unary_elementwise(const TensorRef& a, const char* op,
                            const std::function<double(double)>& f,
                            const std::function<double(double, double)>& dfa) {
    std::vector<double> out(a->val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(a->val[i]);
    return node(
        a->shape, std::move(out), {a},
        [dfa](Tensor& self) {
            Tensor& a = *self.parents[0];
            for (size_t i = 0; i < self.val.size(); ++i) a.grad[i] += dfa(a.val[i], self.grad[i]);
        },
        op);
}

}  // namespace

TensorRef add(const TensorRef& a, const TensorRef& b) {
    return binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

TensorRef sub(const TensorRef& a, const TensorRef& b) {
    return binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

TensorRef mul(const TensorRef& a, const TensorRef& b) {
    return binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

TensorRef div(const TensorRef& a, const TensorRef& b) {
    return binary_elementwise(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

TensorRef minimum(const TensorRef& a, const TensorRef& b) {
    return binary_elementwise(
        a, b, "minimum", [](double x, double y) { return x < y ? x : y; },
        [](double x, double y, double g, double& da, double& db) {
            if (x <= y)
                da = g;
            else
                db = g;
        });
}

TensorRef maximum(const TensorRef& a, const TensorRef& b) {
    return binary_elementwise(
        a, b, "maximum", [](double x, double y) { return x > y ? x : y; },
        [](double x, double y, double g, double& da, double& db) {
            if (x >= y)
                da = g;
            else
                db = g;
        });
}

TensorRef scale(const TensorRef& a, double c) {
    return unary_elementwise(
        a, "scale", [c](double x) { return c * x; }, [c](double, double g) { return c * g; });
}

TensorRef add_scalar(const TensorRef& a, double c) {
    return unary_elementwise(
        a, "add_scalar", [c](double x) { return x + c; }, [](double, double g) { return g; });
}

TensorRef neg(const TensorRef& a) { return scale(a, -1.0); }

TensorRef relu(const TensorRef& a) {
    return unary_elementwise(
        a, "relu", [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double g) { return x > 0 ? g : 0.0; });
}

TensorRef absval(const TensorRef& a) {
    return unary_elementwise(
        a, "absval", [](double x) { return std::fabs(x); },
        [](double x, double g) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
}

TensorRef clamp(const TensorRef& a, double lo, double hi) {
    return unary_elementwise(
        a, "clamp", [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](double x, double g) { return (x >= lo && x <= hi) ? g : 0.0; });
}

double sigmoid_scalar(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double inverse_sigmoid_scalar(double y) {
    double c = std::min(1.0 - kInvSigmoidEps, std::max(kInvSigmoidEps, y));
    return std::log(c / (1.0 - c));
}

TensorRef sigmoid(const TensorRef& a) {
    return unary_elementwise(
        a, "sigmoid", [](double x) { return sigmoid_scalar(x); },
        [](double x, double g) {
            double s = sigmoid_scalar(x);
            return g * s * (1.0 - s);
        });
}

TensorRef inverse_sigmoid(const TensorRef& a) {
    return unary_elementwise(
        a, "inverse_sigmoid", [](double y) { return inverse_sigmoid_scalar(y); },
        [](double y, double g) {
            if (y < kInvSigmoidEps || y > 1.0 - kInvSigmoidEps) return 0.0;  // clamped flat
            return g / (y * (1.0 - y));
        });
}

// ------------------------------------------------------------ row broadcasts

TensorRef add_rowvec(const TensorRef& m, const TensorRef& v) {
    int n = m->rows(), c = m->cols();
    require(v->size() == c, "add_rowvec width mismatch");
    std::vector<double> out(m->val);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += v->val[j];
    return node(
        m->shape, std::move(out), {m, v},
        [n, c](Tensor& self) {
            Tensor& m = *self.parents[0];
            Tensor& v = *self.parents[1];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    double g = self.grad[static_cast<size_t>(i) * c + j];
                    m.grad[static_cast<size_t>(i) * c + j] += g;
                    v.grad[j] += g;
                }
        },
        "add_rowvec");
}

TensorRef add_per_row(const TensorRef& m, const TensorRef& r) {
    int n = m->rows(), c = m->cols();
    require(r->size() == n, "add_per_row height mismatch");
    std::vector<double> out(m->val);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += r->val[i];
    return node(
        m->shape, std::move(out), {m, r},
        [n, c](Tensor& self) {
            Tensor& m = *self.parents[0];
            Tensor& r = *self.parents[1];
            for (int i = 0; i < n; ++i) {
                double acc = 0;
                for (int j = 0; j < c; ++j) {
                    double g = self.grad[static_cast<size_t>(i) * c + j];
                    m.grad[static_cast<size_t>(i) * c + j] += g;
                    acc += g;
                }
                r.grad[i] += acc;
            }
        },
        "add_per_row");
}

TensorRef mul_per_row(const TensorRef& m, const TensorRef& r) {
    int n = m->rows(), c = m->cols();
    require(r->size() == n, "mul_per_row height mismatch");
    std::vector<double> out(m->val);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] *= r->val[i];
    return node(
        m->shape, std::move(out), {m, r},
        [n, c](Tensor& self) {
            Tensor& m = *self.parents[0];
            Tensor& r = *self.parents[1];
            for (int i = 0; i < n; ++i) {
                double acc = 0;
                for (int j = 0; j < c; ++j) {
                    size_t ix = static_cast<size_t>(i) * c + j;
                    double g = self.grad[ix];
                    m.grad[ix] += g * r.val[i];
                    acc += g * m.val[ix];
                }
                r.grad[i] += acc;
            }
        },
        "mul_per_row");
}

TensorRef mul_headwise(const TensorRef& m, const TensorRef& s, int group_cols) {
    int n = m->rows(), c = m->cols();
    require(group_cols > 0 && c % group_cols == 0, "mul_headwise group width");
    int groups = c / group_cols;
    require(s->size() == groups, "mul_headwise scale count");
    std::vector<double> out(m->val);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] *= s->val[j / group_cols];
    return node(
        m->shape, std::move(out), {m, s},
        [n, c, group_cols](Tensor& self) {
            Tensor& m = *self.parents[0];
            Tensor& s = *self.parents[1];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    size_t ix = static_cast<size_t>(i) * c + j;
                    double g = self.grad[ix];
                    m.grad[ix] += g * s.val[j / group_cols];
                    s.grad[j / group_cols] += g * m.val[ix];
                }
        },
        "mul_headwise");
}

// ------------------------------------------------------------ linear algebra

TensorRef matmul(const TensorRef& a, const TensorRef& b) {
    int n = a->rows(), k = a->cols(), k2 = b->rows(), m = b->cols();
    require(k == k2, "matmul inner dimension mismatch");
    std::vector<double> out(static_cast<size_t>(n) * m, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* ar = &a->val[static_cast<size_t>(i) * k];
        double* cr = &out[static_cast<size_t>(i) * m];
        for (int p = 0; p < k; ++p) {
            double av = ar[p];
            const double* br = &b->val[static_cast<size_t>(p) * m];
            for (int j = 0; j < m; ++j) cr[j] += av * br[j];
        }
    }
    return node(
        {n, m}, std::move(out), {a, b},
        [n, k, m](Tensor& self) {
            Tensor& a = *self.parents[0];
            Tensor& b = *self.parents[1];
            for (int i = 0; i < n; ++i) {
                const double* gr = &self.grad[static_cast<size_t>(i) * m];
                const double* ar = &a.val[static_cast<size_t>(i) * k];
                double* gar = &a.grad[static_cast<size_t>(i) * k];
                for (int p = 0; p < k; ++p) {
                    const double* br = &b.val[static_cast<size_t>(p) * m];
                    double* gbr = &b.grad[static_cast<size_t>(p) * m];
                    double acc = 0;
                    double av = ar[p];
                    for (int j = 0; j < m; ++j) {
                        acc += gr[j] * br[j];
                        gbr[j] += av * gr[j];
                    }
                    gar[p] += acc;
                }
            }
        },
        "matmul");
}

TensorRef matmul_nt(const TensorRef& a, const TensorRef& b) {
    int n = a->rows(), k = a->cols(), m = b->rows(), k2 = b->cols();
    require(k == k2, "matmul_nt inner dimension mismatch");
    std::vector<double> out(static_cast<size_t>(n) * m, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* ar = &a->val[static_cast<size_t>(i) * k];
        double* cr = &out[static_cast<size_t>(i) * m];
        for (int j = 0; j < m; ++j) {
            const double* br = &b->val[static_cast<size_t>(j) * k];
            double acc = 0;
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] = acc;
        }
    }
    return node(
        {n, m}, std::move(out), {a, b},
        [n, k, m](Tensor& self) {
            Tensor& a = *self.parents[0];
            Tensor& b = *self.parents[1];
            for (int i = 0; i < n; ++i) {
                const double* gr = &self.grad[static_cast<size_t>(i) * m];
                const double* ar = &a.val[static_cast<size_t>(i) * k];
                double* gar = &a.grad[static_cast<size_t>(i) * k];
                for (int j = 0; j < m; ++j) {
                    const double* br = &b.val[static_cast<size_t>(j) * k];
                    double* gbr = &b.grad[static_cast<size_t>(j) * k];
                    double g = gr[j];
                    for (int p = 0; p < k; ++p) {
                        gar[p] += g * br[p];
                        gbr[p] += g * ar[p];
                    }
                }
            }
        },
        "matmul_nt");
}

// ------------------------------------------------------------------- shape

TensorRef reshape(const TensorRef& a, std::vector<int> shape) {
    require(shape_numel(shape) == a->size(), "reshape element count mismatch");
    return node(
        std::move(shape), a->val, {a},
        [](Tensor& self) {
            Tensor& a = *self.parents[0];
            for (size_t i = 0; i < self.val.size(); ++i) a.grad[i] += self.grad[i];
        },
        "reshape");
}

TensorRef slice_cols(const TensorRef& a, int c0, int c1) {
    int n = a->rows(), c = a->cols();
    require(0 <= c0 && c0 <= c1 && c1 <= c, "slice_cols out of range");
    int w = c1 - c0;
    std::vector<double> out(static_cast<size_t>(n) * w);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<size_t>(i) * w + j] = a->val[static_cast<size_t>(i) * c + c0 + j];
    return node(
        {n, w}, std::move(out), {a},
        [n, c, c0, w](Tensor& self) {
            Tensor& a = *self.parents[0];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < w; ++j)
                    a.grad[static_cast<size_t>(i) * c + c0 + j] +=
                        self.grad[static_cast<size_t>(i) * w + j];
        },
        "slice_cols");
}

TensorRef slice_rows(const TensorRef& a, int r0, int r1) {
    int n = a->rows(), c = a->cols();
    require(0 <= r0 && r0 <= r1 && r1 <= n, "slice_rows out of range");
    int h = r1 - r0;
    std::vector<double> out(a->val.begin() + static_cast<size_t>(r0) * c,
                            a->val.begin() + static_cast<size_t>(r1) * c);
    return node(
        {h, c}, std::move(out), {a},
        [r0, c, h](Tensor& self) {
            Tensor& a = *self.parents[0];
            for (size_t i = 0; i < static_cast<size_t>(h) * c; ++i)
                a.grad[static_cast<size_t>(r0) * c + i] += self.grad[i];
        },
        "slice_rows");
}

TensorRef concat_cols(const std::vector<TensorRef>& parts) {
    require(!parts.empty(), "concat_cols needs at least one part");
    int n = parts[0]->rows();
    int total = 0;
    for (const auto& p : parts) {
        require(p->rows() == n, "concat_cols row mismatch");
        total += p->cols();
    }
    std::vector<double> out(static_cast<size_t>(n) * total);
    int off = 0;
    for (const auto& p : parts) {
        int w = p->cols();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                out[static_cast<size_t>(i) * total + off + j] = p->val[static_cast<size_t>(i) * w + j];
        off += w;
    }
    return node(
        {n, total}, std::move(out), parts,
        [n, total](Tensor& self) {
            int off = 0;
            for (auto& pp : self.parents) {
                Tensor& p = *pp;
                int w = p.cols();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j)
                        p.grad[static_cast<size_t>(i) * w + j] +=
                            self.grad[static_cast<size_t>(i) * total + off + j];
                off += w;
            }
        },
        "concat_cols");
}

TensorRef concat_rows(const std::vector<TensorRef>& parts) {
    require(!parts.empty(), "concat_rows needs at least one part");
    int c = parts[0]->cols();
    int total = 0;
    for (const auto& p : parts) {
        require(p->cols() == c, "concat_rows column mismatch");
        total += p->rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total) * c);
    for (const auto& p : parts) out.insert(out.end(), p->val.begin(), p->val.end());
    return node(
        {total, c}, std::move(out), parts,
        [](Tensor& self) {
            size_t off = 0;
            for (auto& pp : self.parents) {
                Tensor& p = *pp;
                for (size_t i = 0; i < p.val.size(); ++i) p.grad[i] += self.grad[off + i];
                off += p.val.size();
            }
        },
        "concat_rows");
}

TensorRef gather_rows(const TensorRef& a, std::vector<int> idx) {
    int n = a->rows(), c = a->cols();
    int n_out = static_cast<int>(idx.size());
    for (int i : idx) require(0 <= i && i < n, "gather_rows index out of range");
    std::vector<double> out(idx.size() * static_cast<size_t>(c));
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(&a->val[static_cast<size_t>(idx[r]) * c], c, &out[r * c]);
    return node(
        {n_out, c}, std::move(out), {a},
        [idx = std::move(idx), c](Tensor& self) {
            Tensor& a = *self.parents[0];
            for (size_t r = 0; r < idx.size(); ++r)
                for (int j = 0; j < c; ++j)
                    a.grad[static_cast<size_t>(idx[r]) * c + j] += self.grad[r * c + j];
        },
        "gather_rows");
}

TensorRef detach(const TensorRef& a) {
    auto t = std::make_shared<Tensor>();
    t->shape = a->shape;
    t->val = a->val;
    return t;
}

// ------------------------------------------------- reductions / normalizations

TensorRef sum(const TensorRef& a) {
    double s = 0;
    for (double v : a->val) s += v;
    return node(
        {1}, {s}, {a},
        [](Tensor& self) {
            Tensor& a = *self.parents[0];
            double g = self.grad[0];
            for (size_t i = 0; i < a.val.size(); ++i) a.grad[i] += g;
        },
        "sum");
}

TensorRef softmax_rows(const TensorRef& a) {
    int n = a->rows(), c = a->cols();
    require(c >= 1, "softmax on empty row");
    std::vector<double> out(a->val.size());
    for (int i = 0; i < n; ++i) {
        const double* r = &a->val[static_cast<size_t>(i) * c];
        double m = r[0];
        for (int j = 1; j < c; ++j) m = std::max(m, r[j]);
        double z = 0;
        double* o = &out[static_cast<size_t>(i) * c];
        for (int j = 0; j < c; ++j) {
            o[j] = std::exp(r[j] - m);
            z += o[j];
        }
        for (int j = 0; j < c; ++j) o[j] /= z;
    }
    return node(
        a->shape, std::move(out), {a},
        [n, c](Tensor& self) {
            Tensor& a = *self.parents[0];
            for (int i = 0; i < n; ++i) {
                const double* y = &self.val[static_cast<size_t>(i) * c];
                const double* g = &self.grad[static_cast<size_t>(i) * c];
                double dot = 0;
                for (int j = 0; j < c; ++j) dot += y[j] * g[j];
                double* ga = &a.grad[static_cast<size_t>(i) * c];
                for (int j = 0; j < c; ++j) ga[j] += y[j] * (g[j] - dot);
            }
        },
        "softmax_rows");
}

TensorRef layer_norm_rows(const TensorRef& x, const TensorRef& gamma, const TensorRef& beta,
                          double eps) {
    int n = x->rows(), c = x->cols();
    require(gamma->size() == c && beta->size() == c, "layer_norm parameter width mismatch");
    std::vector<double> out(x->val.size());
    std::vector<double> inv_std(n), means(n);
    for (int i = 0; i < n; ++i) {
        const double* r = &x->val[static_cast<size_t>(i) * c];
        double mu = 0;
        for (int j = 0; j < c; ++j) mu += r[j];
        mu /= c;
        double var = 0;
        for (int j = 0; j < c; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= c;
        double is = 1.0 / std::sqrt(var + eps);
        means[i] = mu;
        inv_std[i] = is;
        double* o = &out[static_cast<size_t>(i) * c];
        for (int j = 0; j < c; ++j) o[j] = gamma->val[j] * (r[j] - mu) * is + beta->val[j];
    }
    return node(
        x->shape, std::move(out), {x, gamma, beta},
        [n, c, means = std::move(means), inv_std = std::move(inv_std)](Tensor& self) {
            Tensor& x = *self.parents[0];
            Tensor& gamma = *self.parents[1];
            Tensor& beta = *self.parents[2];
            for (int i = 0; i < n; ++i) {
                const double* r = &x.val[static_cast<size_t>(i) * c];
                const double* g = &self.grad[static_cast<size_t>(i) * c];
                double is = inv_std[i], mu = means[i];
                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int j = 0; j < c; ++j) {
                    double xhat = (r[j] - mu) * is;
                    double dxhat = g[j] * gamma.val[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    gamma.grad[j] += g[j] * xhat;
                    beta.grad[j] += g[j];
                }
                double* gx = &x.grad[static_cast<size_t>(i) * c];
                for (int j = 0; j < c; ++j) {
                    double xhat = (r[j] - mu) * is;
                    double dxhat = g[j] * gamma.val[j];
                    gx[j] += is * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
                }
            }
        },
        "layer_norm_rows");
}

// -------------------------------------------------------- temporal sampling

namespace {

struct SampleCoord {
    int i0;
    double w;        // fractional weight of row i0+1
    bool interior;   // position strictly inside (0, T-1): d(sample)/d(pos) defined
};

SampleCoord coord_for(double p, int t_rows) {
    double ci = p * (t_rows - 1);
    double clamped = std::min(static_cast<double>(t_rows - 1), std::max(0.0, ci));
    SampleCoord s;
    if (t_rows == 1) {
        s.i0 = 0;
        s.w = 0;
        s.interior = false;
        return s;
    }
    s.i0 = std::min(t_rows - 2, static_cast<int>(std::floor(clamped)));
    s.w = clamped - s.i0;
    s.interior = ci > 0.0 && ci < static_cast<double>(t_rows - 1);
    return s;
}

}  // namespace

TensorRef linear_sample(const TensorRef& x, const TensorRef& pos) {
    int t = x->rows(), c = x->cols();
    if (t == 0) throw NumericError("linear_sample on empty feature map");
    int p = static_cast<int>(pos->size());
    std::vector<double> out(static_cast<size_t>(p) * c);
    for (int r = 0; r < p; ++r) {
        SampleCoord s = coord_for(pos->val[r], t);
        const double* a = &x->val[static_cast<size_t>(s.i0) * c];
        const double* b = t == 1 ? a : &x->val[static_cast<size_t>(s.i0 + 1) * c];
        double* o = &out[static_cast<size_t>(r) * c];
        for (int j = 0; j < c; ++j) o[j] = (1.0 - s.w) * a[j] + s.w * b[j];
    }
    return node(
        {p, c}, std::move(out), {x, pos},
        [t, c, p](Tensor& self) {
            Tensor& x = *self.parents[0];
            Tensor& pos = *self.parents[1];
            for (int r = 0; r < p; ++r) {
                SampleCoord s = coord_for(pos.val[r], t);
                const double* g = &self.grad[static_cast<size_t>(r) * c];
                double* ga = &x.grad[static_cast<size_t>(s.i0) * c];
                double* gb = t == 1 ? ga : &x.grad[static_cast<size_t>(s.i0 + 1) * c];
                const double* a = &x.val[static_cast<size_t>(s.i0) * c];
                const double* b = t == 1 ? a : &x.val[static_cast<size_t>(s.i0 + 1) * c];
                double dpos = 0;
                for (int j = 0; j < c; ++j) {
                    ga[j] += (1.0 - s.w) * g[j];
                    if (t > 1) gb[j] += s.w * g[j];
                    dpos += g[j] * (b[j] - a[j]);
                }
                if (s.interior) pos.grad[r] += dpos * (t - 1);
            }
        },
        "linear_sample");
}

TensorRef linear_sample_grouped(const TensorRef& x, const TensorRef& pos, int heads, int points) {
    int t = x->rows(), c = x->cols();
    if (t == 0) throw NumericError("linear_sample on empty feature map");
    require(heads > 0 && c % heads == 0, "grouped sampling channel split");
    int cm = c / heads;
    int total = static_cast<int>(pos->size());
    require(total % (heads * points) == 0, "grouped sampling position count");
    std::vector<double> out(static_cast<size_t>(total) * cm);
    for (int r = 0; r < total; ++r) {
        int head = (r / points) % heads;
        SampleCoord s = coord_for(pos->val[r], t);
        const double* a = &x->val[static_cast<size_t>(s.i0) * c + static_cast<size_t>(head) * cm];
        const double* b = t == 1 ? a : a + c;
        double* o = &out[static_cast<size_t>(r) * cm];
        for (int j = 0; j < cm; ++j) o[j] = (1.0 - s.w) * a[j] + s.w * b[j];
    }
    return node(
        {total, cm}, std::move(out), {x, pos},
        [t, c, cm, heads, points, total](Tensor& self) {
            Tensor& x = *self.parents[0];
            Tensor& pos = *self.parents[1];
            for (int r = 0; r < total; ++r) {
                int head = (r / points) % heads;
                SampleCoord s = coord_for(pos.val[r], t);
                size_t base = static_cast<size_t>(s.i0) * c + static_cast<size_t>(head) * cm;
                const double* g = &self.grad[static_cast<size_t>(r) * cm];
                const double* a = &x.val[base];
                const double* b = t == 1 ? a : a + c;
                double* ga = &x.grad[base];
                double* gb = t == 1 ? ga : ga + c;
                double dpos = 0;
                for (int j = 0; j < cm; ++j) {
                    ga[j] += (1.0 - s.w) * g[j];
                    if (t > 1) gb[j] += s.w * g[j];
                    dpos += g[j] * (b[j] - a[j]);
                }
                if (s.interior) pos.grad[r] += dpos * (t - 1);
            }
        },
        "linear_sample_grouped");
}

TensorRef deform_combine(const TensorRef& samples, const TensorRef& weights, int heads,
                         int points) {
    int cm = samples->cols();
    int q = weights->rows();
    require(weights->cols() == heads * points, "deform_combine weight width");
    require(samples->rows() == q * heads * points, "deform_combine sample count");
    int c = heads * cm;
    std::vector<double> out(static_cast<size_t>(q) * c, 0.0);
    for (int qi = 0; qi < q; ++qi)
        for (int m = 0; m < heads; ++m)
            for (int k = 0; k < points; ++k) {
                double w = weights->val[static_cast<size_t>(qi) * heads * points + m * points + k];
                const double* s =
                    &samples->val[(static_cast<size_t>(qi) * heads + m) * points * cm +
                                  static_cast<size_t>(k) * cm];
                double* o = &out[static_cast<size_t>(qi) * c + static_cast<size_t>(m) * cm];
                for (int j = 0; j < cm; ++j) o[j] += w * s[j];
            }
    return node(
        {q, c}, std::move(out), {samples, weights},
        [q, heads, points, cm, c](Tensor& self) {
            Tensor& samples = *self.parents[0];
            Tensor& weights = *self.parents[1];
            for (int qi = 0; qi < q; ++qi)
                for (int m = 0; m < heads; ++m)
                    for (int k = 0; k < points; ++k) {
                        size_t wix = static_cast<size_t>(qi) * heads * points + m * points + k;
                        size_t six = (static_cast<size_t>(qi) * heads + m) * points * cm +
                                     static_cast<size_t>(k) * cm;
                        const double* g =
                            &self.grad[static_cast<size_t>(qi) * c + static_cast<size_t>(m) * cm];
                        double w = weights.val[wix];
                        double acc = 0;
                        for (int j = 0; j < cm; ++j) {
                            samples.grad[six + j] += w * g[j];
                            acc += g[j] * samples.val[six + j];
                        }
                        weights.grad[wix] += acc;
                    }
        },
        "deform_combine");
}

namespace {
constexpr double kP = 1e-12;  // probability floor inside the focal logs
}

TensorRef focal_loss_sum(const TensorRef& prob, const TensorRef& target, double alpha,
                         double gamma, double norm) {
    require(prob->size() == target->size(), "focal_loss size mismatch");
    require(norm > 0, "focal_loss norm must be positive");
    double loss = 0;
    for (size_t i = 0; i < prob->val.size(); ++i) {
        double p = std::min(1.0 - kP, std::max(kP, prob->val[i]));
        if (target->val[i] > 0.5)
            loss += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
        else
            loss += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
    }
    loss /= norm;
    return node(
        {1}, {loss}, {prob, target},
        [alpha, gamma, norm](Tensor& self) {
            Tensor& prob = *self.parents[0];
            Tensor& target = *self.parents[1];
            double g = self.grad[0] / norm;
            for (size_t i = 0; i < prob.val.size(); ++i) {
                double p = std::min(1.0 - kP, std::max(kP, prob.val[i]));
                double d;
                if (target.val[i] > 0.5)
                    d = alpha * gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) -
                        alpha * std::pow(1.0 - p, gamma) / p;
                else
                    d = -(1.0 - alpha) * gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) +
                        (1.0 - alpha) * std::pow(p, gamma) / (1.0 - p);
                prob.grad[i] += g * d;
            }
        },
        "focal_loss_sum");
}

TensorRef sinusoid_embed(const TensorRef& positions, int dims) {
    require(dims >= 1, "sinusoid_embed needs at least one channel");
    int p = static_cast<int>(positions->size());
    int pairs = dims / 2;
    std::vector<double> freq(static_cast<size_t>(pairs));
    for (int i = 0; i < pairs; ++i)
        freq[static_cast<size_t>(i)] = 2.0 * M_PI * std::pow(10000.0, -2.0 * i / dims);
    double tail_freq = 2.0 * M_PI / 10000.0;
    std::vector<double> out(static_cast<size_t>(p) * dims, 0.0);
    for (int r = 0; r < p; ++r) {
        double* o = &out[static_cast<size_t>(r) * dims];
        double v = positions->val[static_cast<size_t>(r)];
        for (int i = 0; i < pairs; ++i) {
            o[2 * i] = std::sin(v * freq[static_cast<size_t>(i)]);
            o[2 * i + 1] = std::cos(v * freq[static_cast<size_t>(i)]);
        }
        if (dims % 2 == 1) o[dims - 1] = std::sin(v * tail_freq);
    }
    return node(
        {p, dims}, std::move(out), {positions},
        [p, dims, pairs, freq = std::move(freq), tail_freq](Tensor& self) {
            Tensor& pos = *self.parents[0];
            for (int r = 0; r < p; ++r) {
                const double* g = &self.grad[static_cast<size_t>(r) * dims];
                double v = pos.val[static_cast<size_t>(r)];
                double acc = 0;
                for (int i = 0; i < pairs; ++i) {
                    double f = freq[static_cast<size_t>(i)];
                    acc += g[2 * i] * f * std::cos(v * f);
                    acc -= g[2 * i + 1] * f * std::sin(v * f);
                }
                if (dims % 2 == 1) acc += g[dims - 1] * tail_freq * std::cos(v * tail_freq);
                pos.grad[static_cast<size_t>(r)] += acc;
            }
        },
        "sinusoid_embed");
}

double grad_check(const std::function<TensorRef()>& forward, const TensorRef& x, double h) {
    x->requires_grad = true;
    x->ensure_grad();
    x->clear_grad();
    TensorRef y = forward();
    if (y->size() != 1) throw NumericError("grad_check target must be scalar");
    if (!std::isfinite(y->val[0])) throw NumericError("grad_check: non-finite function value");
    backward(y);
    std::vector<double> analytic = x->grad;

    double max_err = 0;
    for (size_t i = 0; i < x->val.size(); ++i) {
        double v = x->val[i];
        x->val[i] = v + h;
        double yp = forward()->item();
        x->val[i] = v - h;
        double ym = forward()->item();
        x->val[i] = v;
        if (!std::isfinite(yp) || !std::isfinite(ym))
            throw NumericError("grad_check: non-finite perturbed value");
        double numeric = (yp - ym) / (2.0 * h);
        double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
        max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

}  // namespace dualdetr
