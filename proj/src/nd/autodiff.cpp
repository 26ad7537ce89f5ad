#include "rastg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "rastg/kernels.hpp"

namespace rastg::nd {

namespace {

thread_local Tape* g_current_tape = nullptr;

bool finite_checks_enabled() {
    static const bool on = std::getenv("RASTG_CHECK_FINITE") != nullptr;
    return on;
}

const kernels::Ops& K() { return kernels::active(); }

bool want_grad(std::initializer_list<const Var*> parents) {
    if (g_current_tape == nullptr) return false;
    for (const Var* p : parents) {
        if (*p && (*p)->requires_grad) return true;
    }
    return false;
}

Var finish(Var out) {
    if (finite_checks_enabled() && !out->value.all_finite()) {
        throw NumericError("non-finite value produced by an operation");
    }
    if (out->requires_grad) g_current_tape->add(out);
    return out;
}

} // namespace

void Node::ensure_grad() {
    if (grad.empty() && value.size() > 0) grad = NdArray(value.shape());
    if (grad.empty() && value.size() == 0) grad = NdArray(value.shape());
}

void Node::accumulate(const NdArray& g) {
    require_same_shape(value, g, "gradient accumulate");
    ensure_grad();
    K().axpy(1.0, g.data(), grad.data(), static_cast<std::size_t>(g.size()));
}

Var constant(NdArray v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

Var leaf(NdArray v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

Var make_op(NdArray value, const std::vector<Var>& parents,
            std::function<void(Node*)> backward) {
    auto out = std::make_shared<Node>();
    out->value = std::move(value);
    bool rg = false;
    if (g_current_tape != nullptr) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) {
                rg = true;
                break;
            }
        }
    }
    if (rg) {
        out->requires_grad = true;
        Node* self = out.get();
        out->backward_fn = [self, fn = std::move(backward)]() { fn(self); };
    }
    return finish(out);
}

Tape::Tape() {
    prev_ = g_current_tape;
    g_current_tape = this;
}

Tape::~Tape() {
    g_current_tape = prev_;
}

bool Tape::recording() { return g_current_tape != nullptr; }
Tape* Tape::current() { return g_current_tape; }

void Tape::backward(const Var& loss) {
    if (!loss) throw ShapeError("backward of null value");
    if (loss->value.size() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss->value.shape()));
    }
    if (!loss->value.all_finite()) {
        throw NumericError("backward called on non-finite loss");
    }
    // fresh sweep: reset intermediate grads (parameter leaves are not
    // recorded here, so their grads keep accumulating across sweeps)
    for (auto& n : nodes_) {
        if (!n->grad.empty()) {
            std::fill(n->grad.data(), n->grad.data() + n->grad.size(), 0.0);
        }
    }
    loss->ensure_grad();
    loss->grad.data()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node* n = it->get();
        if (n->backward_fn && !n->grad.empty()) n->backward_fn();
    }
}

Parameter::Parameter(std::string name, NdArray init, bool trainable)
    : name_(std::move(name)), node_(leaf(std::move(init), trainable)) {
    node_->is_param = true;
}

const NdArray& Parameter::grad() const {
    const_cast<Node*>(node_.get())->ensure_grad();
    return node_->grad;
}

void Parameter::zero_grad() {
    if (!node_->grad.empty()) {
        std::fill(node_->grad.data(), node_->grad.data() + node_->grad.size(), 0.0);
    }
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    NdArray out(a->value.shape());
    K().add(a->value.data(), b->value.data(), out.data(), static_cast<std::size_t>(out.size()));
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&a, &b})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, a, b]() {
            if (a->requires_grad) a->accumulate(self->grad);
            if (b->requires_grad) b->accumulate(self->grad);
        };
    }
    return finish(node);
}

Var add_bias(const Var& x, const Var& b) {
    if (b->value.rank() != 1 || x->value.rank() < 1 ||
        x->value.dim(-1) != b->value.dim(0)) {
        throw ShapeError("add_bias: shapes " + shape_str(x->value.shape()) + " vs " +
                         shape_str(b->value.shape()));
    }
    const std::int64_t c = b->value.dim(0);
    const std::int64_t rows = x->value.size() / c;
    NdArray out(x->value.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        K().add(x->value.data() + r * c, b->value.data(), out.data() + r * c,
                static_cast<std::size_t>(c));
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x, &b})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, b, rows, c]() {
            if (x->requires_grad) x->accumulate(self->grad);
            if (b->requires_grad) {
                b->ensure_grad();
                double* bg = b->grad.data();
                const double* g = self->grad.data();
                for (std::int64_t r = 0; r < rows; ++r) {
                    K().axpy(1.0, g + r * c, bg, static_cast<std::size_t>(c));
                }
            }
        };
    }
    return finish(node);
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub");
    NdArray out(a->value.shape());
    K().sub(a->value.data(), b->value.data(), out.data(), static_cast<std::size_t>(out.size()));
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&a, &b})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, a, b]() {
            if (a->requires_grad) a->accumulate(self->grad);
            if (b->requires_grad) {
                b->ensure_grad();
                K().axpy(-1.0, self->grad.data(), b->grad.data(),
                         static_cast<std::size_t>(self->grad.size()));
            }
        };
    }
    return finish(node);
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    NdArray out(a->value.shape());
    K().mul(a->value.data(), b->value.data(), out.data(), static_cast<std::size_t>(out.size()));
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&a, &b})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, a, b]() {
            const auto n = static_cast<std::size_t>(self->grad.size());
            NdArray tmp(self->grad.shape());
            if (a->requires_grad) {
                K().mul(self->grad.data(), b->value.data(), tmp.data(), n);
                a->accumulate(tmp);
            }
            if (b->requires_grad) {
                K().mul(self->grad.data(), a->value.data(), tmp.data(), n);
                b->accumulate(tmp);
            }
        };
    }
    return finish(node);
}

Var scalar_mul(const Var& a, double s) {
    NdArray out = a->value.clone();
    K().scale(s, out.data(), static_cast<std::size_t>(out.size()));
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&a})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, a, s]() {
            a->ensure_grad();
            K().axpy(s, self->grad.data(), a->grad.data(),
                     static_cast<std::size_t>(self->grad.size()));
        };
    }
    return finish(node);
}

Var relu(const Var& x) {
    NdArray out(x->value.shape());
    K().relu(x->value.data(), out.data(), static_cast<std::size_t>(out.size()));
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x]() {
            x->ensure_grad();
            K().relu_backward(self->value.data(), self->grad.data(), x->grad.data(),
                              static_cast<std::size_t>(self->grad.size()));
        };
    }
    return finish(node);
}

Var add_relu(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add_relu");
    NdArray out(a->value.shape());
    const auto n = static_cast<std::size_t>(out.size());
    K().add(a->value.data(), b->value.data(), out.data(), n);
    K().relu(out.data(), out.data(), n);
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&a, &b})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, a, b]() {
            const auto m = static_cast<std::size_t>(self->grad.size());
            if (a->requires_grad) {
                a->ensure_grad();
                K().relu_backward(self->value.data(), self->grad.data(), a->grad.data(), m);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                K().relu_backward(self->value.data(), self->grad.data(), b->grad.data(), m);
            }
        };
    }
    return finish(node);
}

// ---- matmul family ---------------------------------------------------------

namespace {

struct MatShape {
    std::int64_t batch; // number of leading batch items (1 if none)
    std::int64_t m, k;
};

MatShape tail2(const NdArray& a) {
    if (a.rank() < 2) throw ShapeError("matmul operand must have rank >= 2, got " + shape_str(a.shape()));
    MatShape s;
    s.m = a.dim(-2);
    s.k = a.dim(-1);
    s.batch = a.size() / (s.m * s.k);
    return s;
}

Shape batched_out_shape(const NdArray& a, std::int64_t n) {
    Shape out(a.shape().begin(), a.shape().end() - 1);
    out.push_back(n);
    return out;
}

NdArray transpose2d(const NdArray& m) {
    const std::int64_t r = m.dim(0), c = m.dim(1);
    NdArray out(Shape{c, r});
    const double* src = m.data();
    double* dst = out.data();
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    return out;
}

void check_equal_batch(const NdArray& a, const NdArray& b, const char* what) {
    if (a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
        throw ShapeError(std::string(what) + ": incompatible batch dims " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

} // namespace

Var matmul(const Var& a, const Var& b) {
    const NdArray& av = a->value;
    const NdArray& bv = b->value;
    const MatShape as = tail2(av);

    if (bv.rank() == 2) {
        if (bv.dim(0) != as.k) {
            throw ShapeError("matmul: inner dimensions disagree " + shape_str(av.shape()) +
                             " x " + shape_str(bv.shape()));
        }
        const std::int64_t n = bv.dim(1);
        const std::int64_t rows = as.batch * as.m;
        NdArray out(batched_out_shape(av, n));
        K().gemm_nn(static_cast<std::size_t>(rows), static_cast<std::size_t>(n),
                    static_cast<std::size_t>(as.k), av.data(), static_cast<std::size_t>(as.k),
                    bv.data(), static_cast<std::size_t>(n), out.data(), static_cast<std::size_t>(n));
        auto node = std::make_shared<Node>();
        node->value = std::move(out);
        if (want_grad({&a, &b})) {
            node->requires_grad = true;
            Node* self = node.get();
            const std::int64_t kk = as.k;
            node->backward_fn = [self, a, b, rows, n, kk]() {
                const double* g = self->grad.data();
                if (a->requires_grad) {
                    a->ensure_grad();
                    NdArray bt = transpose2d(b->value); // (N,K)
                    K().gemm_nn(static_cast<std::size_t>(rows), static_cast<std::size_t>(kk),
                                static_cast<std::size_t>(n), g, static_cast<std::size_t>(n),
                                bt.data(), static_cast<std::size_t>(kk), a->grad.data(),
                                static_cast<std::size_t>(kk));
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    K().gemm_tn(static_cast<std::size_t>(kk), static_cast<std::size_t>(n),
                                static_cast<std::size_t>(rows), a->value.data(),
                                static_cast<std::size_t>(kk), g, static_cast<std::size_t>(n),
                                b->grad.data(), static_cast<std::size_t>(n));
                }
            };
        }
        return finish(node);
    }

    // equal-rank batched
    check_equal_batch(av, bv, "matmul");
    const MatShape bs = tail2(bv);
    if (bs.m != as.k) {
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
    }
    const std::int64_t n = bs.k;
    Shape out_shape(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(n);
    NdArray out(out_shape);
    for (std::int64_t i = 0; i < as.batch; ++i) {
        K().gemm_nn(static_cast<std::size_t>(as.m), static_cast<std::size_t>(n),
                    static_cast<std::size_t>(as.k), av.data() + i * as.m * as.k,
                    static_cast<std::size_t>(as.k), bv.data() + i * as.k * n,
                    static_cast<std::size_t>(n), out.data() + i * as.m * n,
                    static_cast<std::size_t>(n));
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&a, &b})) {
        node->requires_grad = true;
        Node* self = node.get();
        const MatShape cs = as;
        node->backward_fn = [self, a, b, cs, n]() {
            const double* g = self->grad.data();
            for (std::int64_t i = 0; i < cs.batch; ++i) {
                const double* gi = g + i * cs.m * n;
                if (a->requires_grad) {
                    a->ensure_grad();
                    // dA_i += dY_i * B_i^T
                    K().gemm_nt(static_cast<std::size_t>(cs.m), static_cast<std::size_t>(cs.k),
                                static_cast<std::size_t>(n), gi, static_cast<std::size_t>(n),
                                b->value.data() + i * cs.k * n, static_cast<std::size_t>(n),
                                a->grad.data() + i * cs.m * cs.k, static_cast<std::size_t>(cs.k));
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    // dB_i += A_i^T * dY_i
                    K().gemm_tn(static_cast<std::size_t>(cs.k), static_cast<std::size_t>(n),
                                static_cast<std::size_t>(cs.m),
                                a->value.data() + i * cs.m * cs.k, static_cast<std::size_t>(cs.k),
                                gi, static_cast<std::size_t>(n),
                                b->grad.data() + i * cs.k * n, static_cast<std::size_t>(n));
                }
            }
        };
    }
    return finish(node);
}

Var matmul_nt(const Var& a, const Var& b) {
    const NdArray& av = a->value;
    const NdArray& bv = b->value;
    const MatShape as = tail2(av);
    check_equal_batch(av, bv, "matmul_nt");
    const MatShape bs = tail2(bv);
    if (bs.k != as.k) {
        throw ShapeError("matmul_nt: inner dimensions disagree " + shape_str(av.shape()) +
                         " x " + shape_str(bv.shape()));
    }
    const std::int64_t n = bs.m;
    Shape out_shape(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(n);
    NdArray out(out_shape);
    for (std::int64_t i = 0; i < as.batch; ++i) {
        K().gemm_nt(static_cast<std::size_t>(as.m), static_cast<std::size_t>(n),
                    static_cast<std::size_t>(as.k), av.data() + i * as.m * as.k,
                    static_cast<std::size_t>(as.k), bv.data() + i * n * as.k,
                    static_cast<std::size_t>(as.k), out.data() + i * as.m * n,
                    static_cast<std::size_t>(n));
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&a, &b})) {
        node->requires_grad = true;
        Node* self = node.get();
        const MatShape cs = as;
        node->backward_fn = [self, a, b, cs, n]() {
            const double* g = self->grad.data();
            for (std::int64_t i = 0; i < cs.batch; ++i) {
                const double* gi = g + i * cs.m * n;
                if (a->requires_grad) {
                    a->ensure_grad();
                    // dA_i += dY_i * B_i
                    K().gemm_nn(static_cast<std::size_t>(cs.m), static_cast<std::size_t>(cs.k),
                                static_cast<std::size_t>(n), gi, static_cast<std::size_t>(n),
                                b->value.data() + i * n * cs.k, static_cast<std::size_t>(cs.k),
                                a->grad.data() + i * cs.m * cs.k, static_cast<std::size_t>(cs.k));
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    // dB_i += dY_i^T * A_i
                    K().gemm_tn(static_cast<std::size_t>(n), static_cast<std::size_t>(cs.k),
                                static_cast<std::size_t>(cs.m), gi, static_cast<std::size_t>(n),
                                a->value.data() + i * cs.m * cs.k, static_cast<std::size_t>(cs.k),
                                b->grad.data() + i * n * cs.k, static_cast<std::size_t>(cs.k));
                }
            }
        };
    }
    return finish(node);
}

Var linear(const Var& x, const Var& w, const Var& b) {
    return add_bias(matmul(x, w), b);
}

// ---- softmax ---------------------------------------------------------------

namespace {

struct AxisSplit {
    std::int64_t outer, len, inner;
};

AxisSplit split_axis(const NdArray& x, int axis) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for " + shape_str(x.shape()));
    AxisSplit s{1, x.shape()[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) s.outer *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) s.inner *= x.shape()[static_cast<std::size_t>(i)];
    return s;
}

} // namespace

Var softmax(const Var& x, int axis) {
    const NdArray& xv = x->value;
    const AxisSplit s = split_axis(xv, axis);
    NdArray out(xv.shape());
    const double* src = xv.data();
    double* dst = out.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
            const std::int64_t base = o * s.len * s.inner + i;
            double mx = src[base];
            for (std::int64_t l = 1; l < s.len; ++l) mx = std::max(mx, src[base + l * s.inner]);
            double denom = 0.0;
            for (std::int64_t l = 0; l < s.len; ++l) {
                double e = std::exp(src[base + l * s.inner] - mx);
                dst[base + l * s.inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::int64_t l = 0; l < s.len; ++l) dst[base + l * s.inner] *= inv;
        }
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, s]() {
            x->ensure_grad();
            const double* y = self->value.data();
            const double* gy = self->grad.data();
            double* gx = x->grad.data();
            for (std::int64_t o = 0; o < s.outer; ++o) {
                for (std::int64_t i = 0; i < s.inner; ++i) {
                    const std::int64_t base = o * s.len * s.inner + i;
                    double dotv = 0.0;
                    for (std::int64_t l = 0; l < s.len; ++l) {
                        const std::int64_t k = base + l * s.inner;
                        dotv += gy[k] * y[k];
                    }
                    for (std::int64_t l = 0; l < s.len; ++l) {
                        const std::int64_t k = base + l * s.inner;
                        gx[k] += (gy[k] - dotv) * y[k];
                    }
                }
            }
        };
    }
    return finish(node);
}

// ---- shape ops --------------------------------------------------------------

Var reshape(const Var& x, Shape shape) {
    NdArray out = x->value.reshaped(std::move(shape)); // shares buffer
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x]() {
            x->accumulate(self->grad.reshaped(x->value.shape()));
        };
    }
    return finish(node);
}

Var transpose(const Var& x, const std::vector<int>& perm) {
    NdArray out = x->value.transposed(perm);
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x})) {
        node->requires_grad = true;
        Node* self = node.get();
        std::vector<int> inv(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
        node->backward_fn = [self, x, inv]() {
            x->accumulate(self->grad.transposed(inv));
        };
    }
    return finish(node);
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat of zero arrays");
    const int r = xs[0]->value.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat axis out of range");
    Shape out_shape = xs[0]->value.shape();
    std::int64_t total = 0;
    for (const auto& v : xs) {
        if (v->value.rank() != r) throw ShapeError("concat rank mismatch");
        for (int i = 0; i < r; ++i) {
            if (i != axis && v->value.shape()[static_cast<std::size_t>(i)] != out_shape[static_cast<std::size_t>(i)]) {
                throw ShapeError("concat shape mismatch on non-concat axis");
            }
        }
        total += v->value.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = total;
    NdArray out(out_shape);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<std::size_t>(i)];

    std::int64_t off = 0;
    for (const auto& v : xs) {
        const std::int64_t len = v->value.dim(axis);
        const double* src = v->value.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            double* dst = out.data() + (o * total + off) * inner;
            std::copy(src + o * len * inner, src + (o + 1) * len * inner, dst);
        }
        off += len;
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    bool rg = false;
    if (g_current_tape != nullptr) {
        for (const auto& v : xs) rg = rg || v->requires_grad;
    }
    if (rg) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, xs, outer, inner, total, axis]() {
            std::int64_t off2 = 0;
            for (const auto& v : xs) {
                const std::int64_t len = v->value.dim(axis);
                if (v->requires_grad) {
                    v->ensure_grad();
                    double* dst = v->grad.data();
                    const double* g = self->grad.data();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        K().axpy(1.0, g + (o * total + off2) * inner, dst + o * len * inner,
                                 static_cast<std::size_t>(len * inner));
                    }
                }
                off2 += len;
            }
        };
    }
    return finish(node);
}

Var slice(const Var& x, int axis, std::int64_t start, std::int64_t len) {
    const NdArray& xv = x->value;
    const int r = xv.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("slice axis out of range");
    const std::int64_t dim = xv.dim(axis);
    if (start < 0 || len < 0 || start + len > dim) {
        throw ShapeError("slice bounds [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for axis length " +
                         std::to_string(dim));
    }
    Shape out_shape = xv.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    NdArray out(out_shape);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xv.shape()[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= xv.shape()[static_cast<std::size_t>(i)];
    const double* src = xv.data();
    double* dst = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy(src + (o * dim + start) * inner, src + (o * dim + start + len) * inner,
                  dst + o * len * inner);
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, outer, inner, dim, start, len]() {
            x->ensure_grad();
            double* gx = x->grad.data();
            const double* g = self->grad.data();
            for (std::int64_t o = 0; o < outer; ++o) {
                K().axpy(1.0, g + o * len * inner, gx + (o * dim + start) * inner,
                         static_cast<std::size_t>(len * inner));
            }
        };
    }
    return finish(node);
}

// ---- reductions -------------------------------------------------------------

Var mean_pool(const Var& x, const std::vector<int>& axes) {
    const NdArray& xv = x->value;
    const int r = xv.rank();
    std::vector<bool> reduce(static_cast<std::size_t>(r), false);
    for (int a : axes) {
        int ax = a < 0 ? a + r : a;
        if (ax < 0 || ax >= r) throw ShapeError("mean_pool axis out of range");
        reduce[static_cast<std::size_t>(ax)] = true;
    }
    Shape out_shape;
    std::int64_t count = 1;
    for (int i = 0; i < r; ++i) {
        if (reduce[static_cast<std::size_t>(i)]) {
            count *= xv.shape()[static_cast<std::size_t>(i)];
        } else {
            out_shape.push_back(xv.shape()[static_cast<std::size_t>(i)]);
        }
    }
    if (count == 0) throw ShapeError("mean_pool over empty axes");
    NdArray out(out_shape);

    const auto in_strides = strides_of(xv.shape());
    // map each input element to its output offset by walking indices
    std::vector<std::int64_t> out_stride_for_axis(static_cast<std::size_t>(r), 0);
    {
        auto out_strides = strides_of(out_shape);
        std::size_t oi = 0;
        for (int i = 0; i < r; ++i) {
            if (!reduce[static_cast<std::size_t>(i)]) {
                out_stride_for_axis[static_cast<std::size_t>(i)] = out_strides[oi++];
            }
        }
    }
    {
        const double* src = xv.data();
        double* dst = out.data();
        std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
        std::int64_t out_off = 0;
        const std::int64_t n = xv.size();
        for (std::int64_t i = 0; i < n; ++i) {
            dst[out_off] += src[i];
            for (int ax = r - 1; ax >= 0; --ax) {
                auto a = static_cast<std::size_t>(ax);
                idx[a] += 1;
                out_off += out_stride_for_axis[a];
                if (idx[a] < xv.shape()[a]) break;
                out_off -= out_stride_for_axis[a] * xv.shape()[a];
                idx[a] = 0;
            }
        }
        K().scale(1.0 / static_cast<double>(count), dst, static_cast<std::size_t>(out.size()));
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, out_stride_for_axis, count, r]() {
            x->ensure_grad();
            const double scale = 1.0 / static_cast<double>(count);
            const double* g = self->grad.data();
            double* gx = x->grad.data();
            std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
            std::int64_t out_off = 0;
            const std::int64_t n = x->value.size();
            const auto& xshape = x->value.shape();
            for (std::int64_t i = 0; i < n; ++i) {
                gx[i] += g[out_off] * scale;
                for (int ax = r - 1; ax >= 0; --ax) {
                    auto a = static_cast<std::size_t>(ax);
                    idx[a] += 1;
                    out_off += out_stride_for_axis[a];
                    if (idx[a] < xshape[a]) break;
                    out_off -= out_stride_for_axis[a] * xshape[a];
                    idx[a] = 0;
                }
            }
        };
    }
    return finish(node);
}

Var mean_all(const Var& x) {
    const std::int64_t n = x->value.size();
    if (n == 0) throw ShapeError("mean_all of empty array");
    NdArray out = NdArray::scalar(K().sum(x->value.data(), static_cast<std::size_t>(n)) /
                                  static_cast<double>(n));
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, n]() {
            x->ensure_grad();
            const double g = self->grad.data()[0] / static_cast<double>(n);
            double* gx = x->grad.data();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
        };
    }
    return finish(node);
}

// ---- batch norm ---------------------------------------------------------------

Var batch_norm_last(const Var& x, const Var& gamma, const Var& beta, BnState& state,
                    bool train, double eps, double momentum, bool fuse_relu) {
    const NdArray& xv = x->value;
    const std::int64_t c = xv.dim(-1);
    const std::int64_t rows = xv.size() / c;
    if (gamma->value.size() != c || beta->value.size() != c) {
        throw ShapeError("batch_norm: gamma/beta must have length " + std::to_string(c));
    }
    if (state.running_mean.empty()) {
        state.running_mean = NdArray(Shape{c});
        state.running_var = NdArray::full(Shape{c}, 1.0);
        state.batches_tracked = 0;
    }

    NdArray mean(Shape{c}), var(Shape{c});
    if (train) {
        if (rows < 1) throw ShapeError("batch_norm: empty batch");
        double* mp = mean.data();
        double* vp = var.data();
        const double* src = xv.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            K().axpy(1.0, src + r * c, mp, static_cast<std::size_t>(c));
        }
        K().scale(1.0 / static_cast<double>(rows), mp, static_cast<std::size_t>(c));
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* row = src + r * c;
            for (std::int64_t j = 0; j < c; ++j) {
                const double d = row[j] - mp[j];
                vp[j] += d * d;
            }
        }
        K().scale(1.0 / static_cast<double>(rows), vp, static_cast<std::size_t>(c));
        // running stats: unbiased variance when possible (torch semantics)
        const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
        double* rm = state.running_mean.data();
        double* rv = state.running_var.data();
        for (std::int64_t j = 0; j < c; ++j) {
            rm[j] = (1.0 - momentum) * rm[j] + momentum * mp[j];
            rv[j] = (1.0 - momentum) * rv[j] + momentum * vp[j] * unbias;
        }
        state.batches_tracked += 1;
    } else {
        std::copy(state.running_mean.data(), state.running_mean.data() + c, mean.data());
        std::copy(state.running_var.data(), state.running_var.data() + c, var.data());
    }

    NdArray inv_std(Shape{c});
    for (std::int64_t j = 0; j < c; ++j) {
        inv_std.data()[j] = 1.0 / std::sqrt(var.data()[j] + eps);
    }

    NdArray out(xv.shape());
    {
        const double* src = xv.data();
        double* dst = out.data();
        const double* mp = mean.data();
        const double* is = inv_std.data();
        const double* gm = gamma->value.data();
        const double* bt = beta->value.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* row = src + r * c;
            double* orow = dst + r * c;
            for (std::int64_t j = 0; j < c; ++j) {
                double v = (row[j] - mp[j]) * is[j] * gm[j] + bt[j];
                orow[j] = fuse_relu && v < 0.0 ? 0.0 : v;
            }
        }
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x, &gamma, &beta})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, gamma, beta, mean, inv_std, rows, c, train, fuse_relu]() {
            // dy after the fused relu mask
            NdArray dy = self->grad;
            if (fuse_relu) {
                dy = NdArray(self->grad.shape());
                K().relu_backward(self->value.data(), self->grad.data(), dy.data(),
                                  static_cast<std::size_t>(dy.size()));
            }
            const double* dyp = dy.data();
            const double* src = x->value.data();
            const double* mp = mean.data();
            const double* is = inv_std.data();
            const double* gm = gamma->value.data();

            NdArray sum_dy(Shape{c}), sum_dy_xhat(Shape{c});
            double* sd = sum_dy.data();
            double* sdx = sum_dy_xhat.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* row = src + r * c;
                const double* gr = dyp + r * c;
                for (std::int64_t j = 0; j < c; ++j) {
                    const double xh = (row[j] - mp[j]) * is[j];
                    sd[j] += gr[j];
                    sdx[j] += gr[j] * xh;
                }
            }
            if (beta->requires_grad) beta->accumulate(sum_dy);
            if (gamma->requires_grad) gamma->accumulate(sum_dy_xhat);
            if (x->requires_grad) {
                x->ensure_grad();
                double* gx = x->grad.data();
                const double inv_rows = 1.0 / static_cast<double>(rows);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* row = src + r * c;
                    const double* gr = dyp + r * c;
                    double* gxr = gx + r * c;
                    for (std::int64_t j = 0; j < c; ++j) {
                        if (train) {
                            const double xh = (row[j] - mp[j]) * is[j];
                            gxr[j] += gm[j] * is[j] *
                                      (gr[j] - inv_rows * (sd[j] + xh * sdx[j]));
                        } else {
                            gxr[j] += gm[j] * is[j] * gr[j];
                        }
                    }
                }
            }
        };
    }
    return finish(node);
}

Var batch_norm_nctv(const Var& x, const Var& gamma, const Var& beta, BnState& state,
                    bool train, double eps, double momentum) {
    if (x->value.rank() != 4) throw ShapeError("batch_norm_nctv expects (N,C,T,V)");
    Var xl = transpose(x, {0, 2, 3, 1}); // -> (N,T,V,C)
    Var y = batch_norm_last(xl, gamma, beta, state, train, eps, momentum, false);
    return transpose(y, {0, 3, 1, 2});
}

// ---- temporal convolution ------------------------------------------------------

namespace {

struct ConvDims {
    std::int64_t n, t, v, cin, cout, kt, tout;
};

ConvDims conv_dims(const NdArray& x, const NdArray& u, int stride, int padding) {
    if (x.rank() != 4) throw ShapeError("temporal_conv expects rank-4 input, got " + shape_str(x.shape()));
    if (u.rank() != 3) throw ShapeError("temporal_conv kernel must be (C_out, C_in, k_t)");
    ConvDims d;
    d.n = x.dim(0);
    d.t = x.dim(1);
    d.v = x.dim(2);
    d.cin = x.dim(3);
    d.cout = u.dim(0);
    d.kt = u.dim(2);
    if (u.dim(1) != d.cin) {
        throw ShapeError("temporal_conv: kernel C_in " + std::to_string(u.dim(1)) +
                         " does not match input channels " + std::to_string(d.cin));
    }
    if (d.kt % 2 == 0) throw ShapeError("temporal_conv: kernel length must be odd");
    if (stride < 1) throw ShapeError("temporal_conv: stride must be >= 1");
    if (padding < 0) throw ShapeError("temporal_conv: negative padding");
    if (d.kt > d.t + 2 * padding) {
        throw ShapeError("invalid kernel: k_t " + std::to_string(d.kt) + " exceeds padded length " +
                         std::to_string(d.t + 2 * padding));
    }
    d.tout = (d.t + 2 * padding - d.kt) / stride + 1;
    return d;
}

// For tap offset (tau - padding), the output frames whose input lands in [0, T).
void tap_range(std::int64_t offset, std::int64_t t, std::int64_t tout, int stride,
               std::int64_t& lo, std::int64_t& hi) {
    // need 0 <= s*t + offset <= t-1
    std::int64_t l = 0;
    if (offset < 0) l = (-offset + stride - 1) / stride;
    std::int64_t h = (t - 1 - offset) / stride + 1;
    lo = std::max<std::int64_t>(0, l);
    hi = std::min(tout, h);
}

} // namespace

Var temporal_conv_ntvc(const Var& x, const Var& u, const Var& bias, int stride, int padding) {
    const NdArray& xv = x->value;
    const NdArray& uv = u->value;
    const ConvDims d = conv_dims(xv, uv, stride, padding);
    if (bias->value.size() != d.cout) {
        throw ShapeError("temporal_conv: bias length must equal C_out");
    }

    // kernel taps transposed to (k_t, C_in, C_out) for row-major GEMM
    NdArray ut(Shape{d.kt, d.cin, d.cout});
    {
        const double* up = uv.data();
        double* tp = ut.data();
        for (std::int64_t o = 0; o < d.cout; ++o) {
            for (std::int64_t c = 0; c < d.cin; ++c) {
                for (std::int64_t k = 0; k < d.kt; ++k) {
                    tp[(k * d.cin + c) * d.cout + o] = up[(o * d.cin + c) * d.kt + k];
                }
            }
        }
    }

    NdArray out(Shape{d.n, d.tout, d.v, d.cout});
    for (std::int64_t tau = 0; tau < d.kt; ++tau) {
        const std::int64_t offset = tau - padding;
        std::int64_t lo, hi;
        tap_range(offset, d.t, d.tout, stride, lo, hi);
        if (lo >= hi) continue;
        const double* w = ut.data() + tau * d.cin * d.cout;
        for (std::int64_t nn = 0; nn < d.n; ++nn) {
            if (stride == 1) {
                const double* src = xv.data() + ((nn * d.t + lo + offset) * d.v) * d.cin;
                double* dst = out.data() + ((nn * d.tout + lo) * d.v) * d.cout;
                K().gemm_nn(static_cast<std::size_t>((hi - lo) * d.v),
                            static_cast<std::size_t>(d.cout), static_cast<std::size_t>(d.cin),
                            src, static_cast<std::size_t>(d.cin), w,
                            static_cast<std::size_t>(d.cout), dst,
                            static_cast<std::size_t>(d.cout));
            } else {
                for (std::int64_t tt = lo; tt < hi; ++tt) {
                    const std::int64_t ti = stride * tt + offset;
                    const double* src = xv.data() + ((nn * d.t + ti) * d.v) * d.cin;
                    double* dst = out.data() + ((nn * d.tout + tt) * d.v) * d.cout;
                    K().gemm_nn(static_cast<std::size_t>(d.v), static_cast<std::size_t>(d.cout),
                                static_cast<std::size_t>(d.cin), src,
                                static_cast<std::size_t>(d.cin), w,
                                static_cast<std::size_t>(d.cout), dst,
                                static_cast<std::size_t>(d.cout));
                }
            }
        }
    }
    {
        const std::int64_t rows = d.n * d.tout * d.v;
        const double* bp = bias->value.data();
        double* dst = out.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            K().add(dst + r * d.cout, bp, dst + r * d.cout, static_cast<std::size_t>(d.cout));
        }
    }

    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x, &u, &bias})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, u, bias, d, stride, padding]() {
            const double* g = self->grad.data();
            if (bias->requires_grad) {
                bias->ensure_grad();
                double* bg = bias->grad.data();
                const std::int64_t rows = d.n * d.tout * d.v;
                for (std::int64_t r = 0; r < rows; ++r) {
                    K().axpy(1.0, g + r * d.cout, bg, static_cast<std::size_t>(d.cout));
                }
            }
            // taps as (k_t, C_out, C_in) for dx
            NdArray urev(Shape{d.kt, d.cout, d.cin});
            {
                const double* up = u->value.data();
                double* tp = urev.data();
                for (std::int64_t o = 0; o < d.cout; ++o) {
                    for (std::int64_t c = 0; c < d.cin; ++c) {
                        for (std::int64_t k = 0; k < d.kt; ++k) {
                            tp[(k * d.cout + o) * d.cin + c] = up[(o * d.cin + c) * d.kt + k];
                        }
                    }
                }
            }
            NdArray du_t;
            if (u->requires_grad) du_t = NdArray(Shape{d.kt, d.cin, d.cout});
            if (x->requires_grad) x->ensure_grad();

            for (std::int64_t tau = 0; tau < d.kt; ++tau) {
                const std::int64_t offset = tau - padding;
                std::int64_t lo, hi;
                tap_range(offset, d.t, d.tout, stride, lo, hi);
                if (lo >= hi) continue;
                for (std::int64_t nn = 0; nn < d.n; ++nn) {
                    if (stride == 1) {
                        const std::int64_t rows = (hi - lo) * d.v;
                        const double* gsrc = g + ((nn * d.tout + lo) * d.v) * d.cout;
                        const double* xsrc = x->value.data() + ((nn * d.t + lo + offset) * d.v) * d.cin;
                        if (x->requires_grad) {
                            double* dst = x->grad.data() + ((nn * d.t + lo + offset) * d.v) * d.cin;
                            K().gemm_nn(static_cast<std::size_t>(rows), static_cast<std::size_t>(d.cin),
                                        static_cast<std::size_t>(d.cout), gsrc,
                                        static_cast<std::size_t>(d.cout),
                                        urev.data() + tau * d.cout * d.cin,
                                        static_cast<std::size_t>(d.cin), dst,
                                        static_cast<std::size_t>(d.cin));
                        }
                        if (u->requires_grad) {
                            K().gemm_tn(static_cast<std::size_t>(d.cin), static_cast<std::size_t>(d.cout),
                                        static_cast<std::size_t>(rows), xsrc,
                                        static_cast<std::size_t>(d.cin), gsrc,
                                        static_cast<std::size_t>(d.cout),
                                        du_t.data() + tau * d.cin * d.cout,
                                        static_cast<std::size_t>(d.cout));
                        }
                    } else {
                        for (std::int64_t tt = lo; tt < hi; ++tt) {
                            const std::int64_t ti = stride * tt + offset;
                            const double* gsrc = g + ((nn * d.tout + tt) * d.v) * d.cout;
                            const double* xsrc = x->value.data() + ((nn * d.t + ti) * d.v) * d.cin;
                            if (x->requires_grad) {
                                double* dst = x->grad.data() + ((nn * d.t + ti) * d.v) * d.cin;
                                K().gemm_nn(static_cast<std::size_t>(d.v), static_cast<std::size_t>(d.cin),
                                            static_cast<std::size_t>(d.cout), gsrc,
                                            static_cast<std::size_t>(d.cout),
                                            urev.data() + tau * d.cout * d.cin,
                                            static_cast<std::size_t>(d.cin), dst,
                                            static_cast<std::size_t>(d.cin));
                            }
                            if (u->requires_grad) {
                                K().gemm_tn(static_cast<std::size_t>(d.cin), static_cast<std::size_t>(d.cout),
                                            static_cast<std::size_t>(d.v), xsrc,
                                            static_cast<std::size_t>(d.cin), gsrc,
                                            static_cast<std::size_t>(d.cout),
                                            du_t.data() + tau * d.cin * d.cout,
                                            static_cast<std::size_t>(d.cout));
                            }
                        }
                    }
                }
            }
            if (u->requires_grad) {
                u->ensure_grad();
                double* ug = u->grad.data();
                const double* tp = du_t.data();
                for (std::int64_t o = 0; o < d.cout; ++o) {
                    for (std::int64_t c = 0; c < d.cin; ++c) {
                        for (std::int64_t k = 0; k < d.kt; ++k) {
                            ug[(o * d.cin + c) * d.kt + k] += tp[(k * d.cin + c) * d.cout + o];
                        }
                    }
                }
            }
        };
    }
    return finish(node);
}

Var temporal_conv_nctv(const Var& x, const Var& u, const Var& bias, int stride, int padding) {
    if (x->value.rank() != 4) throw ShapeError("temporal_conv expects (N,C,T,V)");
    Var xl = transpose(x, {0, 2, 3, 1});
    Var y = temporal_conv_ntvc(xl, u, bias, stride, padding);
    return transpose(y, {0, 3, 1, 2});
}

// ---- fused spatial graph convolution -------------------------------------------

Var spatial_gcn_sum(const Var& x, const Var& adj, const Var& w) {
    const NdArray& xv = x->value;
    const NdArray& av = adj->value;
    const NdArray& wv = w->value;
    if (xv.rank() != 4) throw ShapeError("spatial_gcn expects x (N,T,V,C), got " + shape_str(xv.shape()));
    if (av.rank() != 3 || av.dim(1) != av.dim(2)) {
        throw ShapeError("spatial_gcn expects adjacency (K,V,V), got " + shape_str(av.shape()));
    }
    if (wv.rank() != 3) throw ShapeError("spatial_gcn expects weights (K,C_in,C_out)");
    const std::int64_t n = xv.dim(0), t = xv.dim(1), v = xv.dim(2), cin = xv.dim(3);
    const std::int64_t kparts = av.dim(0), cout = wv.dim(2);
    if (av.dim(1) != v) {
        throw ShapeError("spatial_gcn: V mismatch between features " + shape_str(xv.shape()) +
                         " and adjacency " + shape_str(av.shape()));
    }
    if (wv.dim(0) != kparts || wv.dim(1) != cin) {
        throw ShapeError("spatial_gcn: weight shape " + shape_str(wv.shape()) +
                         " does not match K=" + std::to_string(kparts) +
                         ", C_in=" + std::to_string(cin));
    }

    const std::int64_t frames = n * t;
    const std::int64_t rows = frames * v;
    NdArray out(Shape{n, t, v, cout});
    {
        NdArray proj(Shape{rows, cout});
        for (std::int64_t k = 0; k < kparts; ++k) {
            std::fill(proj.data(), proj.data() + proj.size(), 0.0);
            K().gemm_nn(static_cast<std::size_t>(rows), static_cast<std::size_t>(cout),
                        static_cast<std::size_t>(cin), xv.data(), static_cast<std::size_t>(cin),
                        wv.data() + k * cin * cout, static_cast<std::size_t>(cout), proj.data(),
                        static_cast<std::size_t>(cout));
            const double* ak = av.data() + k * v * v;
            for (std::int64_t f = 0; f < frames; ++f) {
                K().gemm_nn(static_cast<std::size_t>(v), static_cast<std::size_t>(cout),
                            static_cast<std::size_t>(v), ak, static_cast<std::size_t>(v),
                            proj.data() + f * v * cout, static_cast<std::size_t>(cout),
                            out.data() + f * v * cout, static_cast<std::size_t>(cout));
            }
        }
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&x, &adj, &w})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, x, adj, w, n, t, v, cin, cout, kparts]() {
            const std::int64_t frames = n * t;
            const std::int64_t rows = frames * v;
            const double* g = self->grad.data();
            const NdArray& xv2 = x->value;
            const NdArray& av2 = adj->value;
            const NdArray& wv2 = w->value;
            if (x->requires_grad) x->ensure_grad();
            if (adj->requires_grad) adj->ensure_grad();
            if (w->requires_grad) w->ensure_grad();

            NdArray proj(Shape{rows, cout});  // recomputed X * W_k
            NdArray dproj(Shape{rows, cout}); // Ak^T * dY
            for (std::int64_t k = 0; k < kparts; ++k) {
                const double* ak = av2.data() + k * v * v;
                const double* wk = wv2.data() + k * cin * cout;
                const bool need_proj = adj->requires_grad;
                if (need_proj) {
                    std::fill(proj.data(), proj.data() + proj.size(), 0.0);
                    K().gemm_nn(static_cast<std::size_t>(rows), static_cast<std::size_t>(cout),
                                static_cast<std::size_t>(cin), xv2.data(),
                                static_cast<std::size_t>(cin), wk, static_cast<std::size_t>(cout),
                                proj.data(), static_cast<std::size_t>(cout));
                }
                std::fill(dproj.data(), dproj.data() + dproj.size(), 0.0);
                for (std::int64_t f = 0; f < frames; ++f) {
                    const double* gf = g + f * v * cout;
                    // dP_f += Ak^T dY_f
                    K().gemm_tn(static_cast<std::size_t>(v), static_cast<std::size_t>(cout),
                                static_cast<std::size_t>(v), ak, static_cast<std::size_t>(v), gf,
                                static_cast<std::size_t>(cout), dproj.data() + f * v * cout,
                                static_cast<std::size_t>(cout));
                    if (adj->requires_grad) {
                        // dAk += dY_f P_f^T
                        K().gemm_nt(static_cast<std::size_t>(v), static_cast<std::size_t>(v),
                                    static_cast<std::size_t>(cout), gf,
                                    static_cast<std::size_t>(cout), proj.data() + f * v * cout,
                                    static_cast<std::size_t>(cout),
                                    adj->grad.data() + k * v * v, static_cast<std::size_t>(v));
                    }
                }
                if (w->requires_grad) {
                    K().gemm_tn(static_cast<std::size_t>(cin), static_cast<std::size_t>(cout),
                                static_cast<std::size_t>(rows), xv2.data(),
                                static_cast<std::size_t>(cin), dproj.data(),
                                static_cast<std::size_t>(cout), w->grad.data() + k * cin * cout,
                                static_cast<std::size_t>(cout));
                }
                if (x->requires_grad) {
                    // dX += dP * W_k^T
                    NdArray wt(Shape{cout, cin});
                    const double* wp = wk;
                    double* wtp = wt.data();
                    for (std::int64_t ci = 0; ci < cin; ++ci) {
                        for (std::int64_t co = 0; co < cout; ++co) wtp[co * cin + ci] = wp[ci * cout + co];
                    }
                    K().gemm_nn(static_cast<std::size_t>(rows), static_cast<std::size_t>(cin),
                                static_cast<std::size_t>(cout), dproj.data(),
                                static_cast<std::size_t>(cout), wt.data(),
                                static_cast<std::size_t>(cin), x->grad.data(),
                                static_cast<std::size_t>(cin));
                }
            }
        };
    }
    return finish(node);
}

// ---- Huber loss -----------------------------------------------------------------

Var huber_loss(const Var& pred, const NdArray& target, double delta) {
    require_same_shape(pred->value, target, "huber_loss");
    if (delta <= 0.0) throw ConfigError("huber_loss: delta must be positive");
    const std::int64_t n = pred->value.size();
    if (n == 0) throw ShapeError("huber_loss of empty array");
    const double* p = pred->value.data();
    const double* y = target.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double r = y[i] - p[i];
        const double ar = std::abs(r);
        acc += ar <= delta ? 0.5 * r * r : delta * ar - 0.5 * delta * delta;
    }
    NdArray out = NdArray::scalar(acc / static_cast<double>(n));
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (want_grad({&pred})) {
        node->requires_grad = true;
        Node* self = node.get();
        node->backward_fn = [self, pred, target, delta, n]() {
            pred->ensure_grad();
            const double g = self->grad.data()[0] / static_cast<double>(n);
            const double* p2 = pred->value.data();
            const double* y2 = target.data();
            double* gp = pred->grad.data();
            for (std::int64_t i = 0; i < n; ++i) {
                const double r = y2[i] - p2[i];
                const double dr = std::abs(r) <= delta ? r : (r > 0 ? delta : -delta);
                gp[i] += -dr * g; // d/dpred = -d/dr
            }
        };
    }
    return finish(node);
}

} // namespace rastg::nd
