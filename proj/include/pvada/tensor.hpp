#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
// Design: value-semantic Tensor handles over shared nodes; primitives record
// adjoint closures on an ambient thread-local Tape. Replaying the tape in
// reverse creation order accumulates gradients (+=) into every
// requires_grad tensor reachable from the loss. Heavy matrix products are
// delegated to BLAS; everything else is plain loops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <cblas.h>

#include "pvada/errors.hpp"
#include "pvada/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace pvada {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first needed
    bool requires_grad = false;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

inline void pin_blas_threads() {
    // one BLAS thread per stream; parallelism happens across clouds
    static std::once_flag flag;
    std::call_once(flag, [] { openblas_set_num_threads(1); });
}

inline void gemm_raw(bool ta, bool tb, int m, int n, int k, float alpha, const float* a,
                     int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    pin_blas_threads();
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm_raw(bool ta, bool tb, int m, int n, int k, double alpha, const double* a,
                     int lda, const double* b, int ldb, double beta, double* c, int ldc) {
    pin_blas_threads();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// exp over a buffer. The float path uses a polynomial 2^f approximation
// (max relative error ~3e-8, branch-free, auto-vectorizes); the double path
// stays on libm and is used by all accuracy-sensitive tests.
inline void vexp(const float* in, float* out, int64_t n) {
    constexpr float kLog2e = 1.44269504088896341f;
    constexpr float kLn2Hi = 0.693359375f;  // two-part ln2 keeps the
    constexpr float kLn2Lo = -2.12194440e-4f;  // reduction accurate at large |x|
    for (int64_t i = 0; i < n; ++i) {
        float x = std::min(std::max(in[i], -87.0f), 88.0f);
        float nf = std::floor(x * kLog2e + 0.5f);
        float r = x - nf * kLn2Hi;
        r -= nf * kLn2Lo;
        float p = 1.9875691500e-4f;
        p = p * r + 1.3981999507e-3f;
        p = p * r + 8.3334519073e-3f;
        p = p * r + 4.1665795894e-2f;
        p = p * r + 1.6666665459e-1f;
        p = p * r + 5.0000001201e-1f;
        p = p * r * r + r + 1.0f;
        int32_t bits = (static_cast<int32_t>(nf) + 127) << 23;
        float scale;
        std::memcpy(&scale, &bits, sizeof(float));
        out[i] = p * scale;
    }
}

inline void vexp(const double* in, double* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = std::exp(in[i]);
}

}  // namespace detail

template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        Tensor t;
        t.n_ = std::make_shared<detail::Node<T>>();
        t.n_->shape = std::move(shape);
        t.n_->value.assign(static_cast<size_t>(shape_numel(t.n_->shape)), v);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.n_ = std::make_shared<detail::Node<T>>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return n_->numel(); }
    int64_t dim(size_t i) const { return n_->shape[i]; }
    size_t rank() const { return n_->shape.size(); }
    int64_t rows() const { return n_->shape[0]; }
    int64_t cols() const { return n_->shape.size() > 1 ? n_->shape[1] : 1; }

    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }
    T* ptr() { return n_->value.data(); }
    const T* ptr() const { return n_->value.data(); }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    bool has_grad() const { return n_->has_grad(); }
    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<T>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() {
        if (n_->has_grad()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
        return n_->value[0];
    }

    Tensor copy() const {
        Tensor t;
        t.n_ = std::make_shared<detail::Node<T>>();
        t.n_->shape = n_->shape;
        t.n_->value = n_->value;
        t.n_->requires_grad = n_->requires_grad;
        return t;
    }

    std::shared_ptr<detail::Node<T>> node() const { return n_; }

private:
    std::shared_ptr<detail::Node<T>> n_;
};

// Ordered record of primitive applications. Backward replays adjoints in
// reverse creation order (a topological order of the forward graph), so
// gradient accumulation is deterministic. One tape per thread; independent
// tapes on different threads do not interact.
template <class T>
class Tape {
public:
    static Tape*& current() {
        thread_local Tape* cur = nullptr;
        return cur;
    }

    void record(std::function<void()> adjoint) { adjoints_.push_back(std::move(adjoint)); }

    size_t size() const { return adjoints_.size(); }

    void clear() { adjoints_.clear(); }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        loss.grad()[0] += T(1);
        for (auto it = adjoints_.rbegin(); it != adjoints_.rend(); ++it) (*it)();
        clear();
    }

private:
    std::vector<std::function<void()>> adjoints_;
};

template <class T>
struct TapeScope {
    explicit TapeScope(Tape<T>& t) : prev_(Tape<T>::current()) { Tape<T>::current() = &t; }
    ~TapeScope() { Tape<T>::current() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// backward on the ambient tape
template <class T>
void backward(Tensor<T>& loss) {
    Tape<T>* tape = Tape<T>::current();
    if (!tape) throw ContractError("backward: no active tape");
    tape->backward(loss);
}

namespace detail {

template <class T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
    if (!Tape<T>::current()) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <class T>
Tensor<T> make_output(Shape shape, bool tracked) {
    Tensor<T> out = Tensor<T>::zeros(std::move(shape));
    out.set_requires_grad(tracked);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false, T alpha = T(1)) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t m = trans_a ? a.dim(1) : a.dim(0);
    const int64_t k = trans_a ? a.dim(0) : a.dim(1);
    const int64_t k2 = trans_b ? b.dim(1) : b.dim(0);
    const int64_t n = trans_b ? b.dim(0) : b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));

    const bool tracked = detail::should_record<T>({&a, &b});
    Tensor<T> out = detail::make_output<T>({m, n}, tracked);
    detail::gemm_raw(trans_a, trans_b, static_cast<int>(m), static_cast<int>(n),
                     static_cast<int>(k), alpha, a.ptr(), static_cast<int>(a.dim(1)), b.ptr(),
                     static_cast<int>(b.dim(1)), T(0), out.ptr(), static_cast<int>(n));

    if (tracked) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool ga = a.requires_grad(), gb = b.requires_grad();
        Tape<T>::current()->record([an, bn, on, trans_a, trans_b, alpha, m, n, k, ga, gb] {
            if (!on->has_grad()) return;
            const T* g = on->grad.data();
            if (ga) {
                an->ensure_grad();
                if (!trans_a)  // dA = alpha * dY . op(B)^T
                    detail::gemm_raw(false, !trans_b, (int)m, (int)k, (int)n, alpha, g, (int)n,
                                     bn->value.data(), (int)bn->shape[1], T(1), an->grad.data(),
                                     (int)an->shape[1]);
                else  // dA = alpha * op(B) . dY^T
                    detail::gemm_raw(trans_b, true, (int)k, (int)m, (int)n, alpha,
                                     bn->value.data(), (int)bn->shape[1], g, (int)n, T(1),
                                     an->grad.data(), (int)an->shape[1]);
            }
            if (gb) {
                bn->ensure_grad();
                if (!trans_b)  // dB = alpha * op(A)^T . dY
                    detail::gemm_raw(!trans_a, false, (int)k, (int)n, (int)m, alpha,
                                     an->value.data(), (int)an->shape[1], g, (int)n, T(1),
                                     bn->grad.data(), (int)bn->shape[1]);
                else  // dB = alpha * dY^T . op(A)
                    detail::gemm_raw(true, trans_a, (int)n, (int)k, (int)m, alpha, g, (int)n,
                                     an->value.data(), (int)an->shape[1], T(1), bn->grad.data(),
                                     (int)bn->shape[1]);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise with numpy-style trailing broadcast (rank <= 4)
// ---------------------------------------------------------------------------

namespace detail {

struct BroadcastPlan {
    Shape out;
    std::array<int64_t, 4> stride_a{};   // 0 on broadcast axes
    std::array<int64_t, 4> stride_b{};
    std::array<int64_t, 4> extent{};
    size_t rank = 0;
    bool same_shape = false;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
    if (a.size() > 4 || b.size() > 4) throw ShapeError(std::string(op) + ": rank > 4 unsupported");
    BroadcastPlan p;
    p.rank = std::max(a.size(), b.size());
    Shape ea(p.rank, 1), eb(p.rank, 1);
    std::copy(a.begin(), a.end(), ea.begin() + (p.rank - a.size()));
    std::copy(b.begin(), b.end(), eb.begin() + (p.rank - b.size()));
    p.out.resize(p.rank);
    for (size_t i = 0; i < p.rank; ++i) {
        if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                             " do not broadcast");
        p.out[i] = std::max(ea[i], eb[i]);
    }
    int64_t sa = 1, sb = 1;
    for (size_t i = p.rank; i-- > 0;) {
        p.extent[i] = p.out[i];
        p.stride_a[i] = (ea[i] == 1 && p.out[i] != 1) ? 0 : sa;
        p.stride_b[i] = (eb[i] == 1 && p.out[i] != 1) ? 0 : sb;
        sa *= ea[i];
        sb *= eb[i];
    }
    p.same_shape = (a == b);
    return p;
}

// visit(out_flat_index, a_flat_index, b_flat_index)
template <class F>
void broadcast_walk(const BroadcastPlan& p, F&& visit) {
    std::array<int64_t, 4> ext{1, 1, 1, 1}, sa{0, 0, 0, 0}, sb{0, 0, 0, 0};
    for (size_t i = 0; i < p.rank; ++i) {
        ext[4 - p.rank + i] = p.extent[i];
        sa[4 - p.rank + i] = p.stride_a[i];
        sb[4 - p.rank + i] = p.stride_b[i];
    }
    int64_t o = 0;
    for (int64_t i0 = 0; i0 < ext[0]; ++i0)
        for (int64_t i1 = 0; i1 < ext[1]; ++i1)
            for (int64_t i2 = 0; i2 < ext[2]; ++i2) {
                int64_t base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                int64_t base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for (int64_t i3 = 0; i3 < ext[3]; ++i3, ++o)
                    visit(o, base_a + i3 * sa[3], base_b + i3 * sb[3]);
            }
}

enum class EwOp { Add, Sub, Mul };

template <class T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, EwOp op, const char* name) {
    BroadcastPlan plan = broadcast_plan(a.shape(), b.shape(), name);
    const bool tracked = should_record<T>({&a, &b});
    Tensor<T> out = make_output<T>(plan.out, tracked);

    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    const int64_t n = out.numel();
    if (plan.same_shape) {
        switch (op) {
            case EwOp::Add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
            case EwOp::Sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
            case EwOp::Mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
        }
    } else {
        switch (op) {
            case EwOp::Add: broadcast_walk(plan, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = pa[ia] + pb[ib]; }); break;
            case EwOp::Sub: broadcast_walk(plan, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = pa[ia] - pb[ib]; }); break;
            case EwOp::Mul: broadcast_walk(plan, [&](int64_t o, int64_t ia, int64_t ib) { po[o] = pa[ia] * pb[ib]; }); break;
        }
    }

    if (tracked) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool ga = a.requires_grad(), gb = b.requires_grad();
        Tape<T>::current()->record([an, bn, on, plan, op, ga, gb] {
            if (!on->has_grad()) return;
            const T* g = on->grad.data();
            if (ga) an->ensure_grad();
            if (gb) bn->ensure_grad();
            T* da = ga ? an->grad.data() : nullptr;
            T* db = gb ? bn->grad.data() : nullptr;
            const T* va = an->value.data();
            const T* vb = bn->value.data();
            broadcast_walk(plan, [&](int64_t o, int64_t ia, int64_t ib) {
                switch (op) {
                    case EwOp::Add:
                        if (da) da[ia] += g[o];
                        if (db) db[ib] += g[o];
                        break;
                    case EwOp::Sub:
                        if (da) da[ia] += g[o];
                        if (db) db[ib] -= g[o];
                        break;
                    case EwOp::Mul:
                        if (da) da[ia] += g[o] * vb[ib];
                        if (db) db[ib] += g[o] * va[ia];
                        break;
                }
            });
        });
    }
    return out;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::elementwise(a, b, detail::EwOp::Add, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::elementwise(a, b, detail::EwOp::Sub, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::elementwise(a, b, detail::EwOp::Mul, "mul");
}

// ---------------------------------------------------------------------------
// pointwise linear (the per-point affine map; a 1x1 convolution over points)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> pointwise_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("pointwise_linear: expects x(R,Cin) w(Cin,Cout) b(Cout)");
    if (x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
        throw ShapeError("pointwise_linear: shapes " + shape_str(x.shape()) + ", " +
                         shape_str(w.shape()) + ", " + shape_str(b.shape()) + " do not conform");
    const int64_t rows = x.dim(0), cin = x.dim(1), cout = w.dim(1);

    const bool tracked = detail::should_record<T>({&x, &w, &b});
    Tensor<T> out = detail::make_output<T>({rows, cout}, tracked);
    detail::gemm_raw(false, false, (int)rows, (int)cout, (int)cin, T(1), x.ptr(), (int)cin,
                     w.ptr(), (int)cout, T(0), out.ptr(), (int)cout);
    T* po = out.ptr();
    const T* pb = b.ptr();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cout; ++c) po[r * cout + c] += pb[c];

    if (tracked) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
        bool gx = x.requires_grad(), gw = w.requires_grad(), gb = b.requires_grad();
        Tape<T>::current()->record([xn, wn, bn, on, rows, cin, cout, gx, gw, gb] {
            if (!on->has_grad()) return;
            const T* g = on->grad.data();
            if (gx) {
                xn->ensure_grad();
                detail::gemm_raw(false, true, (int)rows, (int)cin, (int)cout, T(1), g, (int)cout,
                                 wn->value.data(), (int)cout, T(1), xn->grad.data(), (int)cin);
            }
            if (gw) {
                wn->ensure_grad();
                detail::gemm_raw(true, false, (int)cin, (int)cout, (int)rows, T(1),
                                 xn->value.data(), (int)cin, g, (int)cout, T(1), wn->grad.data(),
                                 (int)cout);
            }
            if (gb) {
                bn->ensure_grad();
                T* db = bn->grad.data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cout; ++c) db[c] += g[r * cout + c];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>(x.shape(), tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : slope * px[i];
    if (tracked) {
        auto xn = x.node(), on = out.node();
        Tape<T>::current()->record([xn, on, slope, n] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* v = xn->value.data();
            T* d = xn->grad.data();
            for (int64_t i = 0; i < n; ++i) d[i] += v[i] > T(0) ? g[i] : slope * g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return leaky_relu(x, T(0));
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (x.rank() == 1) {
        if (axis != 0) throw ShapeError("softmax: axis out of range for rank-1 tensor");
    } else if (x.rank() == 2) {
        if (axis != 0 && axis != 1) throw ShapeError("softmax: axis out of range for rank-2 tensor");
    } else {
        throw ShapeError("softmax: rank " + std::to_string(x.rank()) + " unsupported");
    }

    // reduce along `axis`: treat as groups x extent with stride
    const int64_t rows = x.rank() == 1 ? 1 : x.dim(0);
    const int64_t cols = x.rank() == 1 ? x.dim(0) : x.dim(1);
    const bool along_cols = (x.rank() == 1) || axis == 1;
    const int64_t groups = along_cols ? rows : cols;
    const int64_t extent = along_cols ? cols : rows;
    const int64_t gstride = along_cols ? cols : 1;  // stride between groups
    const int64_t estride = along_cols ? 1 : cols;  // stride within a group

    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>(x.shape(), tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    std::vector<T> tmp(static_cast<size_t>(extent));
    for (int64_t g = 0; g < groups; ++g) {
        const T* in = px + g * gstride;
        T* o = po + g * gstride;
        T mx = in[0];
        for (int64_t e = 1; e < extent; ++e) mx = std::max(mx, in[e * estride]);
        for (int64_t e = 0; e < extent; ++e) tmp[static_cast<size_t>(e)] = in[e * estride] - mx;
        detail::vexp(tmp.data(), tmp.data(), extent);
        T sum = T(0);
        for (int64_t e = 0; e < extent; ++e) sum += tmp[static_cast<size_t>(e)];
        T inv = T(1) / sum;
        for (int64_t e = 0; e < extent; ++e) o[e * estride] = tmp[static_cast<size_t>(e)] * inv;
    }

    if (tracked) {
        auto xn = x.node(), on = out.node();
        Tape<T>::current()->record([xn, on, groups, extent, gstride, estride] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* y = on->value.data();
            T* d = xn->grad.data();
            for (int64_t gi = 0; gi < groups; ++gi) {
                const T* yr = y + gi * gstride;
                const T* gr = g + gi * gstride;
                T* dr = d + gi * gstride;
                T dot = T(0);
                for (int64_t e = 0; e < extent; ++e) dot += gr[e * estride] * yr[e * estride];
                for (int64_t e = 0; e < extent; ++e)
                    dr[e * estride] += yr[e * estride] * (gr[e * estride] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat / gather
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const size_t rank = xs[0].rank();
    if (rank > 2 || (rank == 1 && axis != 0) || (rank == 2 && axis != 0 && axis != 1))
        throw ShapeError("concat: unsupported axis for given rank");
    for (const auto& t : xs)
        if (t.rank() != rank)
            throw ShapeError("concat: mixed ranks");

    Shape out_shape = xs[0].shape();
    int64_t total = 0;
    for (const auto& t : xs) {
        for (size_t d = 0; d < rank; ++d)
            if (static_cast<int>(d) != axis && t.dim(d) != out_shape[d])
                throw ShapeError("concat: shape " + shape_str(t.shape()) +
                                 " incompatible with " + shape_str(out_shape) + " on axis " +
                                 std::to_string(axis));
        total += t.dim(static_cast<size_t>(axis));
    }
    out_shape[static_cast<size_t>(axis)] = total;

    bool tracked = false;
    if (Tape<T>::current())
        for (const auto& t : xs) tracked = tracked || t.requires_grad();

    Tensor<T> out = detail::make_output<T>(out_shape, tracked);
    T* po = out.ptr();
    if (rank == 1 || axis == 0) {
        int64_t off = 0;
        for (const auto& t : xs) {
            std::copy(t.ptr(), t.ptr() + t.numel(), po + off);
            off += t.numel();
        }
    } else {  // rank 2, axis 1
        const int64_t rows = out_shape[0], ocols = out_shape[1];
        int64_t coff = 0;
        for (const auto& t : xs) {
            const int64_t c = t.dim(1);
            const T* pt = t.ptr();
            for (int64_t r = 0; r < rows; ++r)
                std::copy(pt + r * c, pt + (r + 1) * c, po + r * ocols + coff);
            coff += c;
        }
    }

    if (tracked) {
        std::vector<std::shared_ptr<detail::Node<T>>> nodes;
        std::vector<bool> wants;
        for (const auto& t : xs) {
            nodes.push_back(t.node());
            wants.push_back(t.requires_grad());
        }
        auto on = out.node();
        Tape<T>::current()->record([nodes, wants, on, axis, rank, out_shape] {
            if (!on->has_grad()) return;
            const T* g = on->grad.data();
            if (rank == 1 || axis == 0) {
                int64_t off = 0;
                for (size_t i = 0; i < nodes.size(); ++i) {
                    const int64_t n = nodes[i]->numel();
                    if (wants[i]) {
                        nodes[i]->ensure_grad();
                        T* d = nodes[i]->grad.data();
                        for (int64_t j = 0; j < n; ++j) d[j] += g[off + j];
                    }
                    off += n;
                }
            } else {
                const int64_t rows = out_shape[0], ocols = out_shape[1];
                int64_t coff = 0;
                for (size_t i = 0; i < nodes.size(); ++i) {
                    const int64_t c = nodes[i]->shape[1];
                    if (wants[i]) {
                        nodes[i]->ensure_grad();
                        T* d = nodes[i]->grad.data();
                        for (int64_t r = 0; r < rows; ++r)
                            for (int64_t j = 0; j < c; ++j) d[r * c + j] += g[r * ocols + coff + j];
                    }
                    coff += c;
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int64_t> idx) {
    if (x.rank() != 2) throw ShapeError("gather_rows: expects rank-2 input");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    for (int64_t i : idx)
        if (i < 0 || i >= rows)
            throw BoundsError("gather_rows: index " + std::to_string(i) + " out of range [0," +
                              std::to_string(rows) + ")");

    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>({static_cast<int64_t>(idx.size()), cols}, tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(px + idx[i] * cols, px + (idx[i] + 1) * cols, po + static_cast<int64_t>(i) * cols);

    if (tracked) {
        auto xn = x.node(), on = out.node();
        std::vector<int64_t> idx_copy(idx.begin(), idx.end());
        Tape<T>::current()->record([xn, on, idx_copy, cols] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* d = xn->grad.data();
            for (size_t i = 0; i < idx_copy.size(); ++i)
                for (int64_t c = 0; c < cols; ++c)
                    d[idx_copy[i] * cols + c] += g[static_cast<int64_t>(i) * cols + c];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
struct MaxResult {
    Tensor<T> values;
    std::vector<int64_t> argmax;  // ties: lowest index wins
};

template <class T>
MaxResult<T> max_over_axis(const Tensor<T>& x, int axis = 0) {
    const int64_t rows = x.rank() == 1 ? 1 : x.dim(0);
    const int64_t cols = x.rank() == 1 ? x.dim(0) : x.dim(1);
    if (x.rank() > 2) throw ShapeError("max_over_axis: rank > 2 unsupported");
    const bool over_rows = (x.rank() == 1) || axis == 0;
    if (x.rank() == 2 && axis != 0 && axis != 1) throw ShapeError("max_over_axis: bad axis");

    const int64_t out_n = x.rank() == 1 ? 1 : (over_rows ? cols : rows);
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> values = detail::make_output<T>({out_n}, tracked);
    std::vector<int64_t> arg(static_cast<size_t>(out_n), 0);
    const T* px = x.ptr();
    T* pv = values.ptr();
    if (x.rank() == 1) {
        T best = px[0];
        int64_t bi = 0;
        for (int64_t i = 1; i < cols; ++i)
            if (px[i] > best) best = px[i], bi = i;
        pv[0] = best;
        arg[0] = bi;
    } else if (over_rows) {
        for (int64_t c = 0; c < cols; ++c) pv[c] = px[c];
        for (int64_t r = 1; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c)
                if (px[r * cols + c] > pv[c]) pv[c] = px[r * cols + c], arg[static_cast<size_t>(c)] = r;
    } else {
        for (int64_t r = 0; r < rows; ++r) {
            T best = px[r * cols];
            int64_t bi = 0;
            for (int64_t c = 1; c < cols; ++c)
                if (px[r * cols + c] > best) best = px[r * cols + c], bi = c;
            pv[r] = best;
            arg[static_cast<size_t>(r)] = bi;
        }
    }

    if (tracked) {
        auto xn = x.node(), vn = values.node();
        const size_t rank = x.rank();
        Tape<T>::current()->record([xn, vn, arg, rank, rows, cols, over_rows] {
            if (!vn->has_grad()) return;
            xn->ensure_grad();
            const T* g = vn->grad.data();
            T* d = xn->grad.data();
            if (rank == 1) {
                d[arg[0]] += g[0];
            } else if (over_rows) {
                for (int64_t c = 0; c < cols; ++c) d[arg[static_cast<size_t>(c)] * cols + c] += g[c];
            } else {
                for (int64_t r = 0; r < rows; ++r) d[r * cols + arg[static_cast<size_t>(r)]] += g[r];
            }
        });
    }
    return {values, std::move(arg)};
}

// max over fixed-length groups of rows: x is (S*k, C), result (S, C).
// argmax stores the winning global row per (segment, column).
template <class T>
MaxResult<T> segment_max(const Tensor<T>& x, int64_t k) {
    if (x.rank() != 2) throw ShapeError("segment_max: expects rank-2 input");
    if (k < 1 || x.dim(0) % k != 0)
        throw ShapeError("segment_max: row count " + std::to_string(x.dim(0)) +
                         " not divisible by segment " + std::to_string(k));
    const int64_t segs = x.dim(0) / k, cols = x.dim(1);
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> values = detail::make_output<T>({segs, cols}, tracked);
    std::vector<int64_t> arg(static_cast<size_t>(segs * cols));
    const T* px = x.ptr();
    T* pv = values.ptr();
    for (int64_t s = 0; s < segs; ++s) {
        const int64_t r0 = s * k;
        for (int64_t c = 0; c < cols; ++c) {
            pv[s * cols + c] = px[r0 * cols + c];
            arg[static_cast<size_t>(s * cols + c)] = r0;
        }
        for (int64_t r = r0 + 1; r < r0 + k; ++r)
            for (int64_t c = 0; c < cols; ++c)
                if (px[r * cols + c] > pv[s * cols + c]) {
                    pv[s * cols + c] = px[r * cols + c];
                    arg[static_cast<size_t>(s * cols + c)] = r;
                }
    }

    if (tracked) {
        auto xn = x.node(), vn = values.node();
        Tape<T>::current()->record([xn, vn, arg, segs, cols] {
            if (!vn->has_grad()) return;
            xn->ensure_grad();
            const T* g = vn->grad.data();
            T* d = xn->grad.data();
            for (int64_t i = 0; i < segs * cols; ++i)
                d[arg[static_cast<size_t>(i)] * cols + (i % cols)] += g[i];
        });
    }
    return {values, std::move(arg)};
}

template <class T>
Tensor<T> mean_over_axis(const Tensor<T>& x, int axis = 0) {
    if (x.rank() != 2) throw ShapeError("mean_over_axis: expects rank-2 input");
    if (axis != 0 && axis != 1) throw ShapeError("mean_over_axis: bad axis");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    const int64_t out_n = axis == 0 ? cols : rows;
    const int64_t extent = axis == 0 ? rows : cols;
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>({out_n}, tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    const T inv = T(1) / static_cast<T>(extent);
    if (axis == 0) {
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) po[c] += px[r * cols + c];
    } else {
        for (int64_t r = 0; r < rows; ++r) {
            T s = T(0);
            for (int64_t c = 0; c < cols; ++c) s += px[r * cols + c];
            po[r] = s;
        }
    }
    for (int64_t i = 0; i < out_n; ++i) po[i] *= inv;

    if (tracked) {
        auto xn = x.node(), on = out.node();
        Tape<T>::current()->record([xn, on, rows, cols, axis, inv] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* d = xn->grad.data();
            if (axis == 0) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) d[r * cols + c] += g[c] * inv;
            } else {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) d[r * cols + c] += g[r] * inv;
            }
        });
    }
    return out;
}

// mean of member rows per cell: x (N, C) + assignment (N -> [0, n_cells)).
template <class T>
Tensor<T> cell_mean_pool(const Tensor<T>& x, std::span<const int64_t> assignment, int64_t n_cells) {
    if (x.rank() != 2) throw ShapeError("cell_mean_pool: expects rank-2 input");
    if (static_cast<int64_t>(assignment.size()) != x.dim(0))
        throw ShapeError("cell_mean_pool: assignment length mismatch");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    for (int64_t a : assignment)
        if (a < 0 || a >= n_cells)
            throw BoundsError("cell_mean_pool: assignment " + std::to_string(a) +
                              " out of range [0," + std::to_string(n_cells) + ")");

    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>({n_cells, cols}, tracked);
    std::vector<int64_t> counts(static_cast<size_t>(n_cells), 0);
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t cell = assignment[static_cast<size_t>(r)];
        ++counts[static_cast<size_t>(cell)];
        for (int64_t c = 0; c < cols; ++c) po[cell * cols + c] += px[r * cols + c];
    }
    for (int64_t cell = 0; cell < n_cells; ++cell) {
        if (counts[static_cast<size_t>(cell)] == 0) continue;
        const T inv = T(1) / static_cast<T>(counts[static_cast<size_t>(cell)]);
        for (int64_t c = 0; c < cols; ++c) po[cell * cols + c] *= inv;
    }

    if (tracked) {
        auto xn = x.node(), on = out.node();
        std::vector<int64_t> assign_copy(assignment.begin(), assignment.end());
        Tape<T>::current()->record([xn, on, assign_copy, counts, cols] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* d = xn->grad.data();
            for (size_t r = 0; r < assign_copy.size(); ++r) {
                const int64_t cell = assign_copy[r];
                const T inv = T(1) / static_cast<T>(counts[static_cast<size_t>(cell)]);
                for (int64_t c = 0; c < cols; ++c)
                    d[static_cast<int64_t>(r) * cols + c] += g[cell * cols + c] * inv;
            }
        });
    }
    return out;
}

// y_ij = x_ij / sum_j x_ij
template <class T>
Tensor<T> l1_normalize_rows(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("l1_normalize_rows: expects rank-2 input");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>(x.shape(), tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    std::vector<T> inv_sum(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        T s = T(0);
        for (int64_t c = 0; c < cols; ++c) s += px[r * cols + c];
        inv_sum[static_cast<size_t>(r)] = T(1) / s;
        for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] * inv_sum[static_cast<size_t>(r)];
    }
    if (tracked) {
        auto xn = x.node(), on = out.node();
        Tape<T>::current()->record([xn, on, inv_sum, rows, cols] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* y = on->value.data();
            T* d = xn->grad.data();
            for (int64_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (int64_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                for (int64_t c = 0; c < cols; ++c)
                    d[r * cols + c] += (g[r * cols + c] - dot) * inv_sum[static_cast<size_t>(r)];
            }
        });
    }
    return out;
}

// same data, new shape (copying so gradient bookkeeping stays simple)
template <class T>
Tensor<T> reshape_copy(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape_copy: cannot reshape " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>(std::move(shape), tracked);
    std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
    if (tracked) {
        auto xn = x.node(), on = out.node();
        const int64_t n = x.numel();
        Tape<T>::current()->record([xn, on, n] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* d = xn->grad.data();
            for (int64_t i = 0; i < n; ++i) d[i] += g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>({1}, tracked);
    const T* px = x.ptr();
    T s = T(0);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) s += px[i];
    out.ptr()[0] = s;
    if (tracked) {
        auto xn = x.node(), on = out.node();
        Tape<T>::current()->record([xn, on, n] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T g = on->grad[0];
            T* d = xn->grad.data();
            for (int64_t i = 0; i < n; ++i) d[i] += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    const bool tracked = detail::should_record<T>({&x});
    Tensor<T> out = detail::make_output<T>(x.shape(), tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = c * px[i];
    if (tracked) {
        auto xn = x.node(), on = out.node();
        Tape<T>::current()->record([xn, on, c, n] {
            if (!on->has_grad()) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* d = xn->grad.data();
            for (int64_t i = 0; i < n; ++i) d[i] += c * g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// Deferred running-statistics update, so data-parallel training can apply
// updates in a deterministic order after the parallel section.
template <class T>
struct BnPendingUpdate {
    int slot;
    std::vector<T> mean;
    std::vector<T> var;  // unbiased when count > 1
};

template <class T>
using BnSink = std::vector<BnPendingUpdate<T>>;

template <class T>
struct BatchNormArgs {
    Tensor<T> running_mean;  // non-grad buffers; required in eval mode
    Tensor<T> running_var;
    T eps = T(1e-5);
    T momentum = T(0.1);
    bool training = true;
    bool update_running = true;  // false: leave running statistics untouched
    BnSink<T>* sink = nullptr;   // training: collect updates here; nullptr -> update in place
    int slot = -1;
};

// Normalizes each feature channel over the row (point) axis.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const BatchNormArgs<T>& args) {
    if (x.rank() != 2) throw ShapeError("batch_norm: expects rank-2 input");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (gamma.numel() != cols || beta.numel() != cols)
        throw ShapeError("batch_norm: parameter length " + std::to_string(gamma.numel()) +
                         " does not match feature count " + std::to_string(cols));

    const bool tracked = detail::should_record<T>({&x, &gamma, &beta});
    Tensor<T> out = detail::make_output<T>(x.shape(), tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    const T* pg = gamma.ptr();
    const T* pb = beta.ptr();

    std::vector<T> mean(static_cast<size_t>(cols), T(0)), inv_std(static_cast<size_t>(cols));

    if (args.training) {
        std::vector<T> var(static_cast<size_t>(cols), T(0));
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) mean[static_cast<size_t>(c)] += px[r * cols + c];
        const T invn = T(1) / static_cast<T>(rows);
        for (int64_t c = 0; c < cols; ++c) mean[static_cast<size_t>(c)] *= invn;
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) {
                const T d = px[r * cols + c] - mean[static_cast<size_t>(c)];
                var[static_cast<size_t>(c)] += d * d;
            }
        for (int64_t c = 0; c < cols; ++c) {
            var[static_cast<size_t>(c)] *= invn;  // biased, used for normalization
            inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(var[static_cast<size_t>(c)] + args.eps);
        }

        if (args.running_mean.defined() && args.update_running) {
            std::vector<T> run_var(static_cast<size_t>(cols));
            const T unbias = rows > 1 ? static_cast<T>(rows) / static_cast<T>(rows - 1) : T(1);
            for (int64_t c = 0; c < cols; ++c)
                run_var[static_cast<size_t>(c)] = var[static_cast<size_t>(c)] * unbias;
            if (args.sink) {
                args.sink->push_back({args.slot, mean, std::move(run_var)});
            } else {
                T* rm = const_cast<Tensor<T>&>(args.running_mean).ptr();
                T* rv = const_cast<Tensor<T>&>(args.running_var).ptr();
                for (int64_t c = 0; c < cols; ++c) {
                    rm[c] = (T(1) - args.momentum) * rm[c] + args.momentum * mean[static_cast<size_t>(c)];
                    rv[c] = (T(1) - args.momentum) * rv[c] + args.momentum * run_var[static_cast<size_t>(c)];
                }
            }
        }
    } else {
        if (!args.running_mean.defined() || !args.running_var.defined())
            throw ContractError("batch_norm: eval mode requires running statistics");
        const T* rm = args.running_mean.ptr();
        const T* rv = args.running_var.ptr();
        for (int64_t c = 0; c < cols; ++c) {
            mean[static_cast<size_t>(c)] = rm[c];
            inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(rv[c] + args.eps);
        }
    }

    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
            const T xh = (px[r * cols + c] - mean[static_cast<size_t>(c)]) * inv_std[static_cast<size_t>(c)];
            po[r * cols + c] = pg[c] * xh + pb[c];
        }

    if (tracked) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        bool gx = x.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
        const bool training = args.training;
        Tape<T>::current()->record([xn, gn, bn, on, mean, inv_std, rows, cols, gx, gg, gb, training] {
            if (!on->has_grad()) return;
            const T* g = on->grad.data();
            const T* px2 = xn->value.data();
            const T* pg2 = gn->value.data();
            const T invn = T(1) / static_cast<T>(rows);
            if (gg) gn->ensure_grad();
            if (gb) bn->ensure_grad();
            if (gx) xn->ensure_grad();
            for (int64_t c = 0; c < cols; ++c) {
                const T m = mean[static_cast<size_t>(c)];
                const T is = inv_std[static_cast<size_t>(c)];
                T sum_g = T(0), sum_gx = T(0);
                for (int64_t r = 0; r < rows; ++r) {
                    const T xh = (px2[r * cols + c] - m) * is;
                    sum_g += g[r * cols + c];
                    sum_gx += g[r * cols + c] * xh;
                }
                if (gg) gn->grad[static_cast<size_t>(c)] += sum_gx;
                if (gb) bn->grad[static_cast<size_t>(c)] += sum_g;
                if (gx) {
                    T* d = xn->grad.data();
                    if (training) {
                        for (int64_t r = 0; r < rows; ++r) {
                            const T xh = (px2[r * cols + c] - m) * is;
                            d[r * cols + c] +=
                                pg2[c] * is * (g[r * cols + c] - sum_g * invn - xh * sum_gx * invn);
                        }
                    } else {
                        for (int64_t r = 0; r < rows; ++r) d[r * cols + c] += pg2[c] * is * g[r * cols + c];
                    }
                }
            }
        });
    }
    return out;
}

// Normalizes each row over the feature axis.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    if (x.rank() != 2) throw ShapeError("layer_norm: expects rank-2 input");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (gamma.numel() != cols || beta.numel() != cols)
        throw ShapeError("layer_norm: parameter length does not match feature count");

    const bool tracked = detail::should_record<T>({&x, &gamma, &beta});
    Tensor<T> out = detail::make_output<T>(x.shape(), tracked);
    const T* px = x.ptr();
    T* po = out.ptr();
    const T* pg = gamma.ptr();
    const T* pb = beta.ptr();
    std::vector<T> mean(static_cast<size_t>(rows)), inv_std(static_cast<size_t>(rows));
    const T invc = T(1) / static_cast<T>(cols);
    for (int64_t r = 0; r < rows; ++r) {
        T m = T(0);
        for (int64_t c = 0; c < cols; ++c) m += px[r * cols + c];
        m *= invc;
        T v = T(0);
        for (int64_t c = 0; c < cols; ++c) {
            const T d = px[r * cols + c] - m;
            v += d * d;
        }
        v *= invc;
        mean[static_cast<size_t>(r)] = m;
        inv_std[static_cast<size_t>(r)] = T(1) / std::sqrt(v + eps);
        for (int64_t c = 0; c < cols; ++c)
            po[r * cols + c] = pg[c] * (px[r * cols + c] - m) * inv_std[static_cast<size_t>(r)] + pb[c];
    }

    if (tracked) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        bool gx = x.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
        Tape<T>::current()->record([xn, gn, bn, on, mean, inv_std, rows, cols, gx, gg, gb, invc] {
            if (!on->has_grad()) return;
            const T* g = on->grad.data();
            const T* px2 = xn->value.data();
            const T* pg2 = gn->value.data();
            if (gg) gn->ensure_grad();
            if (gb) bn->ensure_grad();
            if (gx) xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T m = mean[static_cast<size_t>(r)];
                const T is = inv_std[static_cast<size_t>(r)];
                T sum_gg = T(0), sum_ggx = T(0);
                for (int64_t c = 0; c < cols; ++c) {
                    const T xh = (px2[r * cols + c] - m) * is;
                    const T gy = g[r * cols + c];
                    if (gg) gn->grad[static_cast<size_t>(c)] += gy * xh;
                    if (gb) bn->grad[static_cast<size_t>(c)] += gy;
                    sum_gg += gy * pg2[c];
                    sum_ggx += gy * pg2[c] * xh;
                }
                if (gx) {
                    T* d = xn->grad.data();
                    for (int64_t c = 0; c < cols; ++c) {
                        const T xh = (px2[r * cols + c] - m) * is;
                        d[r * cols + c] += is * (g[r * cols + c] * pg2[c] - sum_gg * invc - xh * sum_ggx * invc);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dropout (training-time; inverted scaling so eval is a no-op)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    const T keep_inv = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> mask = Tensor<T>::zeros(x.shape());
    T* pm = mask.ptr();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) pm[i] = rng.uniform() >= p ? keep_inv : T(0);
    return mul(x, mask);
}

}  // namespace pvada
