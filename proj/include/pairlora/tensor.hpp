#pragma once

// Dense row-major tensors with reverse-mode autodiff, sized for a small
// convolutional denoiser. Float type is a template parameter: f32 is the
// runtime type, f64 is used by gradient-check tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace pairlora {

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions below are hand-rolled because std:: distributions are
// implementation-defined and would break cross-toolchain reproducibility.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0,1)
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        uint64_t range = uint64_t(hi - lo) + 1;
        return lo + int(gen_() % range);
    }

    // standard normal via Box-Muller, second value cached
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

    // derive an independent sub-stream
    Rng fork(uint64_t tag) { return Rng(splitmix64(gen_() ^ splitmix64(tag))); }

private:
    std::mt19937_64 gen_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Grad mode (thread-local; sampling runs under NoGradGuard)
// ---------------------------------------------------------------------------

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

[[noreturn]] inline void tensor_fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline int64_t shape_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) tensor_fail("tensor: non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

namespace detail {

template <typename T>
struct Node {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated (zeroed) iff requires_grad
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// TensorT: shared handle to a graph node
// ---------------------------------------------------------------------------

template <typename T>
class TensorT {
public:
    using Node = detail::Node<T>;

    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(std::vector<int> shape, T v, bool requires_grad = false) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        int64_t n = shape_numel(shape);
        t.node_->shape = std::move(shape);
        t.node_->value.assign(size_t(n), v);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static TensorT from_data(std::vector<int> shape, std::vector<T> data,
                             bool requires_grad = false) {
        if (shape_numel(shape) != int64_t(data.size()))
            tensor_fail("tensor: data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static TensorT randn(std::vector<int> shape, Rng& rng, T stddev = T(1),
                         bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (T& v : t.node_->value) v = T(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int64_t numel() const { return int64_t(node_->value.size()); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    void set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        if (rg) node_->ensure_grad();
    }

    std::span<T> data() { return {node_->value.data(), node_->value.size()}; }
    std::span<const T> data() const { return {node_->value.data(), node_->value.size()}; }
    std::span<T> grad() {
        node_->ensure_grad();
        return {node_->grad.data(), node_->grad.size()};
    }
    std::span<const T> grad() const {
        const_cast<Node*>(node_.get())->ensure_grad();
        return {node_->grad.data(), node_->grad.size()};
    }

    T item() const {
        if (numel() != 1) tensor_fail("item(): tensor has shape " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // deep copy of the values, detached from the graph
    TensorT clone_detached() const {
        return from_data(shape(), node_->value, false);
    }

    bool all_finite() const {
        for (T v : node_->value)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;

    template <typename U>
    friend TensorT<U> make_op_result(std::vector<int> shape, const char* op,
                                     std::initializer_list<TensorT<U>> parents,
                                     std::function<void(detail::Node<U>&)> backprop);
};

template <typename T>
TensorT<T> make_op_result(std::vector<int> shape, const char* op,
                          std::initializer_list<TensorT<T>> parents,
                          std::function<void(detail::Node<T>&)> backprop) {
    TensorT<T> out = TensorT<T>::zeros(std::move(shape));
    bool needs = false;
    if (grad_mode()) {
        for (const auto& p : parents)
            if (p.requires_grad()) { needs = true; break; }
    }
    if (needs) {
        auto* n = out.node();
        n->requires_grad = true;
        n->ensure_grad();
        n->op = op;
        for (const auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backprop = std::move(backprop);
    }
    return out;
}

using Tensor = TensorT<float>;

// ---------------------------------------------------------------------------
// GEMM kernels (accumulating). Row-major.
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        T* crow = C + int64_t(i) * n;
        const T* arow = A + int64_t(i) * k;
        for (int p = 0; p < k; ++p) {
            T a = arow[p];
            const T* brow = B + int64_t(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T   (rows dotted with rows)
template <typename T>
void gemm_abt(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        const T* arow = A + int64_t(i) * k;
        T* crow = C + int64_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = B + int64_t(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_atb(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int p = 0; p < k; ++p) {
        const T* arow = A + int64_t(p) * m;
        const T* brow = B + int64_t(p) * n;
        for (int i = 0; i < m; ++i) {
            T a = arow[i];
            T* crow = C + int64_t(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        tensor_fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("add", a, b);
    auto out = make_op_result<T>(
        a.shape(), "add", {a, b}, [an = a.node(), bn = b.node()](detail::Node<T>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
            }
        });
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    return out;
}

template <typename T>
TensorT<T> scalar_mul(const TensorT<T>& a, T s) {
    auto out = make_op_result<T>(a.shape(), "scalar_mul", {a},
                                 [an = a.node(), s](detail::Node<T>& self) {
                                     if (!an->requires_grad) return;
                                     an->ensure_grad();
                                     for (size_t i = 0; i < self.grad.size(); ++i)
                                         an->grad[i] += s * self.grad[i];
                                 });
    auto ad = a.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = s * ad[i];
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& a) {
    auto out = make_op_result<T>(a.shape(), "silu", {a}, [an = a.node()](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            T x = an->value[i];
            T sig = T(1) / (T(1) + std::exp(-x));
            an->grad[i] += self.grad[i] * sig * (T(1) + x * (T(1) - sig));
        }
    });
    auto ad = a.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) {
        T x = ad[i];
        od[i] = x / (T(1) + std::exp(-x));
    }
    return out;
}

// value-only copy that blocks gradient flow (the sg[.] primitive)
template <typename T>
TensorT<T> detach(const TensorT<T>& a) {
    return TensorT<T>::from_data(a.shape(), std::vector<T>(a.data().begin(), a.data().end()));
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape("mse", a, b);
    auto ad = a.data(), bd = b.data();
    int64_t n = a.numel();
    auto out = make_op_result<T>(
        {1}, "mse", {a, b}, [an = a.node(), bn = b.node(), n](detail::Node<T>& self) {
            T g = self.grad[0] * T(2) / T(n);
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    an->grad[i] += g * (an->value[i] - bn->value[i]);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    bn->grad[i] -= g * (an->value[i] - bn->value[i]);
            }
        });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = double(ad[i]) - double(bd[i]);
        acc += d * d;
    }
    out.data()[0] = T(acc / double(n));
    return out;
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        tensor_fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    auto out = make_op_result<T>(
        {m, n}, "matmul", {a, b},
        [an = a.node(), bn = b.node(), m, k, n](detail::Node<T>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                gemm_abt(m, n, k, self.grad.data(), bn->value.data(), an->grad.data());
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                gemm_atb(n, m, k, an->value.data(), self.grad.data(), bn->grad.data());
            }
        });
    gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data());
    return out;
}

// y[N,out] = x[N,in] * w[out,in]^T + b[out]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1])
        tensor_fail("linear: shape mismatch x " + shape_str(x.shape()) + " vs w " +
                    shape_str(w.shape()));
    int N = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
    if (b.shape() != std::vector<int>{out_dim})
        tensor_fail("linear: bias shape " + shape_str(b.shape()) + " does not match w " +
                    shape_str(w.shape()));
    auto out = make_op_result<T>(
        {N, out_dim}, "linear", {x, w, b},
        [xn = x.node(), wn = w.node(), bn = b.node(), N, in, out_dim](detail::Node<T>& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                gemm_nn(N, out_dim, in, self.grad.data(), wn->value.data(), xn->grad.data());
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                gemm_atb(out_dim, N, in, self.grad.data(), xn->value.data(), wn->grad.data());
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < N; ++i)
                    for (int o = 0; o < out_dim; ++o)
                        bn->grad[o] += self.grad[size_t(i) * out_dim + o];
            }
        });
    gemm_abt(N, in, out_dim, x.data().data(), w.data().data(), out.data().data());
    auto od = out.data();
    auto bd = b.data();
    for (int i = 0; i < N; ++i)
        for (int o = 0; o < out_dim; ++o) od[size_t(i) * out_dim + o] += bd[o];
    return out;
}

// ---------------------------------------------------------------------------
// conv2d 3x3, stride 1, zero padding 1. Weights are the flattened-kernel
// matrix [cout, cin*9] so low-rank deltas attach uniformly to conv and
// linear layers.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col_3x3(const T* x, int C, int H, int W, T* col) {
    // col[(c*9 + ky*3 + kx), y*W + x]
    for (int c = 0; c < C; ++c) {
        const T* xc = x + int64_t(c) * H * W;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = col + (int64_t(c) * 9 + ky * 3 + kx) * H * W;
                for (int y = 0; y < H; ++y) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= H) {
                        std::fill(row + int64_t(y) * W, row + int64_t(y + 1) * W, T(0));
                        continue;
                    }
                    const T* src = xc + int64_t(sy) * W;
                    T* dst = row + int64_t(y) * W;
                    for (int xpos = 0; xpos < W; ++xpos) {
                        int sx = xpos + kx - 1;
                        dst[xpos] = (sx < 0 || sx >= W) ? T(0) : src[sx];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_3x3_acc(const T* col, int C, int H, int W, T* dx) {
    for (int c = 0; c < C; ++c) {
        T* xc = dx + int64_t(c) * H * W;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = col + (int64_t(c) * 9 + ky * 3 + kx) * H * W;
                for (int y = 0; y < H; ++y) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= H) continue;
                    T* dst = xc + int64_t(sy) * W;
                    const T* src = row + int64_t(y) * W;
                    for (int xpos = 0; xpos < W; ++xpos) {
                        int sx = xpos + kx - 1;
                        if (sx >= 0 && sx < W) dst[sx] += src[xpos];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d_3x3(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (x.shape().size() != 4)
        tensor_fail("conv2d_3x3: input must be [N,C,H,W], got " + shape_str(x.shape()));
    int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (w.shape().size() != 2 || w.shape()[1] != C * 9)
        tensor_fail("conv2d_3x3: weight " + shape_str(w.shape()) + " does not match input " +
                    shape_str(x.shape()) + " (want [cout," + std::to_string(C * 9) + "])");
    int cout = w.shape()[0];
    if (b.shape() != std::vector<int>{cout})
        tensor_fail("conv2d_3x3: bias shape " + shape_str(b.shape()) + " != [cout]");
    int64_t HW = int64_t(H) * W;

    auto out = make_op_result<T>(
        {N, cout, H, W}, "conv2d_3x3", {x, w, b},
        [xn = x.node(), wn = w.node(), bn = b.node(), N, C, H, W, cout,
         HW](detail::Node<T>& self) {
            std::vector<T> col(size_t(C) * 9 * HW);
            std::vector<T> dcol;
            for (int ni = 0; ni < N; ++ni) {
                const T* dy = self.grad.data() + int64_t(ni) * cout * HW;
                detail::im2col_3x3(xn->value.data() + int64_t(ni) * C * HW, C, H, W, col.data());
                if (wn->requires_grad) {
                    wn->ensure_grad();
                    gemm_abt(cout, int(HW), C * 9, dy, col.data(), wn->grad.data());
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int o = 0; o < cout; ++o) {
                        T acc = T(0);
                        const T* r = dy + int64_t(o) * HW;
                        for (int64_t p = 0; p < HW; ++p) acc += r[p];
                        bn->grad[o] += acc;
                    }
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    dcol.assign(size_t(C) * 9 * HW, T(0));
                    gemm_atb(C * 9, cout, int(HW), wn->value.data(), dy, dcol.data());
                    detail::col2im_3x3_acc(dcol.data(), C, H, W,
                                           xn->grad.data() + int64_t(ni) * C * HW);
                }
            }
        });

    std::vector<T> col(size_t(C) * 9 * HW);
    auto od = out.data();
    auto bd = b.data();
    for (int ni = 0; ni < N; ++ni) {
        detail::im2col_3x3(x.data().data() + int64_t(ni) * C * HW, C, H, W, col.data());
        T* y = od.data() + int64_t(ni) * cout * HW;
        gemm_nn(cout, C * 9, int(HW), w.data().data(), col.data(), y);
        for (int o = 0; o < cout; ++o) {
            T bias = bd[o];
            T* r = y + int64_t(o) * HW;
            for (int64_t p = 0; p < HW; ++p) r[p] += bias;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling / resampling / concat / broadcast
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> avg_pool2(const TensorT<T>& x) {
    if (x.shape().size() != 4 || x.shape()[2] % 2 || x.shape()[3] % 2)
        tensor_fail("avg_pool2: need [N,C,2h,2w], got " + shape_str(x.shape()));
    int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int Ho = H / 2, Wo = W / 2;
    auto out = make_op_result<T>(
        {N, C, Ho, Wo}, "avg_pool2", {x},
        [xn = x.node(), N, C, H, W, Ho, Wo](detail::Node<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int nc = 0; nc < N * C; ++nc) {
                const T* gy = self.grad.data() + int64_t(nc) * Ho * Wo;
                T* gx = xn->grad.data() + int64_t(nc) * H * W;
                for (int y = 0; y < Ho; ++y)
                    for (int xpos = 0; xpos < Wo; ++xpos) {
                        T g = gy[int64_t(y) * Wo + xpos] * T(0.25);
                        gx[int64_t(2 * y) * W + 2 * xpos] += g;
                        gx[int64_t(2 * y) * W + 2 * xpos + 1] += g;
                        gx[int64_t(2 * y + 1) * W + 2 * xpos] += g;
                        gx[int64_t(2 * y + 1) * W + 2 * xpos + 1] += g;
                    }
            }
        });
    auto xd = x.data();
    auto od = out.data();
    for (int nc = 0; nc < N * C; ++nc) {
        const T* src = xd.data() + int64_t(nc) * H * W;
        T* dst = od.data() + int64_t(nc) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int xpos = 0; xpos < Wo; ++xpos)
                dst[int64_t(y) * Wo + xpos] =
                    (src[int64_t(2 * y) * W + 2 * xpos] + src[int64_t(2 * y) * W + 2 * xpos + 1] +
                     src[int64_t(2 * y + 1) * W + 2 * xpos] +
                     src[int64_t(2 * y + 1) * W + 2 * xpos + 1]) *
                    T(0.25);
    }
    return out;
}

template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& x) {
    if (x.shape().size() != 4)
        tensor_fail("upsample_nearest2: need [N,C,H,W], got " + shape_str(x.shape()));
    int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int Ho = H * 2, Wo = W * 2;
    auto out = make_op_result<T>(
        {N, C, Ho, Wo}, "upsample_nearest2", {x},
        [xn = x.node(), N, C, H, W, Ho, Wo](detail::Node<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int nc = 0; nc < N * C; ++nc) {
                const T* gy = self.grad.data() + int64_t(nc) * Ho * Wo;
                T* gx = xn->grad.data() + int64_t(nc) * H * W;
                for (int y = 0; y < H; ++y)
                    for (int xpos = 0; xpos < W; ++xpos)
                        gx[int64_t(y) * W + xpos] +=
                            gy[int64_t(2 * y) * Wo + 2 * xpos] +
                            gy[int64_t(2 * y) * Wo + 2 * xpos + 1] +
                            gy[int64_t(2 * y + 1) * Wo + 2 * xpos] +
                            gy[int64_t(2 * y + 1) * Wo + 2 * xpos + 1];
            }
        });
    auto xd = x.data();
    auto od = out.data();
    for (int nc = 0; nc < N * C; ++nc) {
        const T* src = xd.data() + int64_t(nc) * H * W;
        T* dst = od.data() + int64_t(nc) * Ho * Wo;
        for (int y = 0; y < H; ++y)
            for (int xpos = 0; xpos < W; ++xpos) {
                T v = src[int64_t(y) * W + xpos];
                dst[int64_t(2 * y) * Wo + 2 * xpos] = v;
                dst[int64_t(2 * y) * Wo + 2 * xpos + 1] = v;
                dst[int64_t(2 * y + 1) * Wo + 2 * xpos] = v;
                dst[int64_t(2 * y + 1) * Wo + 2 * xpos + 1] = v;
            }
    }
    return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape().size() != 4 || b.shape().size() != 4 || a.shape()[0] != b.shape()[0] ||
        a.shape()[2] != b.shape()[2] || a.shape()[3] != b.shape()[3])
        tensor_fail("concat_channels: incompatible shapes " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    int N = a.shape()[0], Ca = a.shape()[1], Cb = b.shape()[1];
    int H = a.shape()[2], W = a.shape()[3];
    int64_t HW = int64_t(H) * W;
    auto out = make_op_result<T>(
        {N, Ca + Cb, H, W}, "concat_channels", {a, b},
        [an = a.node(), bn = b.node(), N, Ca, Cb, HW](detail::Node<T>& self) {
            for (int ni = 0; ni < N; ++ni) {
                const T* g = self.grad.data() + int64_t(ni) * (Ca + Cb) * HW;
                if (an->requires_grad) {
                    an->ensure_grad();
                    T* ga = an->grad.data() + int64_t(ni) * Ca * HW;
                    for (int64_t i = 0; i < Ca * HW; ++i) ga[i] += g[i];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    T* gb = bn->grad.data() + int64_t(ni) * Cb * HW;
                    const T* gsrc = g + Ca * HW;
                    for (int64_t i = 0; i < Cb * HW; ++i) gb[i] += gsrc[i];
                }
            }
        });
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.data();
    for (int ni = 0; ni < N; ++ni) {
        std::copy_n(ad.data() + int64_t(ni) * Ca * HW, Ca * HW,
                    od.data() + int64_t(ni) * (Ca + Cb) * HW);
        std::copy_n(bd.data() + int64_t(ni) * Cb * HW, Cb * HW,
                    od.data() + int64_t(ni) * (Ca + Cb) * HW + Ca * HW);
    }
    return out;
}

// x[N,C,H,W] + v[N,C] broadcast over spatial dims
template <typename T>
TensorT<T> add_channel_vec(const TensorT<T>& x, const TensorT<T>& v) {
    if (x.shape().size() != 4 || v.shape().size() != 2 || x.shape()[0] != v.shape()[0] ||
        x.shape()[1] != v.shape()[1])
        tensor_fail("add_channel_vec: shape mismatch " + shape_str(x.shape()) + " vs " +
                    shape_str(v.shape()));
    int N = x.shape()[0], C = x.shape()[1];
    int64_t HW = int64_t(x.shape()[2]) * x.shape()[3];
    auto out = make_op_result<T>(
        x.shape(), "add_channel_vec", {x, v},
        [xn = x.node(), vn = v.node(), N, C, HW](detail::Node<T>& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int ni = 0; ni < N; ++ni)
                    for (int c = 0; c < C; ++c) {
                        const T* g = self.grad.data() + (int64_t(ni) * C + c) * HW;
                        T acc = T(0);
                        for (int64_t p = 0; p < HW; ++p) acc += g[p];
                        vn->grad[size_t(ni) * C + c] += acc;
                    }
            }
        });
    auto xd = x.data();
    auto vd = v.data();
    auto od = out.data();
    for (int ni = 0; ni < N; ++ni)
        for (int c = 0; c < C; ++c) {
            T bias = vd[size_t(ni) * C + c];
            const T* src = xd.data() + (int64_t(ni) * C + c) * HW;
            T* dst = od.data() + (int64_t(ni) * C + c) * HW;
            for (int64_t p = 0; p < HW; ++p) dst[p] = src[p] + bias;
        }
    return out;
}

// v[N,D] -> [N,D,H,W] by replication
template <typename T>
TensorT<T> broadcast_spatial(const TensorT<T>& v, int H, int W) {
    if (v.shape().size() != 2)
        tensor_fail("broadcast_spatial: need [N,D], got " + shape_str(v.shape()));
    int N = v.shape()[0], D = v.shape()[1];
    int64_t HW = int64_t(H) * W;
    auto out = make_op_result<T>(
        {N, D, H, W}, "broadcast_spatial", {v},
        [vn = v.node(), N, D, HW](detail::Node<T>& self) {
            if (!vn->requires_grad) return;
            vn->ensure_grad();
            for (int64_t nd = 0; nd < int64_t(N) * D; ++nd) {
                const T* g = self.grad.data() + nd * HW;
                T acc = T(0);
                for (int64_t p = 0; p < HW; ++p) acc += g[p];
                vn->grad[size_t(nd)] += acc;
            }
        });
    auto vd = v.data();
    auto od = out.data();
    for (int64_t nd = 0; nd < int64_t(N) * D; ++nd)
        std::fill_n(od.data() + nd * HW, HW, vd[size_t(nd)]);
    return out;
}

// ---------------------------------------------------------------------------
// layernorm over the channel axis of [N,C,H,W], learned per-channel affine
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> layernorm_channels(const TensorT<T>& x, const TensorT<T>& gamma,
                              const TensorT<T>& beta, T eps = T(1e-5)) {
    if (x.shape().size() != 4)
        tensor_fail("layernorm: need [N,C,H,W], got " + shape_str(x.shape()));
    int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (gamma.shape() != std::vector<int>{C} || beta.shape() != std::vector<int>{C})
        tensor_fail("layernorm: affine params " + shape_str(gamma.shape()) + "/" +
                    shape_str(beta.shape()) + " do not match channels " + std::to_string(C));
    int64_t HW = int64_t(H) * W;
    int64_t CHW = C * HW;

    auto out = make_op_result<T>(
        x.shape(), "layernorm", {x, gamma, beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), N, C, HW, CHW,
         eps](detail::Node<T>& self) {
            for (int ni = 0; ni < N; ++ni) {
                for (int64_t p = 0; p < HW; ++p) {
                    const T* xb = xn->value.data() + int64_t(ni) * CHW;
                    const T* gy = self.grad.data() + int64_t(ni) * CHW;
                    T mean = T(0), var = T(0);
                    for (int c = 0; c < C; ++c) mean += xb[c * HW + p];
                    mean /= T(C);
                    for (int c = 0; c < C; ++c) {
                        T d = xb[c * HW + p] - mean;
                        var += d * d;
                    }
                    var /= T(C);
                    T inv = T(1) / std::sqrt(var + eps);
                    T sum_gdy = T(0), sum_gdyx = T(0);
                    for (int c = 0; c < C; ++c) {
                        T xhat = (xb[c * HW + p] - mean) * inv;
                        T gdy = gn->value[size_t(c)] * gy[c * HW + p];
                        sum_gdy += gdy;
                        sum_gdyx += gdy * xhat;
                    }
                    if (gn->requires_grad || bn->requires_grad) {
                        if (gn->requires_grad) gn->ensure_grad();
                        if (bn->requires_grad) bn->ensure_grad();
                        for (int c = 0; c < C; ++c) {
                            T xhat = (xb[c * HW + p] - mean) * inv;
                            if (gn->requires_grad) gn->grad[size_t(c)] += gy[c * HW + p] * xhat;
                            if (bn->requires_grad) bn->grad[size_t(c)] += gy[c * HW + p];
                        }
                    }
                    if (xn->requires_grad) {
                        xn->ensure_grad();
                        T* gx = xn->grad.data() + int64_t(ni) * CHW;
                        for (int c = 0; c < C; ++c) {
                            T xhat = (xb[c * HW + p] - mean) * inv;
                            T gdy = gn->value[size_t(c)] * gy[c * HW + p];
                            gx[c * HW + p] +=
                                (gdy - sum_gdy / T(C) - xhat * sum_gdyx / T(C)) * inv;
                        }
                    }
                }
            }
        });

    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    auto od = out.data();
    for (int ni = 0; ni < N; ++ni) {
        const T* xb = xd.data() + int64_t(ni) * CHW;
        T* ob = od.data() + int64_t(ni) * CHW;
        for (int64_t p = 0; p < HW; ++p) {
            T mean = T(0), var = T(0);
            for (int c = 0; c < C; ++c) mean += xb[c * HW + p];
            mean /= T(C);
            for (int c = 0; c < C; ++c) {
                T d = xb[c * HW + p] - mean;
                var += d * d;
            }
            var /= T(C);
            T inv = T(1) / std::sqrt(var + eps);
            for (int c = 0; c < C; ++c)
                ob[c * HW + p] = (xb[c * HW + p] - mean) * inv * gd[size_t(c)] + bd[size_t(c)];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// embedding lookup with mean pooling: table[V,D], ids flat [N*L] -> [N,D].
// Used for both prompt pooling (L = prompt length) and timestep lookup (L=1).
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> embed_mean(const TensorT<T>& table, const std::vector<int>& ids, int L) {
    if (table.shape().size() != 2)
        tensor_fail("embed_mean: table must be [V,D], got " + shape_str(table.shape()));
    if (L <= 0 || ids.size() % size_t(L) != 0)
        tensor_fail("embed_mean: ids length " + std::to_string(ids.size()) +
                    " not divisible by L=" + std::to_string(L));
    int V = table.shape()[0], D = table.shape()[1];
    int N = int(ids.size() / size_t(L));
    for (int id : ids)
        if (id < 0 || id >= V)
            tensor_fail("embed_mean: id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(V));
    auto out = make_op_result<T>(
        {N, D}, "embed_mean", {table},
        [tn = table.node(), ids, L, D, N](detail::Node<T>& self) {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            T scale = T(1) / T(L);
            for (int ni = 0; ni < N; ++ni) {
                const T* g = self.grad.data() + int64_t(ni) * D;
                for (int l = 0; l < L; ++l) {
                    T* row = tn->grad.data() + int64_t(ids[size_t(ni) * L + l]) * D;
                    for (int d = 0; d < D; ++d) row[d] += g[d] * scale;
                }
            }
        });
    auto td = table.data();
    auto od = out.data();
    T scale = T(1) / T(L);
    for (int ni = 0; ni < N; ++ni) {
        T* o = od.data() + int64_t(ni) * D;
        for (int l = 0; l < L; ++l) {
            const T* row = td.data() + int64_t(ids[size_t(ni) * L + l]) * D;
            for (int d = 0; d < D; ++d) o[d] += row[d] * scale;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
        tensor_fail("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
        tensor_fail("backward: loss does not require grad (no trainable inputs on its path)");

    using Node = detail::Node<T>;
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    // iterative post-order DFS over parent edges
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    // zero non-leaf grads so repeated backward calls accumulate only into
    // leaves (params/inputs), never through stale intermediate grads
    for (Node* n : topo) {
        if (!n->parents.empty()) {
            n->ensure_grad();
            std::fill(n->grad.begin(), n->grad.end(), T(0));
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += T(1);

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (!n->parents.empty() && n->backprop) n->backprop(*n);
    }
}

}  // namespace pairlora
