#include "eqemu/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "eqemu/error.hpp"

namespace eqemu::ad {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

struct FaultState {
    std::string op;
    double factor = 1.0;
    bool active = false;
};

FaultState& fault() {
    static FaultState state;
    return state;
}

thread_local int no_grad_depth = 0;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs, const char* op,
                      std::function<void(Node<T>&)> fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    const bool rg = no_grad_depth == 0 && std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
    if (rg) {
        node->requires_grad = true;
        for (auto& t : inputs) node->parents.push_back(t.defined() ? t.node_ptr() : nullptr);
        node->backward = std::move(fn);
    }
    return Tensor<T>(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
template <class T>
T* grad_of(Node<T>& self, std::size_t i) {
    auto& p = self.parents[i];
    return (p && p->requires_grad) ? p->grad_buffer().data() : nullptr;
}

template <class T>
const T* value_of(Node<T>& self, std::size_t i) {
    return self.parents[i]->value.data();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw invalid_argument(what);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                        shape_string(b.shape()));
}

// Truncated real DFT tables for length n keeping modes 0..k-1.
template <class T>
struct DftTable {
    std::size_t n = 0, k = 0;
    std::vector<T> cos_nk, sin_nk;  // [n][k]
    std::vector<T> cos_kn, sin_kn;  // [k][n]
    std::vector<T> inv_weight;      // irfft weight / n per mode
};

template <class T>
std::shared_ptr<const DftTable<T>> dft_table(std::size_t n, std::size_t k) {
    static std::mutex mutex;
    static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const DftTable<T>>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{n, k}];
    if (!slot) {
        auto t = std::make_shared<DftTable<T>>();
        t->n = n;
        t->k = k;
        t->cos_nk.resize(n * k);
        t->sin_nk.resize(n * k);
        t->cos_kn.resize(n * k);
        t->sin_kn.resize(n * k);
        t->inv_weight.resize(k);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t m = 0; m < k; ++m) {
                const double angle = 2.0 * std::numbers::pi * static_cast<double>((j * m) % n) / static_cast<double>(n);
                const T c = static_cast<T>(std::cos(angle));
                const T s = static_cast<T>(std::sin(angle));
                t->cos_nk[j * k + m] = t->cos_kn[m * n + j] = c;
                t->sin_nk[j * k + m] = t->sin_kn[m * n + j] = s;
            }
        }
        for (std::size_t m = 0; m < k; ++m) {
            const bool single = m == 0 || 2 * m == n;
            t->inv_weight[m] = static_cast<T>((single ? 1.0 : 2.0) / static_cast<double>(n));
        }
        slot = std::move(t);
    }
    return slot;
}

// X_k = sum_j x_j exp(-2 pi i jk/n) for each of `rows` rows (accumulates).
template <class T>
void dft_rows(const T* x, std::size_t rows, const DftTable<T>& t, T* re, T* im) {
    const std::size_t n = t.n, k = t.k;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * n;
        T* rr = re + r * k;
        T* ir = im + r * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T v = xr[j];
            const T* c = &t.cos_nk[j * k];
            const T* s = &t.sin_nk[j * k];
            for (std::size_t m = 0; m < k; ++m) {
                rr[m] += v * c[m];
                ir[m] -= v * s[m];
            }
        }
    }
}

// y_j += sum_m (re_m cos - im_m sin) * scale_m; scale is inv_weight for an
// inverse transform and 1 for the adjoint of dft_rows.
template <class T>
void synth_rows(const T* re, const T* im, std::size_t rows, const DftTable<T>& t, bool inverse, T* y) {
    const std::size_t n = t.n, k = t.k;
    for (std::size_t r = 0; r < rows; ++r) {
        T* yr = y + r * n;
        for (std::size_t m = 0; m < k; ++m) {
            const T w = inverse ? t.inv_weight[m] : T(1);
            const T a = re[r * k + m] * w;
            const T b = im[r * k + m] * w;
            if (a == T(0) && b == T(0)) continue;
            const T* c = &t.cos_kn[m * n];
            const T* s = &t.sin_kn[m * n];
            for (std::size_t j = 0; j < n; ++j) yr[j] += a * c[j] - b * s[j];
        }
    }
}

// Adjoint of the inverse transform: (gre, gim) = weight * dft(gy).
template <class T>
void inverse_adjoint_rows(const T* gy, std::size_t rows, const DftTable<T>& t, T* gre, T* gim) {
    std::vector<T> re(rows * t.k, T(0)), im(rows * t.k, T(0));
    dft_rows(gy, rows, t, re.data(), im.data());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t m = 0; m < t.k; ++m) {
            gre[r * t.k + m] += re[r * t.k + m] * t.inv_weight[m];
            gim[r * t.k + m] += im[r * t.k + m] * t.inv_weight[m];
        }
}

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <class T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
    require(ad::numel(shape) == values.size(), "tensor: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
}

template <class T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
    auto t = constant(std::move(shape), std::move(values));
    t.node().requires_grad = true;
    return t;
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    const auto n = ad::numel(shape);
    auto t = constant(std::move(shape), std::vector<T>(n, T(0)));
    t.node().requires_grad = requires_grad;
    return t;
}

template <class T>
T Tensor<T>::item() const {
    require(numel() == 1, "item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

template <class T>
void backward(const Tensor<T>& output, std::span<const T> seed) {
    require(seed.size() == output.numel(), "backward: seed size mismatch");
    if (!output.requires_grad()) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{&output.node(), 0}};
    seen.insert(&output.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    auto& g = output.node().grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    const auto& f = fault();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (!node->backward || node->grad.empty()) continue;
        if (f.active && f.op == node->op)
            for (auto& v : node->grad) v = static_cast<T>(v * f.factor);
        node->backward(*node);
    }
}

template <class T>
void backward(const Tensor<T>& loss) {
    require(loss.numel() == 1, "backward: loss must be a scalar, got " + shape_string(loss.shape()));
    const T one = T(1);
    backward(loss, std::span<const T>(&one, 1));
}

ScopedFault::ScopedFault(std::string op, double factor) {
    auto& f = fault();
    f.op = std::move(op);
    f.factor = factor;
    f.active = true;
}

ScopedFault::~ScopedFault() { fault() = FaultState{}; }

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
    return make_result<T>(a.shape(), std::move(y), {a, b}, "add", [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (T* g = grad_of(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
    return make_result<T>(a.shape(), std::move(y), {a, b}, "sub", [](Node<T>& self) {
        if (T* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
    return make_result<T>(a.shape(), std::move(y), {a, b}, "mul", [](Node<T>& self) {
        const T* av = value_of(self, 0);
        const T* bv = value_of(self, 1);
        if (T* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        if (T* g = grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * s;
    return make_result<T>(a.shape(), std::move(y), {a}, "scale", [s](Node<T>& self) {
        if (T* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
    });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + s;
    return make_result<T>(a.shape(), std::move(y), {a}, "add_scalar", [](Node<T>& self) {
        if (T* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * sigmoid(x.data()[i]);
    return make_result<T>(x.shape(), std::move(y), {x}, "silu", [](Node<T>& self) {
        const T* xv = value_of(self, 0);
        if (T* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T s = sigmoid(xv[i]);
                g[i] += self.grad[i] * s * (T(1) + xv[i] * (T(1) - s));
            }
    });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T r2 = static_cast<T>(std::numbers::sqrt2);
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const T v = x.data()[i];
        y[i] = T(0.5) * v * (T(1) + std::erf(v / r2));
    }
    return make_result<T>(x.shape(), std::move(y), {x}, "gelu", [r2](Node<T>& self) {
        const T* xv = value_of(self, 0);
        const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        if (T* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T v = xv[i];
                const T d = T(0.5) * (T(1) + std::erf(v / r2)) + v * inv_sqrt_2pi * std::exp(-T(0.5) * v * v);
                g[i] += self.grad[i] * d;
            }
    });
}

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
    return act == Activation::SiLU ? silu(x) : gelu(x);
}

// --------------------------------------------------------------------- layout

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    require(numel(shape) == x.numel(), "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
    std::vector<T> y(x.data().begin(), x.data().end());
    return make_result<T>(std::move(shape), std::move(y), {x}, "reshape", [](Node<T>& self) {
        if (T* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> broadcast_space(const Tensor<T>& x, std::size_t n) {
    require(x.rank() == 2, "broadcast_space: expected [B, F], got " + shape_string(x.shape()));
    const std::size_t rows = x.numel();
    std::vector<T> y(rows * n);
    for (std::size_t r = 0; r < rows; ++r) std::fill_n(&y[r * n], n, x.data()[r]);
    return make_result<T>({x.dim(0), x.dim(1), n}, std::move(y), {x}, "broadcast_space", [rows, n](Node<T>& self) {
        if (T* g = grad_of(self, 0))
            for (std::size_t r = 0; r < rows; ++r) {
                T acc = 0;
                for (std::size_t j = 0; j < n; ++j) acc += self.grad[r * n + j];
                g[r] += acc;
            }
    });
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const std::size_t b = parts[0].dim(0), n = parts[0].dim(2);
    std::size_t c_total = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        require(p.rank() == 3 && p.dim(0) == b && p.dim(2) == n,
                "concat_channels: incompatible shape " + shape_string(p.shape()));
        offsets.push_back(c_total);
        c_total += p.dim(1);
    }
    std::vector<T> y(b * c_total * n);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::size_t c = parts[i].dim(1);
        for (std::size_t bi = 0; bi < b; ++bi)
            std::copy_n(&parts[i].data()[bi * c * n], c * n, &y[(bi * c_total + offsets[i]) * n]);
    }
    return make_result<T>({b, c_total, n}, std::move(y), parts, "concat_channels",
                          [b, n, c_total, offsets](Node<T>& self) {
                              for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                  T* g = grad_of(self, i);
                                  if (!g) continue;
                                  const std::size_t c = self.parents[i]->shape[1];
                                  for (std::size_t bi = 0; bi < b; ++bi) {
                                      const T* src = &self.grad[(bi * c_total + offsets[i]) * n];
                                      T* dst = g + bi * c * n;
                                      for (std::size_t j = 0; j < c * n; ++j) dst[j] += src[j];
                                  }
                              }
                          });
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t start, std::size_t count) {
    require(x.rank() == 3 && start + count <= x.dim(1), "slice_channels: out of range on " + shape_string(x.shape()));
    const std::size_t b = x.dim(0), c = x.dim(1), n = x.dim(2);
    std::vector<T> y(b * count * n);
    for (std::size_t bi = 0; bi < b; ++bi) std::copy_n(&x.data()[(bi * c + start) * n], count * n, &y[bi * count * n]);
    return make_result<T>({b, count, n}, std::move(y), {x}, "slice_channels", [=](Node<T>& self) {
        if (T* g = grad_of(self, 0))
            for (std::size_t bi = 0; bi < b; ++bi) {
                T* dst = g + (bi * c + start) * n;
                const T* src = &self.grad[bi * count * n];
                for (std::size_t j = 0; j < count * n; ++j) dst[j] += src[j];
            }
    });
}

// --------------------------------------------------------------------- layers

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    require(w.rank() == 2 && x.rank() >= 1 && x.shape().back() == w.dim(1),
            "linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
    const std::size_t in = w.dim(1), out = w.dim(0), rows = x.numel() / in;
    if (b.defined()) require(b.numel() == out, "linear: bias size mismatch");
    std::vector<T> y(rows * out);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
            T acc = b.defined() ? b.data()[o] : T(0);
            for (std::size_t i = 0; i < in; ++i) acc += w.data()[o * in + i] * x.data()[r * in + i];
            y[r * out + o] = acc;
        }
    Shape shape = x.shape();
    shape.back() = out;
    return make_result<T>(std::move(shape), std::move(y), {x, w, b}, "linear", [=](Node<T>& self) {
        const T* xv = value_of(self, 0);
        const T* wv = value_of(self, 1);
        T* gx = grad_of(self, 0);
        T* gw = grad_of(self, 1);
        T* gb = self.parents[2] ? grad_of(self, 2) : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out; ++o) {
                const T g = self.grad[r * out + o];
                if (gb) gb[o] += g;
                if (gx)
                    for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += g * wv[o * in + i];
                if (gw)
                    for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += g * xv[r * in + i];
            }
    });
}

namespace {

// idx[k * m_out + m] = (m * stride + k - K/2) mod n
std::vector<std::size_t> tap_indices(std::size_t n, std::size_t m_out, std::size_t taps, std::size_t stride) {
    std::vector<std::size_t> idx(taps * m_out);
    const auto half = static_cast<long long>(taps / 2);
    const auto nn = static_cast<long long>(n);
    for (std::size_t k = 0; k < taps; ++k)
        for (std::size_t m = 0; m < m_out; ++m) {
            long long j = static_cast<long long>(m * stride + k) - half;
            j = ((j % nn) + nn) % nn;
            idx[k * m_out + m] = static_cast<std::size_t>(j);
        }
    return idx;
}

}  // namespace

template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride) {
    require(x.rank() == 3 && w.rank() == 3 && w.dim(1) == x.dim(1) && stride >= 1 && x.dim(2) % stride == 0,
            "conv1d: input " + shape_string(x.shape()) + " weight " + shape_string(w.shape()) + " stride " +
                std::to_string(stride));
    const std::size_t bn = x.dim(0), cin = x.dim(1), n = x.dim(2), cout = w.dim(0), taps = w.dim(2);
    const std::size_t m_out = n / stride;
    if (b.defined()) require(b.numel() == cout, "conv1d: bias size mismatch");
    auto idx = tap_indices(n, m_out, taps, stride);
    const bool pointwise = taps == 1 && stride == 1;
    std::vector<T> y(bn * cout * m_out, T(0));
    const T* xv = x.data().data();
    const T* wv = w.data().data();
    for (std::size_t bi = 0; bi < bn; ++bi)
        for (std::size_t o = 0; o < cout; ++o) {
            T* yr = &y[(bi * cout + o) * m_out];
            if (b.defined()) std::fill_n(yr, m_out, b.data()[o]);
            for (std::size_t i = 0; i < cin; ++i) {
                const T* xr = xv + (bi * cin + i) * n;
                for (std::size_t k = 0; k < taps; ++k) {
                    const T wk = wv[(o * cin + i) * taps + k];
                    if (pointwise) {
                        for (std::size_t m = 0; m < m_out; ++m) yr[m] += wk * xr[m];
                    } else {
                        const std::size_t* ik = &idx[k * m_out];
                        for (std::size_t m = 0; m < m_out; ++m) yr[m] += wk * xr[ik[m]];
                    }
                }
            }
        }
    return make_result<T>({bn, cout, m_out}, std::move(y), {x, w, b}, "conv1d",
                          [=, idx = std::move(idx)](Node<T>& self) {
                              const T* xv = value_of(self, 0);
                              const T* wv = value_of(self, 1);
                              T* gx = grad_of(self, 0);
                              T* gw = grad_of(self, 1);
                              T* gb = self.parents[2] ? grad_of(self, 2) : nullptr;
                              for (std::size_t bi = 0; bi < bn; ++bi)
                                  for (std::size_t o = 0; o < cout; ++o) {
                                      const T* gy = &self.grad[(bi * cout + o) * m_out];
                                      if (gb)
                                          for (std::size_t m = 0; m < m_out; ++m) gb[o] += gy[m];
                                      for (std::size_t i = 0; i < cin; ++i) {
                                          const T* xr = xv + (bi * cin + i) * n;
                                          T* gxr = gx ? gx + (bi * cin + i) * n : nullptr;
                                          for (std::size_t k = 0; k < taps; ++k) {
                                              const std::size_t wi = (o * cin + i) * taps + k;
                                              const std::size_t* ik = &idx[k * m_out];
                                              if (gxr) {
                                                  const T wk = wv[wi];
                                                  if (pointwise)
                                                      for (std::size_t m = 0; m < m_out; ++m) gxr[m] += wk * gy[m];
                                                  else
                                                      for (std::size_t m = 0; m < m_out; ++m) gxr[ik[m]] += wk * gy[m];
                                              }
                                              if (gw) {
                                                  T acc = 0;
                                                  if (pointwise)
                                                      for (std::size_t m = 0; m < m_out; ++m) acc += gy[m] * xr[m];
                                                  else
                                                      for (std::size_t m = 0; m < m_out; ++m) acc += gy[m] * xr[ik[m]];
                                                  gw[wi] += acc;
                                              }
                                          }
                                      }
                                  }
                          });
}

template <class T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride) {
    require(x.rank() == 3 && w.rank() == 3 && w.dim(0) == x.dim(1) && stride >= 1,
            "conv_transpose1d: input " + shape_string(x.shape()) + " weight " + shape_string(w.shape()));
    const std::size_t bn = x.dim(0), cin = x.dim(1), m_in = x.dim(2), cout = w.dim(1), taps = w.dim(2);
    const std::size_t n = m_in * stride;
    if (b.defined()) require(b.numel() == cout, "conv_transpose1d: bias size mismatch");
    auto idx = tap_indices(n, m_in, taps, stride);
    std::vector<T> y(bn * cout * n, T(0));
    const T* xv = x.data().data();
    const T* wv = w.data().data();
    for (std::size_t bi = 0; bi < bn; ++bi)
        for (std::size_t o = 0; o < cout; ++o) {
            T* yr = &y[(bi * cout + o) * n];
            if (b.defined()) std::fill_n(yr, n, b.data()[o]);
            for (std::size_t i = 0; i < cin; ++i) {
                const T* xr = xv + (bi * cin + i) * m_in;
                for (std::size_t k = 0; k < taps; ++k) {
                    const T wk = wv[(i * cout + o) * taps + k];
                    const std::size_t* ik = &idx[k * m_in];
                    for (std::size_t m = 0; m < m_in; ++m) yr[ik[m]] += wk * xr[m];
                }
            }
        }
    return make_result<T>({bn, cout, n}, std::move(y), {x, w, b}, "conv_transpose1d",
                          [=, idx = std::move(idx)](Node<T>& self) {
                              const T* xv = value_of(self, 0);
                              const T* wv = value_of(self, 1);
                              T* gx = grad_of(self, 0);
                              T* gw = grad_of(self, 1);
                              T* gb = self.parents[2] ? grad_of(self, 2) : nullptr;
                              for (std::size_t bi = 0; bi < bn; ++bi)
                                  for (std::size_t o = 0; o < cout; ++o) {
                                      const T* gy = &self.grad[(bi * cout + o) * n];
                                      if (gb)
                                          for (std::size_t j = 0; j < n; ++j) gb[o] += gy[j];
                                      for (std::size_t i = 0; i < cin; ++i) {
                                          const T* xr = xv + (bi * cin + i) * m_in;
                                          T* gxr = gx ? gx + (bi * cin + i) * m_in : nullptr;
                                          for (std::size_t k = 0; k < taps; ++k) {
                                              const std::size_t wi = (i * cout + o) * taps + k;
                                              const std::size_t* ik = &idx[k * m_in];
                                              if (gxr)
                                                  for (std::size_t m = 0; m < m_in; ++m) gxr[m] += wv[wi] * gy[ik[m]];
                                              if (gw) {
                                                  T acc = 0;
                                                  for (std::size_t m = 0; m < m_in; ++m) acc += xr[m] * gy[ik[m]];
                                                  gw[wi] += acc;
                                              }
                                          }
                                      }
                                  }
                          });
}

template <class T>
Tensor<T> spectral_conv(const Tensor<T>& x, const Tensor<T>& w) {
    require(x.rank() == 3, "spectral_conv: input must be [B, C, N], got " + shape_string(x.shape()));
    const std::size_t bn = x.dim(0), cin = x.dim(1), n = x.dim(2);
    const bool per_sample = w.rank() == 5;
    require((w.rank() == 4 || per_sample) && w.shape().back() == 2,
            "spectral_conv: weight must be [Cin, Cout, K, 2] or [B, Cin, Cout, K, 2], got " + shape_string(w.shape()));
    const std::size_t off = per_sample ? 1 : 0;
    if (per_sample) require(w.dim(0) == bn, "spectral_conv: per-sample weight batch mismatch");
    require(w.dim(off) == cin, "spectral_conv: channel mismatch " + shape_string(x.shape()) + " vs " + shape_string(w.shape()));
    const std::size_t cout = w.dim(off + 1), k = w.dim(off + 2);
    require(k >= 1 && k <= n / 2 + 1, "spectral_conv: " + std::to_string(k) + " modes exceed grid of " + std::to_string(n));
    auto table = dft_table<T>(n, k);
    const std::size_t wstride = cin * cout * k * 2;

    std::vector<T> xre(bn * cin * k, T(0)), xim(bn * cin * k, T(0));
    dft_rows(x.data().data(), bn * cin, *table, xre.data(), xim.data());
    std::vector<T> yre(bn * cout * k, T(0)), yim(bn * cout * k, T(0));
    const T* wv = w.data().data();
    for (std::size_t bi = 0; bi < bn; ++bi) {
        const T* wb = wv + (per_sample ? bi * wstride : 0);
        for (std::size_t i = 0; i < cin; ++i) {
            const T* ar = &xre[(bi * cin + i) * k];
            const T* ai = &xim[(bi * cin + i) * k];
            for (std::size_t o = 0; o < cout; ++o) {
                const T* wio = wb + (i * cout + o) * k * 2;
                T* br = &yre[(bi * cout + o) * k];
                T* bim = &yim[(bi * cout + o) * k];
                for (std::size_t m = 0; m < k; ++m) {
                    const T wr = wio[2 * m], wi = wio[2 * m + 1];
                    br[m] += ar[m] * wr - ai[m] * wi;
                    bim[m] += ar[m] * wi + ai[m] * wr;
                }
            }
        }
    }
    std::vector<T> y(bn * cout * n, T(0));
    synth_rows(yre.data(), yim.data(), bn * cout, *table, true, y.data());
    return make_result<T>(
        {bn, cout, n}, std::move(y), {x, w}, "spectral_conv",
        [=, xre = std::move(xre), xim = std::move(xim)](Node<T>& self) {
            std::vector<T> gre(bn * cout * k, T(0)), gim(bn * cout * k, T(0));
            inverse_adjoint_rows(self.grad.data(), bn * cout, *table, gre.data(), gim.data());
            const T* wv = value_of(self, 1);
            T* gx = grad_of(self, 0);
            T* gw = grad_of(self, 1);
            std::vector<T> gxre, gxim;
            if (gx) {
                gxre.assign(bn * cin * k, T(0));
                gxim.assign(bn * cin * k, T(0));
            }
            for (std::size_t bi = 0; bi < bn; ++bi) {
                const std::size_t wo = per_sample ? bi * wstride : 0;
                for (std::size_t i = 0; i < cin; ++i) {
                    const T* ar = &xre[(bi * cin + i) * k];
                    const T* ai = &xim[(bi * cin + i) * k];
                    for (std::size_t o = 0; o < cout; ++o) {
                        const T* wio = wv + wo + (i * cout + o) * k * 2;
                        const T* hr = &gre[(bi * cout + o) * k];
                        const T* hi = &gim[(bi * cout + o) * k];
                        if (gx) {
                            T* xr_ = &gxre[(bi * cin + i) * k];
                            T* xi_ = &gxim[(bi * cin + i) * k];
                            for (std::size_t m = 0; m < k; ++m) {
                                const T wr = wio[2 * m], wi = wio[2 * m + 1];
                                xr_[m] += hr[m] * wr + hi[m] * wi;
                                xi_[m] += -hr[m] * wi + hi[m] * wr;
                            }
                        }
                        if (gw) {
                            T* gwio = gw + wo + (i * cout + o) * k * 2;
                            for (std::size_t m = 0; m < k; ++m) {
                                gwio[2 * m] += hr[m] * ar[m] + hi[m] * ai[m];
                                gwio[2 * m + 1] += -hr[m] * ai[m] + hi[m] * ar[m];
                            }
                        }
                    }
                }
            }
            if (gx) synth_rows(gxre.data(), gxim.data(), bn * cin, *table, false, gx);
        });
}

template <class T>
Tensor<T> lowrank_spectral_weights(const Tensor<T>& base, const Tensor<T>& p, const Tensor<T>& q, const Tensor<T>& s) {
    require(base.rank() == 4 && base.dim(3) == 2, "lowrank_spectral_weights: base must be [Cin, Cout, K, 2]");
    const std::size_t cin = base.dim(0), cout = base.dim(1), k = base.dim(2);
    require(p.rank() == 3 && p.dim(2) == cin, "lowrank_spectral_weights: p must be [B, R, Cin]");
    const std::size_t bn = p.dim(0), rank = p.dim(1);
    require(q.shape() == Shape{bn, rank, cout}, "lowrank_spectral_weights: q must be [B, R, Cout]");
    require(s.shape() == Shape{bn, rank, k, 2}, "lowrank_spectral_weights: s must be [B, R, K, 2]");
    const std::size_t per = cin * cout * k * 2;
    std::vector<T> y(bn * per);
    const T* bv = base.data().data();
    const T* pv = p.data().data();
    const T* qv = q.data().data();
    const T* sv = s.data().data();
    for (std::size_t bi = 0; bi < bn; ++bi) {
        T* yb = &y[bi * per];
        std::copy_n(bv, per, yb);
        for (std::size_t r = 0; r < rank; ++r) {
            const T* sr = sv + (bi * rank + r) * k * 2;
            for (std::size_t i = 0; i < cin; ++i)
                for (std::size_t o = 0; o < cout; ++o) {
                    const T pq = pv[(bi * rank + r) * cin + i] * qv[(bi * rank + r) * cout + o];
                    T* dst = yb + (i * cout + o) * k * 2;
                    for (std::size_t m = 0; m < 2 * k; ++m) dst[m] += pq * sr[m];
                }
        }
    }
    return make_result<T>({bn, cin, cout, k, 2}, std::move(y), {base, p, q, s}, "lowrank_spectral_weights",
                          [=](Node<T>& self) {
                              const T* pv = value_of(self, 1);
                              const T* qv = value_of(self, 2);
                              const T* sv = value_of(self, 3);
                              T* gbase = grad_of(self, 0);
                              T* gp = grad_of(self, 1);
                              T* gq = grad_of(self, 2);
                              T* gs = grad_of(self, 3);
                              for (std::size_t bi = 0; bi < bn; ++bi) {
                                  const T* gy = &self.grad[bi * per];
                                  if (gbase)
                                      for (std::size_t j = 0; j < per; ++j) gbase[j] += gy[j];
                                  for (std::size_t r = 0; r < rank; ++r) {
                                      const std::size_t br = bi * rank + r;
                                      const T* sr = sv + br * k * 2;
                                      for (std::size_t i = 0; i < cin; ++i)
                                          for (std::size_t o = 0; o < cout; ++o) {
                                              const T* g = gy + (i * cout + o) * k * 2;
                                              T dot = 0;
                                              for (std::size_t m = 0; m < 2 * k; ++m) dot += g[m] * sr[m];
                                              const T pi = pv[br * cin + i], qo = qv[br * cout + o];
                                              if (gp) gp[br * cin + i] += dot * qo;
                                              if (gq) gq[br * cout + o] += dot * pi;
                                              if (gs) {
                                                  T* gsr = gs + br * k * 2;
                                                  const T pq = pi * qo;
                                                  for (std::size_t m = 0; m < 2 * k; ++m) gsr[m] += pq * g[m];
                                              }
                                          }
                                  }
                              }
                          });
}

template <class T>
Tensor<T> spectral_gate(const Tensor<T>& x, const Tensor<T>& g) {
    require(x.rank() == 3 && g.rank() == 3 && g.dim(0) == x.dim(0) && g.dim(1) == x.dim(1),
            "spectral_gate: input " + shape_string(x.shape()) + " gate " + shape_string(g.shape()));
    const std::size_t bn = x.dim(0), c = x.dim(1), n = x.dim(2), k = g.dim(2);
    require(k >= 1 && k <= n / 2 + 1, "spectral_gate: too many modes for grid");
    auto table = dft_table<T>(n, k);
    const std::size_t rows = bn * c;
    std::vector<T> xre(rows * k, T(0)), xim(rows * k, T(0));
    dft_rows(x.data().data(), rows, *table, xre.data(), xim.data());
    std::vector<T> zre(rows * k), zim(rows * k);
    for (std::size_t j = 0; j < rows * k; ++j) {
        const T f = g.data()[j] - T(1);
        zre[j] = f * xre[j];
        zim[j] = f * xim[j];
    }
    std::vector<T> y(x.data().begin(), x.data().end());
    synth_rows(zre.data(), zim.data(), rows, *table, true, y.data());
    return make_result<T>({bn, c, n}, std::move(y), {x, g}, "spectral_gate",
                          [=, xre = std::move(xre), xim = std::move(xim)](Node<T>& self) {
                              std::vector<T> hre(rows * k, T(0)), him(rows * k, T(0));
                              inverse_adjoint_rows(self.grad.data(), rows, *table, hre.data(), him.data());
                              const T* gv = value_of(self, 1);
                              if (T* gg = grad_of(self, 1))
                                  for (std::size_t j = 0; j < rows * k; ++j) gg[j] += hre[j] * xre[j] + him[j] * xim[j];
                              if (T* gx = grad_of(self, 0)) {
                                  for (std::size_t j = 0; j < self.grad.size(); ++j) gx[j] += self.grad[j];
                                  for (std::size_t j = 0; j < rows * k; ++j) {
                                      const T f = gv[j] - T(1);
                                      hre[j] *= f;
                                      him[j] *= f;
                                  }
                                  synth_rows(hre.data(), him.data(), rows, *table, false, gx);
                              }
                          });
}

template <class T>
Tensor<T> film(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    require(x.rank() == 3 && gamma.shape() == Shape{x.dim(0), x.dim(1)} && beta.shape() == gamma.shape(),
            "film: input " + shape_string(x.shape()) + " gamma " + shape_string(gamma.shape()) + " beta " +
                shape_string(beta.shape()));
    const std::size_t rows = x.dim(0) * x.dim(1), n = x.dim(2);
    std::vector<T> y(rows * n);
    for (std::size_t r = 0; r < rows; ++r) {
        const T ga = gamma.data()[r], be = beta.data()[r];
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] = ga * x.data()[r * n + j] + be;
    }
    return make_result<T>(x.shape(), std::move(y), {x, gamma, beta}, "film", [rows, n](Node<T>& self) {
        const T* xv = value_of(self, 0);
        const T* gav = value_of(self, 1);
        T* gx = grad_of(self, 0);
        T* gga = grad_of(self, 1);
        T* gbe = grad_of(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gy = &self.grad[r * n];
            T sg = 0, sx = 0;
            for (std::size_t j = 0; j < n; ++j) {
                sg += gy[j];
                sx += gy[j] * xv[r * n + j];
            }
            if (gbe) gbe[r] += sg;
            if (gga) gga[r] += sx;
            if (gx)
                for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += gy[j] * gav[r];
        }
    });
}

template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
    require(q.rank() == 3 && k.rank() == 3 && v.shape() == k.shape() && k.dim(0) == q.dim(0) && k.dim(2) == q.dim(1),
            "attention: q " + shape_string(q.shape()) + " k " + shape_string(k.shape()) + " v " + shape_string(v.shape()));
    const std::size_t bn = q.dim(0), c = q.dim(1), n = q.dim(2), tokens = k.dim(1);
    require(heads >= 1 && c % heads == 0, "attention: channels not divisible by heads");
    const std::size_t d = c / heads;
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    const T* qv = q.data().data();
    const T* kv = k.data().data();
    const T* vv = v.data().data();
    // probs [B, H, N, T]
    std::vector<T> probs(bn * heads * n * tokens, T(0));
    std::vector<T> y(bn * c * n, T(0));
    for (std::size_t b = 0; b < bn; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            T* pr = &probs[(b * heads + h) * n * tokens];
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t j = 0; j < d; ++j) {
                    const T kk = kv[(b * tokens + t) * c + h * d + j] * inv;
                    const T* qr = qv + (b * c + h * d + j) * n;
                    for (std::size_t p = 0; p < n; ++p) pr[p * tokens + t] += qr[p] * kk;
                }
            for (std::size_t p = 0; p < n; ++p) {
                T* row = pr + p * tokens;
                const T mx = *std::max_element(row, row + tokens);
                T z = 0;
                for (std::size_t t = 0; t < tokens; ++t) z += (row[t] = std::exp(row[t] - mx));
                for (std::size_t t = 0; t < tokens; ++t) row[t] /= z;
            }
            for (std::size_t j = 0; j < d; ++j) {
                T* yr = &y[(b * c + h * d + j) * n];
                for (std::size_t t = 0; t < tokens; ++t) {
                    const T vt = vv[(b * tokens + t) * c + h * d + j];
                    for (std::size_t p = 0; p < n; ++p) yr[p] += pr[p * tokens + t] * vt;
                }
            }
        }
    return make_result<T>({bn, c, n}, std::move(y), {q, k, v}, "attention",
                          [=, probs = std::move(probs)](Node<T>& self) {
                              const T* qv = value_of(self, 0);
                              const T* kv = value_of(self, 1);
                              const T* vv = value_of(self, 2);
                              T* gq = grad_of(self, 0);
                              T* gk = grad_of(self, 1);
                              T* gv = grad_of(self, 2);
                              std::vector<T> gs(n * tokens);
                              for (std::size_t b = 0; b < bn; ++b)
                                  for (std::size_t h = 0; h < heads; ++h) {
                                      const T* pr = &probs[(b * heads + h) * n * tokens];
                                      std::fill(gs.begin(), gs.end(), T(0));
                                      for (std::size_t j = 0; j < d; ++j) {
                                          const T* gy = &self.grad[(b * c + h * d + j) * n];
                                          for (std::size_t t = 0; t < tokens; ++t) {
                                              const std::size_t vi = (b * tokens + t) * c + h * d + j;
                                              T acc = 0;
                                              for (std::size_t p = 0; p < n; ++p) {
                                                  gs[p * tokens + t] += gy[p] * vv[vi];
                                                  acc += gy[p] * pr[p * tokens + t];
                                              }
                                              if (gv) gv[vi] += acc;
                                          }
                                      }
                                      // softmax adjoint
                                      for (std::size_t p = 0; p < n; ++p) {
                                          T* row = &gs[p * tokens];
                                          const T* prow = pr + p * tokens;
                                          T dot = 0;
                                          for (std::size_t t = 0; t < tokens; ++t) dot += row[t] * prow[t];
                                          for (std::size_t t = 0; t < tokens; ++t) row[t] = prow[t] * (row[t] - dot) * inv;
                                      }
                                      for (std::size_t j = 0; j < d; ++j) {
                                          const T* qr = qv + (b * c + h * d + j) * n;
                                          T* gqr = gq ? gq + (b * c + h * d + j) * n : nullptr;
                                          for (std::size_t t = 0; t < tokens; ++t) {
                                              const std::size_t ki = (b * tokens + t) * c + h * d + j;
                                              T acc = 0;
                                              for (std::size_t p = 0; p < n; ++p) {
                                                  if (gqr) gqr[p] += gs[p * tokens + t] * kv[ki];
                                                  acc += gs[p * tokens + t] * qr[p];
                                              }
                                              if (gk) gk[ki] += acc;
                                          }
                                      }
                                  }
                          });
}

template <class T>
Tensor<T> pde_rhs(const Tensor<T>& u, const std::vector<std::array<double, 7>>& coeffs, double length) {
    require(u.rank() == 2 && coeffs.size() == u.dim(0),
            "pde_rhs: state " + shape_string(u.shape()) + " with " + std::to_string(coeffs.size()) + " coefficient rows");
    const std::size_t bn = u.dim(0), n = u.dim(1), k = n / 2 + 1;
    auto table = dft_table<T>(n, k);
    // Linear Fourier multiplier L(m) = a2 (ik) + a4 (ik)^2 + a5 (ik)^3 + a6 (ik)^4,
    // with odd derivatives zeroed at the Nyquist mode.
    std::vector<T> lre(bn * k), lim(bn * k), d1(k);
    for (std::size_t m = 0; m < k; ++m) {
        const double kk = 2.0 * std::numbers::pi * static_cast<double>(m) / length;
        const bool nyq = 2 * m == n;
        d1[m] = nyq ? T(0) : static_cast<T>(kk);
        for (std::size_t b = 0; b < bn; ++b) {
            const auto& a = coeffs[b];
            const double odd = nyq ? 0.0 : a[2] * kk - a[5] * kk * kk * kk;
            lre[b * k + m] = static_cast<T>(-a[4] * kk * kk + a[6] * kk * kk * kk * kk);
            lim[b * k + m] = static_cast<T>(odd);
        }
    }
    const T* uv = u.data().data();
    std::vector<T> usq(bn * n);
    for (std::size_t j = 0; j < bn * n; ++j) usq[j] = uv[j] * uv[j];
    std::vector<T> ure(bn * k, T(0)), uim(bn * k, T(0)), sre(bn * k, T(0)), sim(bn * k, T(0));
    dft_rows(uv, bn, *table, ure.data(), uim.data());
    dft_rows(usq.data(), bn, *table, sre.data(), sim.data());
    std::vector<T> zre(bn * k), zim(bn * k);
    for (std::size_t b = 0; b < bn; ++b) {
        const T half_a3 = static_cast<T>(0.5 * coeffs[b][3]);
        for (std::size_t m = 0; m < k; ++m) {
            const std::size_t j = b * k + m;
            // L * U + (a3/2) (i k) * S
            zre[j] = lre[j] * ure[j] - lim[j] * uim[j] - half_a3 * d1[m] * sim[j];
            zim[j] = lre[j] * uim[j] + lim[j] * ure[j] + half_a3 * d1[m] * sre[j];
        }
    }
    std::vector<T> y(bn * n, T(0));
    synth_rows(zre.data(), zim.data(), bn, *table, true, y.data());
    for (std::size_t b = 0; b < bn; ++b) {
        const T a0 = static_cast<T>(coeffs[b][0]), a1 = static_cast<T>(coeffs[b][1]);
        for (std::size_t j = 0; j < n; ++j) y[b * n + j] += a0 * uv[b * n + j] + a1 * usq[b * n + j];
    }
    return make_result<T>({bn, n}, std::move(y), {u}, "pde_rhs",
                          [=, lre = std::move(lre), lim = std::move(lim), d1 = std::move(d1)](Node<T>& self) {
                              T* gu = grad_of(self, 0);
                              if (!gu) return;
                              const T* uv = value_of(self, 0);
                              const T* gy = self.grad.data();
                              // Operators are real circulant; adjoint multiplier is conj(L).
                              std::vector<T> gre(bn * k, T(0)), gim(bn * k, T(0));
                              dft_rows(gy, bn, *table, gre.data(), gim.data());
                              std::vector<T> ltre(bn * k), ltim(bn * k), dre(bn * k), dim(bn * k);
                              for (std::size_t j = 0; j < bn * k; ++j) {
                                  const std::size_t m = j % k;
                                  ltre[j] = lre[j] * gre[j] + lim[j] * gim[j];
                                  ltim[j] = lre[j] * gim[j] - lim[j] * gre[j];
                                  // -D1 g
                                  dre[j] = d1[m] * gim[j];
                                  dim[j] = -d1[m] * gre[j];
                              }
                              std::vector<T> lin(bn * n, T(0)), d1t(bn * n, T(0));
                              synth_rows(ltre.data(), ltim.data(), bn, *table, true, lin.data());
                              synth_rows(dre.data(), dim.data(), bn, *table, true, d1t.data());
                              for (std::size_t b = 0; b < bn; ++b) {
                                  const auto& a = coeffs[b];
                                  const T a0 = static_cast<T>(a[0]), a1 = static_cast<T>(a[1]), a3 = static_cast<T>(a[3]);
                                  for (std::size_t j = 0; j < n; ++j) {
                                      const std::size_t i = b * n + j;
                                      gu[i] += a0 * gy[i] + T(2) * a1 * uv[i] * gy[i] + lin[i] + a3 * uv[i] * d1t[i];
                                  }
                              }
                          });
}

// ------------------------------------------------------------------ reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    return make_result<T>({1}, {acc}, {x}, "sum", [](Node<T>& self) {
        if (T* g = grad_of(self, 0)) {
            const T s = self.grad[0];
            const std::size_t n = self.parents[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += s;
        }
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <class T>
Tensor<T> mae(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred, target, "mae");
    const std::size_t n = pred.numel();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred.data()[i] - target.data()[i]);
    const T inv = static_cast<T>(1.0 / static_cast<double>(n));
    return make_result<T>({1}, {acc * inv}, {pred, target}, "mae", [n, inv](Node<T>& self) {
        const T* pv = value_of(self, 0);
        const T* tv = value_of(self, 1);
        const T s = self.grad[0] * inv;
        T* gp = grad_of(self, 0);
        T* gt = grad_of(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const T d = pv[i] - tv[i];
            const T sg = d > 0 ? s : (d < 0 ? -s : T(0));
            if (gp) gp[i] += sg;
            if (gt) gt[i] -= sg;
        }
    });
}

Tensor<double> to_double(const Tensor<float>& x) {
    return Tensor<double>::constant(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
}

Tensor<float> to_float(const Tensor<double>& x) {
    std::vector<float> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(x.data()[i]);
    return Tensor<float>::constant(x.shape(), std::move(v));
}

#define EQEMU_INSTANTIATE(T)                                                                                      \
    template class Tensor<T>;                                                                                     \
    template void backward<T>(const Tensor<T>&);                                                                  \
    template void backward<T>(const Tensor<T>&, std::span<const T>);                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                             \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                                        \
    template Tensor<T> silu<T>(const Tensor<T>&);                                                                 \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                                                 \
    template Tensor<T> activate<T>(const Tensor<T>&, Activation);                                                 \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                       \
    template Tensor<T> broadcast_space<T>(const Tensor<T>&, std::size_t);                                         \
    template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                                         \
    template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t);                             \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> conv1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);              \
    template Tensor<T> conv_transpose1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);    \
    template Tensor<T> spectral_conv<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> lowrank_spectral_weights<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                                   const Tensor<T>&);                                             \
    template Tensor<T> spectral_gate<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> film<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);           \
    template Tensor<T> pde_rhs<T>(const Tensor<T>&, const std::vector<std::array<double, 7>>&, double);           \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                                  \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                                 \
    template Tensor<T> mae<T>(const Tensor<T>&, const Tensor<T>&);

EQEMU_INSTANTIATE(float)
EQEMU_INSTANTIATE(double)

}  // namespace eqemu::ad
