#include "cortexflow/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_set>

namespace cortexflow::ad {

namespace {

thread_local bool g_grad_enabled = true;
int g_threads = 1;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

Tensor make(std::vector<int> shape, std::vector<double> value, std::vector<Tensor> parents,
            std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            n->requires_grad = true;
            for (const auto& p : parents) n->parents.push_back(p.ptr());
            n->backward = std::move(bw);
        }
    }
    return Tensor(std::move(n));
}

// Parent i's gradient buffer, or nullptr when it does not need one.
double* pgrad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

const std::vector<double>& pval(Node& self, std::size_t i) { return self.parents[i]->value; }

struct Vol {
    int nz, ny, nx, c;
    std::size_t voxels() const { return static_cast<std::size_t>(nz) * ny * nx; }
};

Vol vol_dims(const Tensor& t, const char* op) {
    if (t.shape().size() != 4) throw std::invalid_argument(std::string(op) + ": expected [nz, ny, nx, C], got " + shape_str(t.shape()));
    return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Runs fn(begin, end, worker) over [0, n) split into contiguous chunks.
template <class Fn>
void parallel_chunks(int n, Fn&& fn) {
    const int t = std::max(1, std::min(g_threads, n));
    if (t == 1) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < t; ++w) {
        const int b = static_cast<int>(static_cast<long>(n) * w / t);
        const int e = static_cast<int>(static_cast<long>(n) * (w + 1) / t);
        pool.emplace_back([&, b, e, w] { fn(b, e, w); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> values) {
    if (numel(shape) != values.size()) {
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::vector<int> shape) {
    const auto n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::parameter(std::vector<int> shape, std::vector<double> values, std::string name) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    return t;
}

std::vector<Vec3> Tensor::to_points() const {
    if (cols() != 3) throw std::invalid_argument("to_points: expected [N, 3], got " + shape_str(shape()));
    std::vector<Vec3> pts(size() / 3);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = Vec3(values()[3 * i], values()[3 * i + 1], values()[3 * i + 2]);
    return pts;
}

Tensor Tensor::from_points(const std::vector<Vec3>& pts) {
    std::vector<double> v(pts.size() * 3);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int a = 0; a < 3; ++a) v[3 * i + a] = pts[i][a];
    return constant({static_cast<int>(pts.size()), 3}, std::move(v));
}

Tensor Tensor::detach() const { return constant(shape(), values()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void set_num_threads(int n) { g_threads = std::max(1, n); }
int num_threads() { return g_threads; }

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must have one element");
    if (!loss.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && p->backward && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backward(**it);
}

void zero_grad(const std::vector<Tensor>& params) {
    for (const auto& p : params) std::fill(p.node()->grad.begin(), p.node()->grad.end(), 0.0);
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    return make(a.shape(), std::move(v), {a, b}, [](Node& s) {
        for (std::size_t k = 0; k < 2; ++k)
            if (double* g = pgrad(s, k))
                for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    return make(a.shape(), std::move(v), {a, b}, [](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
        if (double* g = pgrad(s, 1))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] -= s.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    return make(a.shape(), std::move(v), {a, b}, [](Node& s) {
        const auto &av = pval(s, 0), &bv = pval(s, 1);
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * bv[i];
        if (double* g = pgrad(s, 1))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * av[i];
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] / b.values()[i];
    return make(a.shape(), std::move(v), {a, b}, [](Node& s) {
        const auto &av = pval(s, 0), &bv = pval(s, 1);
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] / bv[i];
        if (double* g = pgrad(s, 1))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] -= s.grad[i] * av[i] / (bv[i] * bv[i]);
    });
}

Tensor scale(const Tensor& a, double f) {
    std::vector<double> v(a.values());
    for (auto& x : v) x *= f;
    return make(a.shape(), std::move(v), {a}, [f](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += f * s.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.values());
    for (auto& x : v) x += c;
    return make(a.shape(), std::move(v), {a}, [](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    });
}

Tensor square(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x *= x;
    return make(a.shape(), std::move(v), {a}, [](Node& s) {
        const auto& av = pval(s, 0);
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += 2.0 * av[i] * s.grad[i];
    });
}

Tensor sqrt(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = std::sqrt(x);
    return make(a.shape(), std::move(v), {a}, [](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i)
                if (s.value[i] > 0) g[i] += 0.5 * s.grad[i] / s.value[i];
    });
}

Tensor sum(const Tensor& a) {
    const double total = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    return make({1}, {total}, {a}, [](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.parents[0]->size(); ++i) g[i] += s.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor expand(const Tensor& s, std::vector<int> shape) {
    if (s.size() != 1) throw std::invalid_argument("expand: expected a one-element tensor");
    std::vector<double> v(numel(shape), s.item());
    return make(std::move(shape), std::move(v), {s}, [](Node& n) {
        if (double* g = pgrad(n, 0)) g[0] += std::accumulate(n.grad.begin(), n.grad.end(), 0.0);
    });
}

Tensor mul_rows(const Tensor& a, const Tensor& w) {
    const int n = a.rows(), c = static_cast<int>(a.size() / std::max(1, n));
    if (static_cast<int>(w.size()) != n) throw std::invalid_argument("mul_rows: weight count != rows");
    std::vector<double> v(a.values());
    for (int r = 0; r < n; ++r)
        for (int k = 0; k < c; ++k) v[r * c + k] *= w.values()[r];
    return make(a.shape(), std::move(v), {a, w}, [n, c](Node& s) {
        const auto &av = pval(s, 0), &wv = pval(s, 1);
        if (double* g = pgrad(s, 0))
            for (int r = 0; r < n; ++r)
                for (int k = 0; k < c; ++k) g[r * c + k] += s.grad[r * c + k] * wv[r];
        if (double* g = pgrad(s, 1))
            for (int r = 0; r < n; ++r)
                for (int k = 0; k < c; ++k) g[r] += s.grad[r * c + k] * av[r * c + k];
    });
}

Tensor mask(const Tensor& a, std::vector<double> m) {
    if (m.size() != a.size()) throw std::invalid_argument("mask: size mismatch");
    std::vector<double> v(a.values());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= m[i];
    return make(a.shape(), std::move(v), {a}, [m = std::move(m)](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * m[i];
    });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (numel(shape) != a.size()) throw std::invalid_argument("reshape: element count changes");
    return make(std::move(shape), a.values(), {a}, [](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
    });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::int32_t>& idx) {
    const int c = a.cols(), n = a.rows();
    std::vector<double> v(idx.size() * c);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= n) throw std::out_of_range("gather_rows: index out of range");
        std::copy_n(a.values().data() + static_cast<std::size_t>(idx[r]) * c, c, v.data() + r * c);
    }
    std::vector<int> shape = a.shape();
    shape[0] = static_cast<int>(idx.size());
    return make(std::move(shape), std::move(v), {a}, [idx, c](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int k = 0; k < c; ++k) g[static_cast<std::size_t>(idx[r]) * c + k] += s.grad[r * c + k];
    });
}

Tensor scatter_add_rows(const Tensor& a, const std::vector<std::int32_t>& idx, int out_rows) {
    const int c = a.cols();
    if (static_cast<int>(idx.size()) != a.rows()) throw std::invalid_argument("scatter_add_rows: index count != rows");
    std::vector<double> v(static_cast<std::size_t>(out_rows) * c, 0.0);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= out_rows) throw std::out_of_range("scatter_add_rows: index out of range");
        for (int k = 0; k < c; ++k) v[static_cast<std::size_t>(idx[r]) * c + k] += a.values()[r * c + k];
    }
    std::vector<int> shape = a.shape();
    shape[0] = out_rows;
    return make(std::move(shape), std::move(v), {a}, [idx, c](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int k = 0; k < c; ++k) g[r * c + k] += s.grad[static_cast<std::size_t>(idx[r]) * c + k];
    });
}

Tensor weighted_gather(const Tensor& a, const std::vector<std::int32_t>& idx, const std::vector<double>& w,
                       int per_row) {
    if (per_row <= 0 || idx.size() != w.size() || idx.size() % per_row) {
        throw std::invalid_argument("weighted_gather: inconsistent index/weight arrays");
    }
    const int c = a.cols(), n = a.rows();
    const std::size_t rows = idx.size() / per_row;
    std::vector<double> v(rows * c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (int k = 0; k < per_row; ++k) {
            const auto j = idx[r * per_row + k];
            if (j < 0 || j >= n) throw std::out_of_range("weighted_gather: index out of range");
            const double wk = w[r * per_row + k];
            for (int q = 0; q < c; ++q) v[r * c + q] += wk * a.values()[static_cast<std::size_t>(j) * c + q];
        }
    std::vector<int> shape = a.shape();
    shape[0] = static_cast<int>(rows);
    return make(std::move(shape), std::move(v), {a}, [idx, w, per_row, c, rows](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t r = 0; r < rows; ++r)
                for (int k = 0; k < per_row; ++k) {
                    const auto j = static_cast<std::size_t>(idx[r * per_row + k]);
                    const double wk = w[r * per_row + k];
                    for (int q = 0; q < c; ++q) g[j * c + q] += wk * s.grad[r * c + q];
                }
    });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "row_dot");
    const int n = a.rows(), c = a.cols();
    std::vector<double> v(n, 0.0);
    for (int r = 0; r < n; ++r)
        for (int k = 0; k < c; ++k) v[r] += a.values()[r * c + k] * b.values()[r * c + k];
    return make({n}, std::move(v), {a, b}, [n, c](Node& s) {
        const auto &av = pval(s, 0), &bv = pval(s, 1);
        if (double* g = pgrad(s, 0))
            for (int r = 0; r < n; ++r)
                for (int k = 0; k < c; ++k) g[r * c + k] += s.grad[r] * bv[r * c + k];
        if (double* g = pgrad(s, 1))
            for (int r = 0; r < n; ++r)
                for (int k = 0; k < c; ++k) g[r * c + k] += s.grad[r] * av[r * c + k];
    });
}

Tensor row_norm(const Tensor& a) {
    const int n = a.rows(), c = a.cols();
    std::vector<double> v(n, 0.0);
    for (int r = 0; r < n; ++r) {
        double acc = 0;
        for (int k = 0; k < c; ++k) acc += a.values()[r * c + k] * a.values()[r * c + k];
        v[r] = std::sqrt(acc);
    }
    return make({n}, std::move(v), {a}, [n, c](Node& s) {
        const auto& av = pval(s, 0);
        if (double* g = pgrad(s, 0))
            for (int r = 0; r < n; ++r) {
                if (!(s.value[r] > 0)) continue;
                const double f = s.grad[r] / s.value[r];
                for (int k = 0; k < c; ++k) g[r * c + k] += f * av[r * c + k];
            }
    });
}

Tensor cross(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "cross");
    if (a.cols() != 3) throw std::invalid_argument("cross: expected [N, 3]");
    const int n = a.rows();
    std::vector<double> v(3 * static_cast<std::size_t>(n));
    auto at = [](const std::vector<double>& x, int r) { return Vec3(x[3 * r], x[3 * r + 1], x[3 * r + 2]); };
    for (int r = 0; r < n; ++r) {
        const Vec3 c = at(a.values(), r).cross(at(b.values(), r));
        for (int k = 0; k < 3; ++k) v[3 * r + k] = c[k];
    }
    return make(a.shape(), std::move(v), {a, b}, [n, at](Node& s) {
        double* ga = pgrad(s, 0);
        double* gb = pgrad(s, 1);
        for (int r = 0; r < n; ++r) {
            const Vec3 g = at(s.grad, r);
            // d(a x b) = da x b + a x db; adjoints: ga = b x g, gb = g x a
            if (ga) {
                const Vec3 d = at(pval(s, 1), r).cross(g);
                for (int k = 0; k < 3; ++k) ga[3 * r + k] += d[k];
            }
            if (gb) {
                const Vec3 d = g.cross(at(pval(s, 0), r));
                for (int k = 0; k < 3; ++k) gb[3 * r + k] += d[k];
            }
        }
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    const int ca = a.cols(), cb = b.cols();
    const std::size_t rows = a.size() / ca;
    if (b.size() / cb != rows || a.shape().size() != b.shape().size()) {
        throw std::invalid_argument("concat: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int c = ca + cb;
    std::vector<double> v(rows * c);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.values().data() + r * ca, ca, v.data() + r * c);
        std::copy_n(b.values().data() + r * cb, cb, v.data() + r * c + ca);
    }
    std::vector<int> shape = a.shape();
    shape.back() = c;
    return make(std::move(shape), std::move(v), {a, b}, [rows, ca, cb, c](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t r = 0; r < rows; ++r)
                for (int k = 0; k < ca; ++k) g[r * ca + k] += s.grad[r * c + k];
        if (double* g = pgrad(s, 1))
            for (std::size_t r = 0; r < rows; ++r)
                for (int k = 0; k < cb; ++k) g[r * cb + k] += s.grad[r * c + ca + k];
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    vol_dims(a, "concat_channels");
    vol_dims(b, "concat_channels");
    return concat_cols(a, b);
}

Tensor column(const Tensor& a, int col) {
    const int n = a.rows(), c = a.cols();
    if (col < 0 || col >= c) throw std::out_of_range("column: index out of range");
    std::vector<double> v(n);
    for (int r = 0; r < n; ++r) v[r] = a.values()[r * c + col];
    return make({n}, std::move(v), {a}, [n, c, col](Node& s) {
        if (double* g = pgrad(s, 0))
            for (int r = 0; r < n; ++r) g[r * c + col] += s.grad[r];
    });
}

Tensor matmul(const Tensor& x, const Tensor& w) {
    if (w.shape().size() != 2) throw std::invalid_argument("matmul: weight must be 2-D");
    const int cin = w.dim(0), cout = w.dim(1);
    if (x.cols() != cin) {
        throw std::invalid_argument("matmul: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    }
    const int n = static_cast<int>(x.size() / cin);
    std::vector<double> v(static_cast<std::size_t>(n) * cout);
    RowMap(v.data(), n, cout).noalias() = ConstRowMap(x.values().data(), n, cin) * ConstRowMap(w.values().data(), cin, cout);
    std::vector<int> shape = x.shape();
    shape.back() = cout;
    return make(std::move(shape), std::move(v), {x, w}, [n, cin, cout](Node& s) {
        const ConstRowMap gy(s.grad.data(), n, cout);
        if (double* g = pgrad(s, 0)) RowMap(g, n, cin).noalias() += gy * ConstRowMap(pval(s, 1).data(), cin, cout).transpose();
        if (double* g = pgrad(s, 1)) RowMap(g, cin, cout).noalias() += ConstRowMap(pval(s, 0).data(), n, cin).transpose() * gy;
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    if (!b.defined()) return y;
    const int cout = y.cols();
    if (static_cast<int>(b.size()) != cout) throw std::invalid_argument("linear: bias size mismatch");
    const std::size_t rows = y.size() / cout;
    std::vector<double> v(y.values());
    for (std::size_t r = 0; r < rows; ++r)
        for (int k = 0; k < cout; ++k) v[r * cout + k] += b.values()[k];
    return make(y.shape(), std::move(v), {y, b}, [rows, cout](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
        if (double* g = pgrad(s, 1))
            for (std::size_t r = 0; r < rows; ++r)
                for (int k = 0; k < cout; ++k) g[k] += s.grad[r * cout + k];
    });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
    if (slope.size() != 1) throw std::invalid_argument("prelu: expected a single slope");
    const double a = slope.item();
    std::vector<double> v(x.values());
    for (auto& e : v)
        if (e < 0) e *= a;
    return make(x.shape(), std::move(v), {x, slope}, [](Node& s) {
        const auto& xv = pval(s, 0);
        const double a = pval(s, 1)[0];
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < xv.size(); ++i) g[i] += xv[i] < 0 ? a * s.grad[i] : s.grad[i];
        if (double* g = pgrad(s, 1)) {
            double acc = 0;
            for (std::size_t i = 0; i < xv.size(); ++i)
                if (xv[i] < 0) acc += xv[i] * s.grad[i];
            g[0] += acc;
        }
    });
}

namespace {

// Fills the im2col block of slice z: rows = ny * nx voxels, columns = 27 taps x cin.
void im2col_slice(const double* x, const Vol& d, int z, RowMat& col) {
    const int cin = d.c;
    col.setZero(static_cast<Eigen::Index>(d.ny) * d.nx, 27 * cin);
    for (int t = 0; t < 27; ++t) {
        const int dz = t / 9 - 1, dy = (t / 3) % 3 - 1, dx = t % 3 - 1;
        const int zz = z + dz;
        if (zz < 0 || zz >= d.nz) continue;
        for (int y = 0; y < d.ny; ++y) {
            const int yy = y + dy;
            if (yy < 0 || yy >= d.ny) continue;
            const int x0 = std::max(0, -dx), x1 = std::min(d.nx, d.nx - dx);
            for (int xi = x0; xi < x1; ++xi) {
                const double* src = x + ((static_cast<std::size_t>(zz) * d.ny + yy) * d.nx + xi + dx) * cin;
                double* dst = col.data() + (static_cast<std::size_t>(y) * d.nx + xi) * col.cols() + t * cin;
                std::copy_n(src, cin, dst);
            }
        }
    }
}

void col2im_slice(const RowMat& col, const Vol& d, int z, double* gx) {
    const int cin = d.c;
    for (int t = 0; t < 27; ++t) {
        const int dz = t / 9 - 1, dy = (t / 3) % 3 - 1, dx = t % 3 - 1;
        const int zz = z + dz;
        if (zz < 0 || zz >= d.nz) continue;
        for (int y = 0; y < d.ny; ++y) {
            const int yy = y + dy;
            if (yy < 0 || yy >= d.ny) continue;
            const int x0 = std::max(0, -dx), x1 = std::min(d.nx, d.nx - dx);
            for (int xi = x0; xi < x1; ++xi) {
                double* dst = gx + ((static_cast<std::size_t>(zz) * d.ny + yy) * d.nx + xi + dx) * cin;
                const double* src = col.data() + (static_cast<std::size_t>(y) * d.nx + xi) * col.cols() + t * cin;
                for (int k = 0; k < cin; ++k) dst[k] += src[k];
            }
        }
    }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias) {
    const Vol d = vol_dims(x, "conv3d");
    if (w.shape().size() != 2 || w.dim(0) != 27 * d.c) {
        throw std::invalid_argument("conv3d: weight " + shape_str(w.shape()) + " does not match input channels " +
                                    std::to_string(d.c));
    }
    const int cout = w.dim(1);
    const bool has_bias = bias.defined();
    if (has_bias && static_cast<int>(bias.size()) != cout) throw std::invalid_argument("conv3d: bias size mismatch");
    const std::size_t plane = static_cast<std::size_t>(d.ny) * d.nx;
    std::vector<double> v(d.voxels() * cout);
    const ConstRowMap wm(w.values().data(), 27 * d.c, cout);
    parallel_chunks(d.nz, [&](int b, int e, int) {
        RowMat col;
        for (int z = b; z < e; ++z) {
            im2col_slice(x.values().data(), d, z, col);
            RowMap out(v.data() + z * plane * cout, plane, cout);
            out.noalias() = col * wm;
            if (has_bias)
                for (std::size_t r = 0; r < plane; ++r)
                    for (int k = 0; k < cout; ++k) out(r, k) += bias.values()[k];
        }
    });
    std::vector<Tensor> parents{x, w};
    if (has_bias) parents.push_back(bias);
    return make({d.nz, d.ny, d.nx, cout}, std::move(v), parents, [d, cout, plane, has_bias](Node& s) {
        double* gx = pgrad(s, 0);
        double* gw = pgrad(s, 1);
        const auto& xv = pval(s, 0);
        const ConstRowMap wm(pval(s, 1).data(), 27 * d.c, cout);
        const int workers = std::max(1, std::min(g_threads, d.nz));
        std::vector<RowMat> gw_part(workers, RowMat::Zero(27 * d.c, cout));
        // Input gradients of neighbouring slices overlap, so col2im runs serially afterwards.
        std::vector<RowMat> gcols(d.nz);
        parallel_chunks(d.nz, [&](int b, int e, int worker) {
            RowMat col;
            for (int z = b; z < e; ++z) {
                const ConstRowMap gy(s.grad.data() + z * plane * cout, plane, cout);
                if (gw) {
                    im2col_slice(xv.data(), d, z, col);
                    gw_part[worker].noalias() += col.transpose() * gy;
                }
                if (gx) gcols[z].noalias() = gy * wm.transpose();
            }
        });
        if (gw) {
            RowMap g(gw, 27 * d.c, cout);
            for (const auto& part : gw_part) g += part;
        }
        if (gx)
            for (int z = 0; z < d.nz; ++z) col2im_slice(gcols[z], d, z, gx);
        if (has_bias) {
            if (double* gb = pgrad(s, 2))
                for (std::size_t r = 0; r < d.voxels(); ++r)
                    for (int k = 0; k < cout; ++k) gb[k] += s.grad[r * cout + k];
        }
    });
}

Tensor maxpool3d2(const Tensor& x) {
    const Vol d = vol_dims(x, "maxpool3d2");
    if (d.nz % 2 || d.ny % 2 || d.nx % 2) throw std::invalid_argument("maxpool3d2: odd spatial size " + shape_str(x.shape()));
    const Vol o{d.nz / 2, d.ny / 2, d.nx / 2, d.c};
    std::vector<double> v(o.voxels() * d.c);
    std::vector<std::size_t> arg(v.size());
    const auto& xv = x.values();
    for (int z = 0; z < o.nz; ++z)
        for (int y = 0; y < o.ny; ++y)
            for (int xi = 0; xi < o.nx; ++xi)
                for (int c = 0; c < d.c; ++c) {
                    const std::size_t oi = ((static_cast<std::size_t>(z) * o.ny + y) * o.nx + xi) * d.c + c;
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t bi = 0;
                    for (int t = 0; t < 8; ++t) {
                        const std::size_t ii =
                            ((static_cast<std::size_t>(2 * z + (t >> 2)) * d.ny + 2 * y + ((t >> 1) & 1)) * d.nx + 2 * xi + (t & 1)) * d.c + c;
                        if (xv[ii] > best) best = xv[ii], bi = ii;
                    }
                    v[oi] = best;
                    arg[oi] = bi;
                }
    return make({o.nz, o.ny, o.nx, d.c}, std::move(v), {x}, [arg = std::move(arg)](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += s.grad[i];
    });
}

Tensor upsample3d2(const Tensor& x) {
    const Vol d = vol_dims(x, "upsample3d2");
    const Vol o{2 * d.nz, 2 * d.ny, 2 * d.nx, d.c};
    std::vector<double> v(o.voxels() * d.c);
    auto src = [d, o](std::size_t oi) {
        const std::size_t vox = oi / d.c;
        const int c = static_cast<int>(oi % d.c);
        const int xi = static_cast<int>(vox % o.nx), y = static_cast<int>((vox / o.nx) % o.ny),
                  z = static_cast<int>(vox / (static_cast<std::size_t>(o.nx) * o.ny));
        return ((static_cast<std::size_t>(z / 2) * d.ny + y / 2) * d.nx + xi / 2) * d.c + c;
    };
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[src(i)];
    return make({o.nz, o.ny, o.nx, d.c}, std::move(v), {x}, [src](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[src(i)] += s.grad[i];
    });
}

Tensor instance_norm(const Tensor& x, double eps) {
    const Vol d = vol_dims(x, "instance_norm");
    const std::size_t n = d.voxels();
    if (n == 0) throw std::invalid_argument("instance_norm: empty spatial extent");
    std::vector<double> mu(d.c, 0.0), inv(d.c, 0.0);
    const auto& xv = x.values();
    for (std::size_t r = 0; r < n; ++r)
        for (int c = 0; c < d.c; ++c) mu[c] += xv[r * d.c + c];
    for (auto& m : mu) m /= static_cast<double>(n);
    std::vector<double> var(d.c, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (int c = 0; c < d.c; ++c) {
            const double e = xv[r * d.c + c] - mu[c];
            var[c] += e * e;
        }
    for (int c = 0; c < d.c; ++c) inv[c] = 1.0 / std::sqrt(var[c] / static_cast<double>(n) + eps);
    std::vector<double> v(xv.size());
    for (std::size_t r = 0; r < n; ++r)
        for (int c = 0; c < d.c; ++c) v[r * d.c + c] = (xv[r * d.c + c] - mu[c]) * inv[c];
    return make(x.shape(), std::move(v), {x}, [n, C = d.c, inv](Node& s) {
        double* g = pgrad(s, 0);
        if (!g) return;
        std::vector<double> mg(C, 0.0), mgy(C, 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (int c = 0; c < C; ++c) {
                mg[c] += s.grad[r * C + c];
                mgy[c] += s.grad[r * C + c] * s.value[r * C + c];
            }
        for (int c = 0; c < C; ++c) {
            mg[c] /= static_cast<double>(n);
            mgy[c] /= static_cast<double>(n);
        }
        for (std::size_t r = 0; r < n; ++r)
            for (int c = 0; c < C; ++c) {
                const std::size_t i = r * C + c;
                g[i] += inv[c] * (s.grad[i] - mg[c] - s.value[i] * mgy[c]);
            }
    });
}

Tensor trilinear_sample(const Tensor& vol, const Tensor& pts, const Eigen::Matrix4d& world_to_voxel) {
    const Vol d = vol_dims(vol, "trilinear_sample");
    if (pts.cols() != 3) throw std::invalid_argument("trilinear_sample: points must be [N, 3]");
    const int n = pts.rows();
    const int C = d.c;
    const Eigen::Matrix3d A = world_to_voxel.topLeftCorner<3, 3>();
    const Vec3 t = world_to_voxel.topRightCorner<3, 1>();

    struct Cell {
        std::array<std::size_t, 8> idx;
        std::array<double, 3> f;     // fractional offsets along x, y, z
        std::array<bool, 3> inside;  // coordinate not clamped
    };
    std::vector<Cell> cells(n);
    const std::array<int, 3> size{d.nx, d.ny, d.nz};
    for (int p = 0; p < n; ++p) {
        const Vec3 w(pts.values()[3 * p], pts.values()[3 * p + 1], pts.values()[3 * p + 2]);
        const Vec3 q = A * w + t;
        std::array<int, 3> i0{}, i1{};
        Cell& cell = cells[p];
        for (int a = 0; a < 3; ++a) {
            const double hi = size[a] - 1;
            const double c = std::clamp(q[a], 0.0, hi);
            cell.inside[a] = q[a] > 0 && q[a] < hi;
            i0[a] = std::min(static_cast<int>(std::floor(c)), std::max(0, size[a] - 2));
            i1[a] = std::min(i0[a] + 1, size[a] - 1);
            cell.f[a] = c - i0[a];
        }
        for (int corner = 0; corner < 8; ++corner) {
            const int xi = corner & 1 ? i1[0] : i0[0];
            const int yi = corner & 2 ? i1[1] : i0[1];
            const int zi = corner & 4 ? i1[2] : i0[2];
            cell.idx[corner] = ((static_cast<std::size_t>(zi) * d.ny + yi) * d.nx + xi) * C;
        }
    }
    auto weight = [](const Cell& c, int corner) {
        double w = 1;
        for (int a = 0; a < 3; ++a) w *= (corner >> a) & 1 ? c.f[a] : 1 - c.f[a];
        return w;
    };
    std::vector<double> v(static_cast<std::size_t>(n) * C, 0.0);
    for (int p = 0; p < n; ++p)
        for (int corner = 0; corner < 8; ++corner) {
            const double w = weight(cells[p], corner);
            const double* src = vol.values().data() + cells[p].idx[corner];
            for (int c = 0; c < C; ++c) v[static_cast<std::size_t>(p) * C + c] += w * src[c];
        }
    return make({n, C}, std::move(v), {vol, pts}, [cells = std::move(cells), n, C, A, weight](Node& s) {
        const auto& fv = pval(s, 0);
        if (double* g = pgrad(s, 0))
            for (int p = 0; p < n; ++p)
                for (int corner = 0; corner < 8; ++corner) {
                    const double w = weight(cells[p], corner);
                    double* dst = g + cells[p].idx[corner];
                    for (int c = 0; c < C; ++c) dst[c] += w * s.grad[static_cast<std::size_t>(p) * C + c];
                }
        if (double* g = pgrad(s, 1))
            for (int p = 0; p < n; ++p) {
                const Cell& cell = cells[p];
                Vec3 gv = Vec3::Zero();  // dL / d(voxel coordinate)
                for (int a = 0; a < 3; ++a) {
                    if (!cell.inside[a]) continue;
                    double acc = 0;
                    for (int corner = 0; corner < 8; ++corner) {
                        double w = (corner >> a) & 1 ? 1.0 : -1.0;
                        for (int b = 0; b < 3; ++b)
                            if (b != a) w *= (corner >> b) & 1 ? cell.f[b] : 1 - cell.f[b];
                        const double* src = fv.data() + cell.idx[corner];
                        for (int c = 0; c < C; ++c) acc += w * src[c] * s.grad[static_cast<std::size_t>(p) * C + c];
                    }
                    gv[a] = acc;
                }
                const Vec3 gw = A.transpose() * gv;
                for (int a = 0; a < 3; ++a) g[3 * p + a] += gw[a];
            }
    });
}

Tensor neighbor_mean(const Tensor& x, const VertexAdjacency& adj) {
    const int n = x.rows(), c = x.cols();
    if (static_cast<int>(adj.vertex_count()) != n) throw std::invalid_argument("neighbor_mean: adjacency size mismatch");
    std::vector<double> v(static_cast<std::size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto nb = adj.of(i);
        if (nb.empty()) throw std::invalid_argument("neighbor_mean: isolated vertex " + std::to_string(i));
        const double f = 1.0 / static_cast<double>(nb.size());
        for (auto u : nb)
            for (int k = 0; k < c; ++k) v[static_cast<std::size_t>(i) * c + k] += f * x.values()[static_cast<std::size_t>(u) * c + k];
    }
    return make(x.shape(), std::move(v), {x}, [adj, n, c](Node& s) {
        if (double* g = pgrad(s, 0))
            for (int i = 0; i < n; ++i) {
                const auto nb = adj.of(i);
                const double f = 1.0 / static_cast<double>(nb.size());
                for (auto u : nb)
                    for (int k = 0; k < c; ++k) g[static_cast<std::size_t>(u) * c + k] += f * s.grad[static_cast<std::size_t>(i) * c + k];
            }
    });
}

Tensor subdivide_rows(const Tensor& x, const std::vector<EdgeKey>& edge_parents) {
    const int n = x.rows(), c = x.cols();
    const int m = n + static_cast<int>(edge_parents.size());
    std::vector<double> v(static_cast<std::size_t>(m) * c);
    std::copy(x.values().begin(), x.values().end(), v.begin());
    for (std::size_t e = 0; e < edge_parents.size(); ++e) {
        const auto [a, b] = edge_parents[e];
        if (a < 0 || b < 0 || a >= n || b >= n) throw std::out_of_range("subdivide_rows: edge index out of range");
        for (int k = 0; k < c; ++k)
            v[(n + e) * c + k] = 0.5 * (x.values()[static_cast<std::size_t>(a) * c + k] + x.values()[static_cast<std::size_t>(b) * c + k]);
    }
    std::vector<int> shape = x.shape();
    shape[0] = m;
    return make(std::move(shape), std::move(v), {x}, [edge_parents, n, c](Node& s) {
        double* g = pgrad(s, 0);
        if (!g) return;
        for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) g[i] += s.grad[i];
        for (std::size_t e = 0; e < edge_parents.size(); ++e) {
            const auto [a, b] = edge_parents[e];
            for (int k = 0; k < c; ++k) {
                const double h = 0.5 * s.grad[(n + e) * c + k];
                g[static_cast<std::size_t>(a) * c + k] += h;
                g[static_cast<std::size_t>(b) * c + k] += h;
            }
        }
    });
}

Tensor group_max(const Tensor& x, const std::vector<std::int32_t>& offsets, const std::vector<std::int32_t>& members) {
    const int c = x.cols();
    if (offsets.empty()) throw std::invalid_argument("group_max: empty offsets");
    const int groups = static_cast<int>(offsets.size()) - 1;
    std::vector<double> v(static_cast<std::size_t>(groups) * c);
    std::vector<std::size_t> arg(v.size());
    for (int gi = 0; gi < groups; ++gi) {
        if (offsets[gi] >= offsets[gi + 1]) throw std::invalid_argument("group_max: empty group");
        for (int k = 0; k < c; ++k) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t bi = 0;
            for (int m = offsets[gi]; m < offsets[gi + 1]; ++m) {
                const std::size_t ii = static_cast<std::size_t>(members[m]) * c + k;
                if (x.values()[ii] > best) best = x.values()[ii], bi = ii;
            }
            v[static_cast<std::size_t>(gi) * c + k] = best;
            arg[static_cast<std::size_t>(gi) * c + k] = bi;
        }
    }
    return make({groups, c}, std::move(v), {x}, [arg = std::move(arg)](Node& s) {
        if (double* g = pgrad(s, 0))
            for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += s.grad[i];
    });
}

}  // namespace cortexflow::ad
