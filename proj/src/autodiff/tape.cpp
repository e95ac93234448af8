#include "routelab/autodiff/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace routelab::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t)
{
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                    static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t)
{
    return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b)
{
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

Tape& tape_of(const Var& a)
{
    if (!a.valid()) throw std::invalid_argument("op on an unbound Var");
    return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b)
{
    Tape& t = tape_of(a);
    if (b.tape() != &t) throw std::invalid_argument("op mixes Vars from different tapes");
    return t;
}

constexpr double kGeluC = 0.7978845608028654; // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

// Shape of a broadcast elementwise result, or throws.
Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() == b.shape()) return a.shape();
    const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    const bool rows_ok = ar == br || ar == 1 || br == 1;
    const bool cols_ok = ac == bc || ac == 1 || bc == 1;
    if (!rows_ok || !cols_ok) shape_error(op, a.shape(), b.shape());
    return Shape{std::max(ar, br), std::max(ac, bc)};
}

// Sums `g` (out-shaped) down to the shape of an operand that was broadcast.
void accumulate_reduced(Tensor& dst, const Tensor& g)
{
    if (dst.size() == g.size()) {
        auto d = dst.data();
        auto s = g.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
        return;
    }
    const std::size_t gr = g.rows(), gc = g.cols();
    const std::size_t dr = dst.rows(), dc = dst.cols();
    for (std::size_t r = 0; r < gr; ++r) {
        const std::size_t rr = dr == 1 ? 0 : r;
        for (std::size_t c = 0; c < gc; ++c) {
            dst.at(rr, dc == 1 ? 0 : c) += g.at(r, c);
        }
    }
}

template <typename F>
Tensor broadcast_apply(const char* op, const Tensor& a, const Tensor& b, F f)
{
    Tensor out(broadcast_shape(op, a, b));
    if (a.size() == b.size()) {
        auto o = out.data();
        auto x = a.data();
        auto y = b.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
        return out;
    }
    const std::size_t rows = out.rows(), cols = out.cols();
    const bool ar1 = a.rows() == 1, ac1 = a.cols() == 1;
    const bool br1 = b.rows() == 1, bc1 = b.cols() == 1;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out.at(r, c) = f(a.at(ar1 ? 0 : r, ac1 ? 0 : c), b.at(br1 ? 0 : r, bc1 ? 0 : c));
        }
    }
    return out;
}

// Unary elementwise op with derivative expressed via (input, output).
template <typename Fwd, typename Deriv>
Var unary(const char* op, const Var& a, Fwd fwd, Deriv deriv)
{
    Tape& tape = tape_of(a);
    const Tensor& x = a.value();
    Tensor out(x.shape());
    {
        auto o = out.data();
        auto in = x.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
    }
    const int ia = a.id();
    return tape.record(op, std::move(out), {ia}, [ia, deriv](Tape& t, int self) {
        if (!t.node(ia).requires_grad) return;
        const Tape::Node& n = t.node(self);
        auto g = n.grad.data();
        auto y = n.value.data();
        auto x = t.node(ia).value.data();
        auto d = t.grad_of(ia).data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * deriv(x[i], y[i]);
    });
}

} // namespace

// --- Parameter / Var -----------------------------------------------------------

Parameter::Parameter(std::string n, Tensor v)
  : name(std::move(n)), value(std::move(v)), grad(value.shape())
{ }

const Tensor& Var::value() const
{
    if (!tape_) throw std::logic_error("Var::value on an unbound Var");
    return tape_->node(id_).value;
}

bool Var::requires_grad() const { return tape_ && tape_->node(id_).requires_grad; }

// --- Tape ------------------------------------------------------------------------

Var Tape::constant(Tensor value)
{
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p)
{
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    Node n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    n.op = "param";
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<int> inputs, Backward backward)
{
    if (backward_done_) throw std::logic_error(std::string(op) + ": tape already differentiated");
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](int i) { return node(i).requires_grad; });
    if (n.requires_grad) {
        n.inputs = std::move(inputs);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor& Tape::grad_of(int id)
{
    Node& n = node(id);
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(const Var& loss)
{
    if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
    if (backward_done_) {
        throw std::logic_error("backward: called twice on the same tape without reset()");
    }
    if (!loss.value().is_scalar()) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    }
    backward_done_ = true;
    if (!node(loss.id()).requires_grad) return;

    grad_of(loss.id()).fill(1.0);
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = node(i);
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param) {
            auto dst = n.param->grad.data();
            auto src = n.grad.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
}

void Tape::reset()
{
    nodes_.clear();
    backward_done_ = false;
}

// --- plain helpers ---------------------------------------------------------------

double sigmoid_value(double x)
{
    // Clamped to the open interval so derived decays stay strictly inside (0, 1).
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return std::clamp(s, lo, hi);
}

double gelu_value(double x)
{
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

Tensor softmax_rows(const Tensor& logits)
{
    Tensor out(logits.shape());
    const std::size_t rows = logits.rows(), cols = logits.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = logits.data().data() + r * cols;
        double* o = out.data().data() + r * cols;
        const double m = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - m);
            z += o[c];
        }
        for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
    }
    return out;
}

// --- ops -----------------------------------------------------------------------

Var matmul(const Var& a, const Var& b)
{
    Tape& tape = tape_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape().size() != 2 || y.shape().size() != 2 || x.cols() != y.rows()) {
        shape_error("matmul", x.shape(), y.shape());
    }
    Tensor out(Shape{x.rows(), y.cols()});
    as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
    const int ia = a.id(), ib = b.id();
    return tape.record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(ia).requires_grad) {
            as_matrix(t.grad_of(ia)).noalias() += as_matrix(g) * as_matrix(t.node(ib).value).transpose();
        }
        if (t.node(ib).requires_grad) {
            as_matrix(t.grad_of(ib)).noalias() += as_matrix(t.node(ia).value).transpose() * as_matrix(g);
        }
    });
}

Var add(const Var& a, const Var& b)
{
    Tape& tape = tape_of(a, b);
    Tensor out = broadcast_apply("add", a.value(), b.value(), [](double x, double y) { return x + y; });
    const int ia = a.id(), ib = b.id();
    return tape.record("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(ia).requires_grad) accumulate_reduced(t.grad_of(ia), g);
        if (t.node(ib).requires_grad) accumulate_reduced(t.grad_of(ib), g);
    });
}

Var sub(const Var& a, const Var& b)
{
    Tape& tape = tape_of(a, b);
    Tensor out = broadcast_apply("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
    const int ia = a.id(), ib = b.id();
    return tape.record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        if (t.node(ia).requires_grad) accumulate_reduced(t.grad_of(ia), g);
        if (t.node(ib).requires_grad) {
            Tensor neg = g;
            for (double& v : neg.data()) v = -v;
            accumulate_reduced(t.grad_of(ib), neg);
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    Tape& tape = tape_of(a, b);
    Tensor out = broadcast_apply("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
    const int ia = a.id(), ib = b.id();
    return tape.record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.node(ia).value;
        const Tensor& y = t.node(ib).value;
        if (t.node(ia).requires_grad) {
            accumulate_reduced(t.grad_of(ia), broadcast_apply("mul", g, y, [](double p, double q) { return p * q; }));
        }
        if (t.node(ib).requires_grad) {
            accumulate_reduced(t.grad_of(ib), broadcast_apply("mul", g, x, [](double p, double q) { return p * q; }));
        }
    });
}

Var scale(const Var& a, double factor)
{
    return unary(
        "scale", a, [factor](double x) { return factor * x; },
        [factor](double, double) { return factor; });
}

Var sigmoid(const Var& a)
{
    return unary(
        "sigmoid", a, [](double x) { return sigmoid_value(x); },
        [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a)
{
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a)
{
    // Vectorised: tanh(u) = 1 - 2 / (exp(2u) + 1), which saturates cleanly at
    // both ends. tanh is kept for the backward pass.
    Tape& tape = tape_of(a);
    const Tensor& x = a.value();
    auto th = std::make_shared<Tensor>(x.shape());
    Tensor out(x.shape());
    {
        Eigen::Map<const Eigen::ArrayXd> xa(x.data().data(), static_cast<Eigen::Index>(x.size()));
        Eigen::Map<Eigen::ArrayXd> ta(th->data().data(), static_cast<Eigen::Index>(x.size()));
        Eigen::Map<Eigen::ArrayXd> oa(out.data().data(), static_cast<Eigen::Index>(x.size()));
        ta = 1.0 - 2.0 / ((2.0 * kGeluC * (xa + kGeluA * xa.cube())).exp() + 1.0);
        oa = 0.5 * xa * (1.0 + ta);
    }
    const int ia = a.id();
    return tape.record("gelu", std::move(out), {ia}, [ia, th](Tape& t, int self) {
        if (!t.node(ia).requires_grad) return;
        const Tape::Node& n = t.node(self);
        const auto size = static_cast<Eigen::Index>(n.grad.size());
        Eigen::Map<const Eigen::ArrayXd> g(n.grad.data().data(), size);
        Eigen::Map<const Eigen::ArrayXd> xa(t.node(ia).value.data().data(), size);
        Eigen::Map<const Eigen::ArrayXd> ta(th->data().data(), size);
        Eigen::Map<Eigen::ArrayXd> d(t.grad_of(ia).data().data(), size);
        d += g * (0.5 * (1.0 + ta) +
                  0.5 * xa * (1.0 - ta.square()) * kGeluC * (1.0 + 3.0 * kGeluA * xa.square()));
    });
}

Var softmax(const Var& a)
{
    Tape& tape = tape_of(a);
    if (!a.value().all_finite()) throw std::invalid_argument("softmax: non-finite input");
    Tensor out = softmax_rows(a.value());
    const int ia = a.id();
    return tape.record("softmax", std::move(out), {ia}, [ia](Tape& t, int self) {
        const Tape::Node& n = t.node(self);
        Tensor& d = t.grad_of(ia);
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = n.value.data().data() + r * cols;
            const double* g = n.grad.data().data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
            double* o = d.data().data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) o[c] += y[c] * (g[c] - dot);
        }
    });
}

Var concat(std::span<const Var> parts)
{
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Tape& tape = tape_of(parts.front());
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        if (p.tape() != &tape) throw std::invalid_argument("concat: Vars from different tapes");
        if (p.rows() != rows) shape_error("concat", parts.front().shape(), p.shape());
        ids.push_back(p.id());
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Tensor out(Shape{rows, cols});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data().data() + r * widths[k], widths[k], out.data().data() + r * cols + off);
        }
        off += widths[k];
    }
    return tape.record("concat", std::move(out), ids, [ids, widths, rows, cols](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.node(ids[k]).requires_grad) {
                double* d = t.grad_of(ids[k]).data().data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* s = g.data().data() + r * cols + off;
                    for (std::size_t c = 0; c < widths[k]; ++c) d[r * widths[k] + c] += s[c];
                }
            }
            off += widths[k];
        }
    });
}

Var concat_rows(std::span<const Var> parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    Tape& tape = tape_of(parts.front());
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    std::vector<int> ids;
    for (const Var& p : parts) {
        if (p.tape() != &tape) throw std::invalid_argument("concat_rows: Vars from different tapes");
        if (p.cols() != cols) shape_error("concat_rows", parts.front().shape(), p.shape());
        ids.push_back(p.id());
        rows += p.rows();
    }
    Tensor out(Shape{rows, cols});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value().size();
    }
    return tape.record("concat_rows", std::move(out), ids, [ids](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        std::size_t off = 0;
        for (int id : ids) {
            const std::size_t n = t.node(id).value.size();
            if (t.node(id).requires_grad) {
                auto d = t.grad_of(id).data();
                for (std::size_t i = 0; i < n; ++i) d[i] += g[off + i];
            }
            off += n;
        }
    });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count)
{
    Tape& tape = tape_of(a);
    const Tensor& x = a.value();
    if (begin + count > x.rows()) {
        throw std::invalid_argument("slice_rows: rows [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") out of range for " +
                                    shape_str(x.shape()));
    }
    const std::size_t cols = x.cols();
    std::vector<double> vals(x.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                             x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
    const int ia = a.id();
    return tape.record("slice_rows", Tensor(Shape{count, cols}, std::move(vals)), {ia},
                       [ia, begin, cols](Tape& t, int self) {
                           const Tensor& g = t.node(self).grad;
                           double* d = t.grad_of(ia).data().data() + begin * cols;
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                       });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count)
{
    Tape& tape = tape_of(a);
    const Tensor& x = a.value();
    if (begin + count > x.cols()) {
        throw std::invalid_argument("slice_cols: cols [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") out of range for " +
                                    shape_str(x.shape()));
    }
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor out(Shape{rows, count});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data().data() + r * cols + begin, count, out.data().data() + r * count);
    }
    const int ia = a.id();
    return tape.record("slice_cols", std::move(out), {ia}, [ia, begin, count, rows, cols](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        double* d = t.grad_of(ia).data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < count; ++c) d[r * cols + begin + c] += g[r * count + c];
        }
    });
}

Var sum(const Var& a)
{
    Tape& tape = tape_of(a);
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    const int ia = a.id();
    return tape.record("sum", Tensor::scalar(s), {ia}, [ia](Tape& t, int self) {
        const double g = t.node(self).grad[0];
        for (double& d : t.grad_of(ia).data()) d += g;
    });
}

Var row_sum(const Var& a)
{
    Tape& tape = tape_of(a);
    const Tensor& x = a.value();
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor out(Shape{rows, 1});
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += x[r * cols + c];
        out[r] = s;
    }
    const int ia = a.id();
    return tape.record("row_sum", std::move(out), {ia}, [ia, rows, cols](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        double* d = t.grad_of(ia).data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += g[r];
        }
    });
}

Var gather_rows(const Var& table, std::span<const int> indices)
{
    Tape& tape = tape_of(table);
    const Tensor& w = table.value();
    const std::size_t n = w.rows(), cols = w.cols();
    Tensor out(Shape{indices.size(), cols});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= n) {
            throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) +
                                    " out of range for table " + shape_str(w.shape()));
        }
        std::copy_n(w.data().data() + indices[i] * cols, cols, out.data().data() + i * cols);
    }
    std::vector<int> idx(indices.begin(), indices.end());
    const int it = table.id();
    return tape.record("gather_rows", std::move(out), {it},
                       [it, cols, idx = std::move(idx)](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        double* d = t.grad_of(it).data().data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* src = g.data().data() + i * cols;
            double* dst = d + static_cast<std::size_t>(idx[i]) * cols;
            for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
    });
}

Var mean(const Var& a)
{
    const std::size_t n = a.value().size();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mse_loss(const Var& prediction, const Var& target)
{
    Tape& tape = tape_of(prediction, target);
    const Tensor& p = prediction.value();
    const Tensor& y = target.value();
    if (p.size() != y.size() || p.cols() != y.cols()) shape_error("mse_loss", p.shape(), y.shape());
    if (p.size() == 0) throw std::invalid_argument("mse_loss: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - y[i];
        s += d * d;
    }
    const double n = static_cast<double>(p.size());
    const int ip = prediction.id(), iy = target.id();
    return tape.record("mse_loss", Tensor::scalar(s / n), {ip, iy}, [ip, iy, n](Tape& t, int self) {
        const double g = t.node(self).grad[0];
        const Tensor& p = t.node(ip).value;
        const Tensor& y = t.node(iy).value;
        const bool gp = t.node(ip).requires_grad, gy = t.node(iy).requires_grad;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = 2.0 * g * (p[i] - y[i]) / n;
            if (gp) t.grad_of(ip)[i] += d;
            if (gy) t.grad_of(iy)[i] -= d;
        }
    });
}

Var cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> weights)
{
    Tape& tape = tape_of(logits);
    const Tensor& z = logits.value();
    const std::size_t rows = z.rows(), cols = z.cols();
    if (labels.size() != rows) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for logits " + shape_str(z.shape()));
    }
    if (!weights.empty() && weights.size() != rows) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(weights.size()) +
                                    " weights for logits " + shape_str(z.shape()));
    }
    if (!z.all_finite()) throw std::invalid_argument("cross_entropy: non-finite logits");

    Tensor prob = softmax_rows(z);
    std::vector<double> w(rows, 0.0);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const int y = labels[r];
        if (y == -1) continue;
        if (y < 0 || static_cast<std::size_t>(y) >= cols) {
            throw std::out_of_range("cross_entropy: class index " + std::to_string(y) +
                                    " out of range for " + std::to_string(cols) + " classes");
        }
        w[r] = weights.empty() ? 1.0 : weights[r];
        if (w[r] == 0.0) continue;
        ++counted;
        const double* row = z.data().data() + r * cols;
        const double m = *std::max_element(row, row + cols);
        double lse = 0.0;
        for (std::size_t c = 0; c < cols; ++c) lse += std::exp(row[c] - m);
        total += w[r] * (m + std::log(lse) - row[y]);
    }
    if (counted == 0) throw std::invalid_argument("cross_entropy: no labelled rows");
    const double n = static_cast<double>(counted);
    std::vector<int> lab(labels.begin(), labels.end());
    const int iz = logits.id();
    return tape.record("cross_entropy", Tensor::scalar(total / n), {iz},
                       [iz, prob = std::move(prob), lab = std::move(lab), w = std::move(w), n, cols](Tape& t, int self) {
                           const double g = t.node(self).grad[0];
                           Tensor& d = t.grad_of(iz);
                           for (std::size_t r = 0; r < lab.size(); ++r) {
                               if (lab[r] < 0 || w[r] == 0.0) continue;
                               const double k = g * w[r] / n;
                               for (std::size_t c = 0; c < cols; ++c) {
                                   d.at(r, c) += k * (prob.at(r, c) - (static_cast<int>(c) == lab[r] ? 1.0 : 0.0));
                               }
                           }
                       });
}

Var detach(const Var& a)
{
    return tape_of(a).constant(a.value());
}

} // namespace routelab::ad
