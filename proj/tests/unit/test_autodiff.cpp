#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "routelab/autodiff/adam.hpp"
#include "routelab/autodiff/gradcheck.hpp"
#include "routelab/autodiff/linear.hpp"
#include "routelab/autodiff/rng.hpp"
#include "routelab/autodiff/tape.hpp"

using namespace routelab::ad;

namespace {

Parameter random_param(const char* name, Shape shape, Rng& rng, double scale = 1.0)
{
    return Parameter(name, gaussian_tensor(std::move(shape), scale, rng));
}

constexpr double kGradTol = 1e-4;

} // namespace

TEST_CASE("softmax of equal logits is uniform")
{
    Tape tape;
    Var p = softmax(tape.constant(Tensor::row({0, 0, 0, 0})));
    for (double v : p.value().data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("sigmoid inverts logit")
{
    Tape tape;
    Var s = sigmoid(tape.constant(Tensor::scalar(std::log(9.0))));
    CHECK(s.value().item() == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(std::log(9.0) == doctest::Approx(2.19722).epsilon(1e-5));
}

TEST_CASE("mse of identical inputs is zero")
{
    Tape tape;
    Var a = tape.constant(Tensor::row({1, 2}));
    CHECK(mse_loss(a, a).value().item() == 0.0);
}

TEST_CASE("linear loss has the input as gradient")
{
    Parameter w("w", Tensor::scalar(2.0));
    w.grad = Tensor(w.value.shape());
    Tape tape;
    Var loss = mul(tape.param(w), tape.constant(Tensor::scalar(3.0)));
    tape.backward(loss);
    CHECK(w.grad.item() == 3.0);
}

TEST_CASE("scalar recurrence gradient matches hand derivation and finite differences")
{
    // h_t = beta*h_{t-1} + 1, h_0 = 0: h_3 = 1 + beta + beta^2, dh_3/dbeta = 1 + 2 beta.
    Parameter beta("beta", Tensor::scalar(0.5));
    auto build = [&](Tape& tape) {
        Var b = tape.param(beta);
        Var one = tape.constant(Tensor::scalar(1.0));
        Var h = tape.constant(Tensor::scalar(0.0));
        for (int t = 0; t < 3; ++t) h = add(mul(b, h), one);
        return h;
    };
    beta.grad = Tensor(beta.value.shape());
    {
        Tape tape;
        Var h = build(tape);
        CHECK(h.value().item() == doctest::Approx(1.75));
        tape.backward(h);
    }
    CHECK(beta.grad.item() == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(check_gradients({&beta}, build).max_rel_error <= kGradTol);
}

TEST_CASE("softmax cross-entropy gradient at uniform logits is p minus onehot")
{
    Parameter z("z", Tensor::row({0, 0, 0, 0}));
    z.grad = Tensor(z.value.shape());
    Tape tape;
    const int label[] = {0};
    tape.backward(cross_entropy(tape.param(z), label));
    const double expected[] = {-0.75, 0.25, 0.25, 0.25};
    for (int i = 0; i < 4; ++i) CHECK(z.grad[i] == doctest::Approx(expected[i]).epsilon(1e-14));
}

TEST_CASE("backward twice without reset is an error")
{
    Parameter w("w", Tensor::scalar(1.0));
    Tape tape;
    Var loss = scale(tape.param(w), 2.0);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
    tape.reset();
    CHECK_NOTHROW(tape.backward(scale(tape.param(w), 2.0)));
}

TEST_CASE("backward requires a scalar loss")
{
    Tape tape;
    Parameter w("w", Tensor::row({1, 2}));
    CHECK_THROWS(tape.backward(tape.param(w)));
}

TEST_CASE("shape mismatch names the op and shapes")
{
    Tape tape;
    Var a = tape.constant(Tensor(Shape{2, 3}));
    Var b = tape.constant(Tensor(Shape{4, 3}));
    try {
        matmul(a, b);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS(add(a, b));
}

TEST_CASE("cross-entropy rejects out-of-range class")
{
    Tape tape;
    const int label[] = {4};
    CHECK_THROWS_AS(cross_entropy(tape.constant(Tensor::row({0, 0, 0, 0})), label),
                    std::out_of_range);
}

TEST_CASE("unreachable and detached parameters receive exactly zero gradient")
{
    Rng rng(3);
    Parameter a = random_param("a", {2, 3}, rng);
    Parameter b = random_param("b", {2, 3}, rng);
    Parameter c = random_param("c", {2, 3}, rng);
    for (Parameter* p : {&a, &b, &c}) p->grad = Tensor(p->value.shape(), 7.0);
    for (Parameter* p : {&a, &b, &c}) p->zero_grad();
    Tape tape;
    Var va = tape.param(a);
    Var vb = tape.param(b);
    tape.param(c);  // on the tape, never used
    Var loss = sum(mul(va, detach(sigmoid(vb))));
    tape.backward(loss);
    for (double g : b.grad.data()) CHECK(g == 0.0);
    for (double g : c.grad.data()) CHECK(g == 0.0);
    double norm = 0;
    for (double g : a.grad.data()) norm += std::abs(g);
    CHECK(norm > 0.0);
}

TEST_CASE("constant-only expressions are not recorded as differentiable")
{
    Tape tape;
    Var x = tape.constant(Tensor::row({1, 2}));
    Var y = sigmoid(add(x, x));
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite-difference oracle for every op")
{
    Rng rng(11);
    Parameter a = random_param("a", {3, 4}, rng);
    Parameter b = random_param("b", {4, 5}, rng);
    Parameter c = random_param("c", {3, 4}, rng);
    Parameter r = random_param("r", {1, 4}, rng);
    Parameter s = random_param("s", {}, rng);
    Tensor target = gaussian_tensor({3, 4}, 1.0, rng);
    const std::vector<int> labels = {2, -1, 0};
    const std::vector<double> weights = {1.0, 3.0, 5.0};
    const Tensor mix = gaussian_tensor({8, 2}, 1.0, rng);

    struct Case {
        const char* name;
        std::vector<Parameter*> params;
        std::function<Var(Tape&)> loss;
    };
    const std::vector<Case> cases = {
        {"matmul", {&a, &b}, [&](Tape& t) { return sum(sigmoid(matmul(t.param(a), t.param(b)))); }},
        {"add+broadcast", {&a, &r}, [&](Tape& t) { return sum(sigmoid(add(t.param(a), t.param(r)))); }},
        {"sub+broadcast", {&a, &r}, [&](Tape& t) { return sum(sigmoid(sub(t.param(a), t.param(r)))); }},
        {"mul", {&a, &c}, [&](Tape& t) { return sum(mul(t.param(a), t.param(c))); }},
        {"mul+row", {&a, &r}, [&](Tape& t) { return sum(sigmoid(mul(t.param(r), t.param(a)))); }},
        {"mul+scalar", {&a, &s}, [&](Tape& t) { return sum(sigmoid(mul(t.param(a), t.param(s)))); }},
        {"scale", {&a}, [&](Tape& t) { return sum(sigmoid(scale(t.param(a), -1.7))); }},
        {"relu", {&a}, [&](Tape& t) { return sum(mul(relu(t.param(a)), t.param(a))); }},
        {"gelu", {&a}, [&](Tape& t) { return sum(gelu(t.param(a))); }},
        {"softmax", {&a, &c},
         [&](Tape& t) { return sum(mul(softmax(t.param(a)), t.param(c))); }},
        {"concat", {&a, &c},
         [&](Tape& t) {
             const Var parts[] = {t.param(a), sigmoid(t.param(c))};
             return sum(sigmoid(matmul(concat(parts), t.constant(mix))));
         }},
        {"concat_rows+slices", {&a, &c},
         [&](Tape& t) {
             const Var parts[] = {t.param(a), t.param(c)};
             Var all = concat_rows(parts);
             return sum(mul(slice_rows(all, 2, 3), sigmoid(slice_cols(slice_rows(all, 1, 3), 0, 4))));
         }},
        {"slice_cols", {&a},
         [&](Tape& t) { return sum(sigmoid(slice_cols(t.param(a), 1, 2))); }},
        {"row_sum", {&a}, [&](Tape& t) { return sum(sigmoid(row_sum(t.param(a)))); }},
        {"gather_rows", {&a},
         [&](Tape& t) {
             const int idx[] = {2, 0, 2, 1, 2};
             return sum(sigmoid(gather_rows(t.param(a), idx)));
         }},
        {"mean", {&a}, [&](Tape& t) { return mean(mul(t.param(a), t.param(a))); }},
        {"mse", {&a}, [&](Tape& t) { return mse_loss(t.param(a), t.constant(target)); }},
        {"cross_entropy", {&a}, [&](Tape& t) { return cross_entropy(t.param(a), labels); }},
        {"weighted cross_entropy", {&a},
         [&](Tape& t) { return cross_entropy(t.param(a), labels, weights); }},
    };
    for (const Case& c : cases) {
        CAPTURE(c.name);
        const GradCheckResult res = check_gradients(c.params, c.loss);
        CAPTURE(res.worst_param);
        CHECK(res.checked > 0);
        CHECK(res.max_rel_error <= kGradTol);
    }
}

TEST_CASE("weighted cross-entropy averages over labelled rows with non-zero weight")
{
    Tape tape;
    Var z = tape.constant(Tensor::matrix(3, 2, {0, 0, 0, 0, 0, 0}));
    const int labels[] = {0, 1, -1};
    const double w[] = {1.0, 0.0, 4.0};
    // only row 0 counts: log 2 * 1 / 1
    CHECK(cross_entropy(z, labels, w).value().item() == doctest::Approx(std::log(2.0)));
    const double w2[] = {1.0, 3.0, 4.0};
    // (1 + 3) log 2 / 2
    CHECK(cross_entropy(z, labels, w2).value().item() == doctest::Approx(2.0 * std::log(2.0)));
}

TEST_CASE("softmax rows sum to one within 1e-12 for extreme logits")
{
    Rng rng(5);
    Tensor z = gaussian_tensor({64, 7}, 40.0, rng);
    Tensor p = softmax_rows(z);
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            CHECK(p.at(r, c) >= 0.0);
            s += p.at(r, c);
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged")
{
    Rng rng(1);
    Parameter p = random_param("p", {2, 2}, rng);
    const Tensor before = p.value;
    p.grad = Tensor(p.value.shape());
    Adam opt({&p});
    opt.step();
    CHECK(opt.step_count() == 1);
    for (std::size_t i = 0; i < p.value.size(); ++i) CHECK(p.value[i] == before[i]);
}

TEST_CASE("adam: first step moves a scalar by about lr")
{
    Parameter p("p", Tensor::scalar(1.0));
    p.grad = Tensor::scalar(1.0);
    Adam opt({&p});
    opt.step();
    // m_hat = 1, v_hat = 1 => update = lr * 1 / (1 + eps)
    CHECK(p.value.item() == doctest::Approx(1.0 - 3e-3 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(p.grad.item() == 0.0);
}

TEST_CASE("adam: identical params with identical grads stay identical")
{
    Parameter p("p", Tensor::row({0.3, -0.2}));
    Parameter q("q", Tensor::row({0.3, -0.2}));
    Adam opt({&p, &q});
    for (int k = 0; k < 5; ++k) {
        p.grad = Tensor::row({0.1 * k, -0.5});
        q.grad = p.grad;
        opt.step();
    }
    for (std::size_t i = 0; i < 2; ++i) CHECK(p.value[i] == q.value[i]);
}

TEST_CASE("adam: NaN gradient is a hard error naming the parameter")
{
    Parameter p("router.w", Tensor::scalar(1.0));
    p.grad = Tensor::scalar(std::nan(""));
    Adam opt({&p});
    try {
        opt.step();
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("router.w") != std::string::npos);
    }
}

TEST_CASE("rng: same seed gives bitwise identical streams")
{
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const double x = a.normal();
        const double y = b.normal();
        CHECK(std::memcmp(&x, &y, sizeof x) == 0);
    }
    Rng c = Rng::stream(42, "data"), d = Rng::stream(42, "data"), e = Rng::stream(42, "init");
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto u = c.next_u64();
        CHECK(u == d.next_u64());
        differs |= u != e.next_u64();
    }
    CHECK(differs);
}

TEST_CASE("rng: gaussian moments over 1e6 draws")
{
    Rng rng(1);
    const int n = 1'000'000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double sd = std::sqrt(s2 / n - mean * mean);
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(sd - 1.0) < 0.01);
}

TEST_CASE("rng: categorical frequencies over 1e5 draws")
{
    Rng rng(2);
    const std::vector<double> p = {0.7, 0.15, 0.15};
    std::vector<int> count(3, 0);
    const int n = 100'000;
    for (int i = 0; i < n; ++i) ++count[rng.categorical(p)];
    for (int k = 0; k < 3; ++k) CHECK(std::abs(count[k] / double(n) - p[k]) < 0.01);
}

TEST_CASE("rng: uniform lies in [0, 1) and uniform_index covers its range")
{
    Rng rng(9);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        ++seen[rng.uniform_index(5)];
    }
    for (int c : seen) CHECK(c > 1800);
}
