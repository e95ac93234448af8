#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "routelab/autodiff/adam.hpp"
#include "routelab/autodiff/gradcheck.hpp"
#include "routelab/routing/router.hpp"

using namespace routelab;
using namespace routelab::routing;
using ad::Rng;
using ad::Shape;

namespace {

// Runs `router` over a time-major sequence xs[t] ([B, d] each) and returns
// the gate at each step plus the training loss on `labels[t]`.
struct Trace {
    std::vector<Var> gates;
    std::vector<Var> states;
    Var loss;
};

Trace run_sequence(Tape& tape, Router& r, const std::vector<Tensor>& xs,
                   const std::vector<std::vector<int>>& labels)
{
    Trace out;
    const std::size_t B = xs.front().rows();
    RouterState s = r.begin_sequence(tape, B);
    Var routing;
    std::optional<Var> pred;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        Var x = tape.constant(xs[t]);
        r.step(tape, s, x);
        std::optional<Var> x_hat;
        if (r.config().use_ant) {
            x_hat = r.predict_next(tape, x, s);
            if (t + 1 < xs.size()) {
                Var m = ad::mse_loss(*x_hat, tape.constant(xs[t + 1]));
                pred = pred ? ad::add(*pred, m) : m;
            }
        }
        Var z = r.logits(tape, x, s, x_hat);
        out.gates.push_back(ad::softmax(z));
        out.states.push_back(s.state);
        Var ce = ad::cross_entropy(z, labels[t]);
        routing = routing.valid() ? ad::add(routing, ce) : ce;
    }
    out.loss = combined_loss(routing, pred, r.config().lambda_pred);
    return out;
}

std::vector<Tensor> random_sequence(std::size_t T, std::size_t B, std::size_t d, Rng& rng)
{
    std::vector<Tensor> xs;
    for (std::size_t t = 0; t < T; ++t) xs.push_back(ad::gaussian_tensor({B, d}, 1.0, rng));
    return xs;
}

std::vector<std::vector<int>> random_labels(std::size_t T, std::size_t B, std::size_t n, Rng& rng)
{
    std::vector<std::vector<int>> out(T, std::vector<int>(B));
    for (auto& row : out) {
        for (int& y : row) y = static_cast<int>(rng.uniform_index(n));
    }
    return out;
}

GateConfig config(bool beta, bool pi, bool ant)
{
    GateConfig c;
    c.use_beta = beta;
    c.use_pi = pi;
    c.use_ant = ant;
    return c;
}

} // namespace

TEST_CASE("beta step: scalar geometric sum")
{
    GateConfig c = config(true, false, false);
    c.beta_init = 0.5;
    Rng init(0);
    Router r(c, 1, 2, init);
    Tape tape;
    RouterState s = r.begin_sequence(tape, 1);
    const double expected[] = {1.0, 1.5, 1.75};
    for (double e : expected) {
        r.step(tape, s, tape.constant(Tensor::scalar(1.0).reshaped({1, 1})));
        CHECK(s.state.value().item() == doctest::Approx(e).epsilon(1e-15));
    }
}

TEST_CASE("beta step: saturation follows (1 - beta^(t+1)) / (1 - beta)")
{
    GateConfig c = config(true, false, false);
    Rng init(0);
    Router r(c, 4, 4, init);
    Tape tape;
    RouterState s = r.begin_sequence(tape, 1);
    double prev = 0;
    for (int t = 0; t < 6; ++t) {
        r.step(tape, s, tape.constant(Tensor::row({1, 1, 1, 1})));
        const double closed = (1 - std::pow(0.9, t + 1)) / (1 - 0.9);
        for (double v : s.state.value().data()) CHECK(v == doctest::Approx(closed).epsilon(1e-12));
        CHECK(s.state.value()[0] > prev);
        prev = s.state.value()[0];
    }
}

TEST_CASE("beta step: h_t equals the explicit weighted sum within 1e-10")
{
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 1 + rng.uniform_index(8);
        const std::size_t T = 1 + rng.uniform_index(16);
        GateConfig c = config(true, false, false);
        Router r(c, d, 4, rng);
        for (double& raw : r.memory->beta_raw.value.data()) raw = rng.normal(0.0, 2.0);
        const std::vector<double> beta = r.memory->values();
        const auto xs = random_sequence(T, 3, d, rng);
        Tape tape;
        RouterState s = r.begin_sequence(tape, 3);
        for (std::size_t t = 0; t < T; ++t) {
            r.step(tape, s, tape.constant(xs[t]));
            for (std::size_t b = 0; b < 3; ++b) {
                for (std::size_t j = 0; j < d; ++j) {
                    double explicit_sum = 0;
                    for (std::size_t k = 0; k <= t; ++k) {
                        explicit_sum += std::pow(beta[j], double(t - k)) * xs[k].at(b, j);
                    }
                    CHECK(std::abs(s.state.value().at(b, j) - explicit_sum) <= 1e-10);
                }
            }
        }
    }
}

TEST_CASE("beta step: dimension mismatch is a hard error")
{
    Rng init(0);
    Router r(config(true, false, false), 4, 4, init);
    Tape tape;
    RouterState s = r.begin_sequence(tape, 2);
    CHECK_THROWS_AS(r.step(tape, s, tape.constant(Tensor(Shape{2, 3}))), std::invalid_argument);
    CHECK_THROWS_AS(r.step(tape, s, tape.constant(Tensor(Shape{3, 4}))), std::invalid_argument);
}

TEST_CASE("membrane variant: U update with soft cap")
{
    GateConfig c = config(true, false, false);
    c.beta_variant = BetaVariant::per_expert_membrane_cap;
    c.beta_init = 0.5;
    Rng init(0);
    Router r(c, 2, 2, init);
    r.affinity_map.weight.value = Tensor::matrix(2, 2, {2, 0, 0, 0.5});
    r.affinity_map.bias->value.fill(0.0);
    Tape tape;
    RouterState s = r.begin_sequence(tape, 1);
    CHECK(s.state.cols() == 2);
    // drive = W x = [2, 0.5] for x = [1, 1]
    double u0 = 0, u1 = 0;
    for (int t = 0; t < 4; ++t) {
        r.step(tape, s, tape.constant(Tensor::row({1, 1})));
        const double n0 = 0.5 * u0 + 2.0 - std::max(0.0, u0 - 1.0);
        const double n1 = 0.5 * u1 + 0.5 - std::max(0.0, u1 - 1.0);
        u0 = n0;
        u1 = n1;
        CHECK(s.state.value()[0] == doctest::Approx(u0).epsilon(1e-14));
        CHECK(s.state.value()[1] == doctest::Approx(u1).epsilon(1e-14));
    }
    GateConfig bad = c;
    bad.use_ant = true;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("gate: zero logits stay uniform under any precision")
{
    GateConfig c = config(false, true, false);
    Rng init(0);
    Router r(c, 3, 4, init);
    r.affinity_map.weight.value.fill(0.0);
    r.tracker->set_variance({0.07, 0.3, 2.3, 0.3});
    Tape tape;
    RouterState s = r.begin_sequence(tape, 2);
    Var x = tape.constant(Tensor(Shape{2, 3}, 1.0));
    r.step(tape, s, x);
    for (double v : r.gate(tape, x, s).value().data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("gate: precision sharpens equal positive logits toward the reliable expert")
{
    GateConfig c = config(false, true, false);
    c.pi_eps0 = 1e-4;
    Rng init(0);
    Router r(c, 1, 4, init);
    r.affinity_map.weight.value.fill(0.5);
    const std::vector<double> pi = {13.5, 3.1, 0.43, 3.1};
    std::vector<double> var;
    for (double p : pi) var.push_back(1.0 / p - c.pi_eps0);
    r.tracker->set_variance(var);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.tracker->pi()[i] == doctest::Approx(pi[i]).epsilon(1e-12));
    Tape tape;
    RouterState s = r.begin_sequence(tape, 1);
    Var x = tape.constant(Tensor::row({1.0}));
    r.step(tape, s, x);
    const Tensor g = r.gate(tape, x, s).value();
    CHECK(std::max_element(g.data().begin(), g.data().end()) - g.data().begin() == 0);
    CHECK(g[0] > 0.95);
}

TEST_CASE("gate: beta -> 0 reduces to the baseline gate")
{
    Rng rng(4);
    Router base(config(false, false, false), 6, 4, rng);
    Router mem(config(true, false, false), 6, 4, rng);
    mem.affinity_map.weight.value = base.affinity_map.weight.value;
    mem.affinity_map.bias->value = ad::gaussian_tensor({1, 4}, 1.0, rng);
    base.affinity_map.bias->value = mem.affinity_map.bias->value;
    mem.memory->beta_raw.value.fill(-30.0);
    const auto xs = random_sequence(5, 8, 6, rng);
    const auto labels = random_labels(5, 8, 4, rng);
    Tape tape;
    const Trace a = run_sequence(tape, base, xs, labels);
    const Trace b = run_sequence(tape, mem, xs, labels);
    double worst = 0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        for (std::size_t i = 0; i < a.gates[t].value().size(); ++i) {
            worst = std::max(worst, std::abs(a.gates[t].value()[i] - b.gates[t].value()[i]));
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("gate: anticipatory gate without x_hat is a hard error")
{
    Rng init(0);
    Router r(config(false, false, true), 4, 4, init);
    Tape tape;
    RouterState s = r.begin_sequence(tape, 1);
    Var x = tape.constant(Tensor(Shape{1, 4}));
    r.step(tape, s, x);
    CHECK_THROWS_AS(r.gate(tape, x, s), std::logic_error);
    Router plain(config(false, false, false), 4, 4, init);
    CHECK_THROWS_AS(plain.predict_next(tape, x, s), std::logic_error);
}

TEST_CASE("predictor: zero weights give zero output")
{
    Rng init(0);
    Router r(config(true, false, true), 4, 4, init);
    std::vector<Parameter*> ps;
    r.predictor->collect(ps);
    for (Parameter* p : ps) p->value.fill(0.0);
    Rng rng(1);
    Tape tape;
    RouterState s = r.begin_sequence(tape, 3);
    Var x = tape.constant(ad::gaussian_tensor({3, 4}, 5.0, rng));
    r.step(tape, s, x);
    for (double v : r.predict_next(tape, x, s).value().data()) CHECK(v == 0.0);
}

TEST_CASE("gate compositions: analytic gradients match finite differences")
{
    struct Variant {
        const char* name;
        GateConfig cfg;
    };
    std::vector<Variant> variants = {
        {"baseline", config(false, false, false)},
        {"beta", config(true, false, false)},
        {"pi", config(false, true, false)},
        {"beta+pi", config(true, true, false)},
        {"ant(direct)", config(false, false, true)},
        {"beta+ant(direct)", config(true, false, true)},
        {"beta+pi+ant(direct)", config(true, true, true)},
    };
    GateConfig additive = config(true, true, true);
    additive.predictor_integration = PredictorIntegration::additive;
    variants.push_back({"beta+pi+ant(additive)", additive});
    GateConfig membrane = config(true, false, false);
    membrane.beta_variant = BetaVariant::per_expert_membrane_cap;
    membrane.membrane_theta = 0.3;  // so the cap is active on this instance
    variants.push_back({"membrane", membrane});

    for (const Variant& v : variants) {
        CAPTURE(v.name);
        Rng rng(17);
        Router r(v.cfg, 5, 4, rng);
        if (r.tracker) r.tracker->set_variance({0.2, 0.9, 0.5, 1.4});
        if (r.memory) {
            for (double& raw : r.memory->beta_raw.value.data()) raw = rng.normal(1.0, 1.0);
        }
        const auto xs = random_sequence(6, 3, 5, rng);
        const auto labels = random_labels(6, 3, 4, rng);
        const auto params = r.parameters();
        const ad::GradCheckResult res = ad::check_gradients(params, [&](Tape& tape) {
            return run_sequence(tape, r, xs, labels).loss;
        });
        CAPTURE(res.worst_param);
        CAPTURE(res.worst_index);
        CHECK(res.max_rel_error <= 1e-4);
    }
}

TEST_CASE("parameter set matches enabled mechanisms")
{
    for (int mask = 0; mask < 8; ++mask) {
        const bool beta = mask & 1, pi = mask & 2, ant = mask & 4;
        Rng init(0);
        Router r(config(beta, pi, ant), 4, 4, init);
        std::set<std::string> names;
        for (Parameter* p : r.parameters()) names.insert(p->name);
        CAPTURE(mask);
        CHECK(names.count("router.w.weight") == 1);
        CHECK(names.count("beta_raw") == (beta ? 1u : 0u));
        CHECK(names.count("predictor.hidden.weight") == (ant ? 1u : 0u));
        CHECK(names.count("predictor.w_pred.weight") == 0u);
        CHECK(r.tracker.has_value() == pi);
    }
    GateConfig add = config(false, false, true);
    add.predictor_integration = PredictorIntegration::additive;
    Rng init(0);
    Router r(add, 4, 4, init);
    std::set<std::string> names;
    for (Parameter* p : r.parameters()) names.insert(p->name);
    CHECK(names.count("predictor.w_pred.weight") == 1);

    GateConfig fixed = config(true, false, false);
    fixed.learn_beta = false;
    Router f(fixed, 4, 4, init);
    for (Parameter* p : f.parameters()) CHECK(p->name != "beta_raw");
}

TEST_CASE("gate is permutation-equivariant in the expert axis")
{
    GateConfig c = config(true, true, true);
    c.predictor_integration = PredictorIntegration::additive;
    Rng rng(8);
    Router a(c, 4, 4, rng);
    Router b(c, 4, 4, rng);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};  // b's expert i is a's expert perm[i]
    std::vector<Parameter*> pa = a.parameters(), pb = b.parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) pb[k]->value = pa[k]->value;
    auto permute_cols = [&](const Tensor& src, Tensor& dst) {
        for (std::size_t row = 0; row < src.rows(); ++row) {
            for (std::size_t i = 0; i < 4; ++i) dst.at(row, i) = src.at(row, perm[i]);
        }
    };
    permute_cols(a.affinity_map.weight.value, b.affinity_map.weight.value);
    permute_cols(a.affinity_map.bias->value, b.affinity_map.bias->value);
    permute_cols(a.predictor->correction->weight.value, b.predictor->correction->weight.value);
    const std::vector<double> var = {0.1, 0.4, 0.9, 2.0};
    std::vector<double> var_b(4);
    for (std::size_t i = 0; i < 4; ++i) var_b[i] = var[perm[i]];
    a.tracker->set_variance(var);
    b.tracker->set_variance(var_b);

    const auto xs = random_sequence(4, 5, 4, rng);
    const auto labels = random_labels(4, 5, 4, rng);
    Tape tape;
    const Trace ta = run_sequence(tape, a, xs, labels);
    const Trace tb = run_sequence(tape, b, xs, labels);
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const Tensor& ga = ta.gates[t].value();
        const Tensor& gb = tb.gates[t].value();
        for (std::size_t row = 0; row < ga.rows(); ++row) {
            double s = 0;
            for (std::size_t i = 0; i < 4; ++i) {
                CHECK(gb.at(row, i) == doctest::Approx(ga.at(row, perm[i])).epsilon(1e-13));
                s += ga.at(row, i);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("precision tracker: update arithmetic")
{
    PrecisionTracker tr(1, PrecisionMode::mse, 0.95, 1e-4, 0.5);
    const double signal[] = {0.1};
    tr.update(signal);
    CHECK(tr.variance()[0] == doctest::Approx(0.48).epsilon(1e-15));
    CHECK(tr.pi()[0] == doctest::Approx(1.0 / 0.4801).epsilon(1e-14));
    CHECK(tr.pi()[0] == doctest::Approx(2.0829).epsilon(1e-4));
}

TEST_CASE("precision tracker: constant signal converges to its fixed point")
{
    PrecisionTracker tr(3, PrecisionMode::mse, 0.95, 1e-4, 0.5);
    const double signal[] = {0.1, 2.0, 0.0};
    for (int k = 0; k < 500; ++k) tr.update(signal);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(tr.variance()[i] - signal[i]) <= 1e-6);
    for (double p : tr.pi()) CHECK(p > 0.0);
}

TEST_CASE("precision tracker: correctness signal reaches [2, 1, 2, 1]")
{
    // Half the labels go to expert 0, half to expert 2; 1 and 3 are never right.
    std::vector<int> labels;
    for (int b = 0; b < 512; ++b) labels.push_back(b % 2 == 0 ? 0 : 2);
    labels.push_back(-1);
    const std::vector<double> sig = correctness_signal(labels, 4);
    CHECK(sig == std::vector<double>{0.5, 1.0, 0.5, 1.0});
    PrecisionTracker tr(4, PrecisionMode::correctness, 0.95, 1e-4, 0.5);
    for (int k = 0; k < 800; ++k) tr.update(sig);
    const double expected[] = {2.0, 1.0, 2.0, 1.0};
    for (int i = 0; i < 4; ++i) CHECK(tr.pi()[i] == doctest::Approx(expected[i]).epsilon(1e-3));
    CHECK_THROWS(correctness_signal(std::vector<int>{5}, 4));
    CHECK_THROWS(correctness_signal(std::vector<int>{-1}, 4));
}

TEST_CASE("precision tracker: invalid signals are rejected")
{
    PrecisionTracker tr(2, PrecisionMode::mse, 0.95, 1e-4, 0.5);
    CHECK_THROWS_AS(tr.update(std::vector<double>{0.1, -0.2}), std::invalid_argument);
    CHECK_THROWS_AS(tr.update(std::vector<double>{0.1, std::nan("")}), std::invalid_argument);
    CHECK_THROWS_AS(tr.update(std::vector<double>{0.1}), std::invalid_argument);
}

TEST_CASE("precision is isolated from the gradient graph")
{
    Rng rng(2);
    Router r(config(true, true, false), 4, 4, rng);
    r.tracker->set_variance({0.2, 0.3, 0.4, 0.5});
    const std::vector<double> before(r.tracker->variance().begin(), r.tracker->variance().end());
    ad::Adam opt(r.parameters());
    const auto xs = random_sequence(3, 4, 4, rng);
    const auto labels = random_labels(3, 4, 4, rng);
    {
        Tape tape;
        tape.backward(run_sequence(tape, r, xs, labels).loss);
        opt.step();
    }
    CHECK(std::equal(before.begin(), before.end(), r.tracker->variance().begin()));
    for (Parameter* p : r.parameters()) CHECK(p->name.find("var") == std::string::npos);

    Tape tape;
    run_sequence(tape, r, xs, labels);
    const std::size_t nodes = tape.size();
    r.tracker->update(std::vector<double>{0.1, 0.1, 0.1, 0.1});
    CHECK(tape.size() == nodes);
}

TEST_CASE("beta stays inside (0, 1) for any raw value")
{
    Rng init(0);
    GateConfig c = config(true, false, false);
    Router r(c, 4, 4, init);
    r.memory->beta_raw.value = Tensor::row({-1000.0, -30.0, 30.0, 1000.0});
    for (double b : r.memory->values()) {
        CHECK(b > 0.0);
        CHECK(b < 1.0);
    }
    Tape tape;
    for (double b : r.memory->beta(tape).value().data()) {
        CHECK(b > 0.0);
        CHECK(b < 1.0);
    }
}

TEST_CASE("combined loss")
{
    Tape tape;
    Var routing = tape.constant(Tensor::scalar(1.0));
    Var pred = tape.constant(Tensor::scalar(0.4));
    CHECK(combined_loss(routing, pred, 0.0).value().item() == 1.0);
    CHECK(combined_loss(routing, pred, 0.5).value().item() == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(combined_loss(routing, std::nullopt, 0.5).value().item() == 1.0);
    CHECK_THROWS(combined_loss(routing, pred, -1.0));
}

TEST_CASE("coverage K")
{
    const Coverage low = coverage_k(0.006, 0.01);
    CHECK(low.threshold >= 765.0);
    CHECK(low.threshold <= 766.0);
    CHECK(low.k == 766);
    CHECK(coverage_k(0.748, 0.01).k == 4);
    CHECK(coverage_k(0.748, 0.01).threshold == doctest::Approx(3.338).epsilon(1e-3));
    CHECK(coverage_k(0.99, 0.01).k == 1);
    CHECK(coverage_k(1.0, 0.01).k == 1);
    CHECK_THROWS_AS(coverage_k(0.0, 0.01), std::domain_error);
    CHECK_THROWS_AS(coverage_k(-0.1, 0.01), std::domain_error);
    CHECK_THROWS_AS(coverage_k(0.5, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(coverage_k(0.5, 1.0), std::invalid_argument);
}

TEST_CASE("coverage K is monotone")
{
    int prev = coverage_k(0.001, 0.01).k;
    for (double p = 0.002; p < 1.0; p += 0.001) {
        const int k = coverage_k(p, 0.01).k;
        CHECK(k <= prev);
        prev = k;
    }
    // tighter coverage (larger 1 - delta) never needs fewer experts
    prev = coverage_k(0.3, 0.5).k;
    for (double delta = 0.49; delta > 1e-6; delta *= 0.9) {
        const int k = coverage_k(0.3, delta).k;
        CHECK(k >= prev);
        prev = k;
    }
}
