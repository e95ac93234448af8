#include "routelab/harness/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>

#include "routelab/autodiff/adam.hpp"
#include "routelab/autodiff/gradcheck.hpp"
#include "routelab/metrics/metrics.hpp"
#include "routelab/routing/router.hpp"
#include "routelab/tasks/tasks.hpp"

namespace routelab::harness {

namespace {

using ad::Parameter;
using ad::Rng;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using routing::GateConfig;
using routing::Router;
using routing::RouterState;

constexpr double kGradTol = 1e-4;

std::string fmt(const char* f, double x)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

// Smooth ops on a few small parameters, each reduced to a scalar via a fixed
// random projection so every output element contributes.
CheckResult op_gradients()
{
    Rng rng(101);
    Parameter a("a", ad::gaussian_tensor({3, 4}, 1.0, rng));
    Parameter b("b", ad::gaussian_tensor({4, 5}, 1.0, rng));
    Parameter c("c", ad::gaussian_tensor({3, 4}, 1.0, rng));
    Parameter row("row", ad::gaussian_tensor({1, 4}, 1.0, rng));
    // relu's kink is kept away from the FD stencil.
    Parameter k("k", ad::gaussian_tensor({3, 4}, 1.0, rng));
    for (double& x : k.value.data()) x += x >= 0 ? 0.1 : -0.1;
    const Tensor proj34 = ad::gaussian_tensor({3, 4}, 1.0, rng);
    const std::vector<int> labels{2, -1, 0};
    const std::vector<double> weights{1.0, 3.0, 0.5};
    const std::vector<int> gather{1, 0, 1, 2};

    auto project = [&](Tape& t, const Var& v) {
        return ad::sum(ad::mul(v, t.constant(proj34)));
    };
    const std::vector<std::pair<const char*, std::function<Var(Tape&)>>> cases = {
        {"matmul", [&](Tape& t) { return ad::sum(ad::gelu(ad::matmul(t.param(a), t.param(b)))); }},
        {"add (broadcast)", [&](Tape& t) { return project(t, ad::add(t.param(a), t.param(row))); }},
        {"sub", [&](Tape& t) { return project(t, ad::sub(t.param(a), t.param(c))); }},
        {"mul (broadcast)", [&](Tape& t) { return project(t, ad::mul(t.param(a), t.param(row))); }},
        {"scale", [&](Tape& t) { return project(t, ad::scale(t.param(a), -1.7)); }},
        {"sigmoid", [&](Tape& t) { return project(t, ad::sigmoid(t.param(a))); }},
        {"relu", [&](Tape& t) { return project(t, ad::relu(t.param(k))); }},
        {"gelu", [&](Tape& t) { return project(t, ad::gelu(t.param(a))); }},
        {"softmax", [&](Tape& t) { return project(t, ad::softmax(t.param(a))); }},
        {"concat", [&](Tape& t) {
             const Var parts[] = {t.param(a), t.param(c)};
             return ad::sum(ad::sigmoid(ad::concat(parts)));
         }},
        {"concat_rows", [&](Tape& t) {
             const Var parts[] = {t.param(a), t.param(row)};
             return ad::sum(ad::gelu(ad::concat_rows(parts)));
         }},
        {"slice_rows", [&](Tape& t) { return ad::sum(ad::sigmoid(ad::slice_rows(t.param(a), 1, 2))); }},
        {"slice_cols", [&](Tape& t) { return ad::sum(ad::sigmoid(ad::slice_cols(t.param(a), 1, 2))); }},
        {"mean", [&](Tape& t) { return ad::mean(ad::gelu(t.param(a))); }},
        {"row_sum", [&](Tape& t) { return ad::sum(ad::sigmoid(ad::row_sum(t.param(a)))); }},
        {"gather_rows", [&](Tape& t) { return ad::sum(ad::gelu(ad::gather_rows(t.param(a), gather))); }},
        {"mse_loss", [&](Tape& t) { return ad::mse_loss(t.param(a), t.param(c)); }},
        {"cross_entropy", [&](Tape& t) { return ad::cross_entropy(t.param(a), labels, weights); }},
    };
    std::vector<Parameter*> params{&a, &b, &c, &row, &k};
    double worst = 0.0;
    std::string worst_op;
    for (const auto& [op, build] : cases) {
        const ad::GradCheckResult r = ad::check_gradients(params, build);
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            worst_op = op;
        }
    }
    // detach must stop the gradient entirely.
    {
        for (Parameter* p : params) p->zero_grad();
        Tape t;
        t.backward(ad::sum(ad::mul(ad::detach(t.param(a)), t.param(c))));
        for (double g : a.grad.data()) {
            if (g != 0.0) return {"op gradients", false, "detach leaked a gradient"};
        }
    }
    return {"op gradients", worst <= kGradTol,
            std::to_string(cases.size()) + " ops + detach, max rel err " + fmt("%.2e", worst) +
                (worst_op.empty() ? "" : " (" + worst_op + ")")};
}

struct SequenceLoss {
    Var loss;
    std::vector<Var> states;
};

SequenceLoss run_sequence(Tape& tape, Router& r, const std::vector<Tensor>& xs, const std::vector<std::vector<int>>& y)
{
    SequenceLoss out;
    RouterState s = r.begin_sequence(tape, xs.front().rows());
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
        Var ce = ad::cross_entropy(r.logits(tape, x, s, x_hat), y[t]);
        routing = routing.valid() ? ad::add(routing, ce) : ce;
        out.states.push_back(s.state);
    }
    out.loss = routing::combined_loss(routing, pred, r.config().lambda_pred);
    return out;
}

GateConfig gate(bool beta, bool pi, bool ant)
{
    GateConfig g;
    g.use_beta = beta;
    g.use_pi = pi;
    g.use_ant = ant;
    return g;
}

CheckResult gate_gradients()
{
    std::vector<std::pair<std::string, GateConfig>> variants;
    for (int mask = 0; mask < 8; ++mask) {
        const GateConfig g = gate(mask & 1, mask & 2, mask & 4);
        variants.emplace_back(g.label(), g);
    }
    GateConfig additive = gate(true, true, true);
    additive.predictor_integration = routing::PredictorIntegration::additive;
    variants.emplace_back("beta+pi+ant additive", additive);
    GateConfig membrane = gate(true, false, false);
    membrane.beta_variant = routing::BetaVariant::per_expert_membrane_cap;
    membrane.membrane_theta = 0.3;
    variants.emplace_back("membrane", membrane);

    double worst = 0.0;
    std::string worst_name;
    for (const auto& [name, cfg] : variants) {
        Rng rng(23);
        Router r(cfg, 5, 4, rng);
        if (r.tracker) r.tracker->set_variance({0.2, 0.9, 0.5, 1.4});
        if (r.memory) {
            for (double& raw : r.memory->beta_raw.value.data()) raw = rng.normal(1.0, 1.0);
        }
        std::vector<Tensor> xs;
        std::vector<std::vector<int>> ys;
        for (int t = 0; t < 5; ++t) {
            xs.push_back(ad::gaussian_tensor({3, 5}, 1.0, rng));
            ys.push_back({static_cast<int>(rng.uniform_index(4)), static_cast<int>(rng.uniform_index(4)), -1});
        }
        const ad::GradCheckResult res =
            ad::check_gradients(r.parameters(), [&](Tape& tape) { return run_sequence(tape, r, xs, ys).loss; });
        if (res.max_rel_error > worst) {
            worst = res.max_rel_error;
            worst_name = name;
        }
    }
    return {"gate gradients", worst <= kGradTol,
            std::to_string(variants.size()) + " compositions, max rel err " + fmt("%.2e", worst) +
                (worst_name.empty() ? "" : " (" + worst_name + ")")};
}

CheckResult softmax_normalisation()
{
    Rng rng(7);
    Tensor z = ad::gaussian_tensor({64, 9}, 30.0, rng);
    z.at(0, 0) = 700.0;  // large logits must not overflow
    z.at(1, 3) = -700.0;
    const Tensor p = ad::softmax_rows(z);
    double worst = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) s += p.at(r, c);
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return {"softmax normalisation", worst <= 1e-12, "max |sum - 1| " + fmt("%.1e", worst)};
}

CheckResult beta_bounds()
{
    // Push beta hard toward both ends with a large learning rate.
    Rng rng(5);
    Router r(gate(true, false, false), 4, 2, rng);
    ad::Adam opt(r.parameters(), ad::AdamConfig{0.5});
    double lo = 1.0, hi = 0.0;
    for (int step = 0; step < 200; ++step) {
        Tape tape;
        RouterState s = r.begin_sequence(tape, 2);
        Var x = tape.constant(Tensor::matrix(2, 4, {1, -1, 2, 0, 0, 3, -2, 1}));
        for (int t = 0; t < 6; ++t) r.step(tape, s, x);
        // Rewards large |h| in the first half, small in the second.
        Var h = s.state;
        Var w = tape.constant(Tensor::row({-1, -1, 1, 1}));
        tape.backward(ad::sum(ad::mul(ad::mul(h, h), w)));
        opt.step();
        for (double b : r.memory->values()) {
            lo = std::min(lo, b);
            hi = std::max(hi, b);
        }
    }
    const bool ok = lo > 0.0 && hi < 1.0;
    return {"beta in (0, 1) after training", ok, "range [" + fmt("%.6g", lo) + ", " + fmt("%.17g", hi) + "]"};
}

CheckResult precision_properties()
{
    routing::PrecisionTracker tr(4, routing::PrecisionMode::mse, 0.95, 1e-4, 0.5);
    Rng rng(9);
    bool positive = true;
    for (int i = 0; i < 500; ++i) {
        std::vector<double> sig(4);
        for (double& s : sig) s = i % 7 == 0 ? 0.0 : std::abs(rng.normal()) * 3.0;
        tr.update(sig);
        for (double p : tr.pi()) positive = positive && p > 0.0 && std::isfinite(p);
    }
    // Isolation: backward and an optimiser step leave the tracker untouched and
    // the tracker exposes no parameters.
    Router r(gate(true, true, false), 4, 4, rng);
    r.tracker->set_variance({0.1, 0.7, 2.0, 0.3});
    const std::vector<double> before(r.tracker->variance().begin(), r.tracker->variance().end());
    ad::Adam opt(r.parameters(), ad::AdamConfig{0.1});
    Tape tape;
    RouterState s = r.begin_sequence(tape, 3);
    Var x = tape.constant(ad::gaussian_tensor({3, 4}, 1.0, rng));
    r.step(tape, s, x);
    const std::vector<int> y{0, 1, 2};
    tape.backward(ad::cross_entropy(r.logits(tape, x, s), y));
    opt.step();
    const std::vector<double> after(r.tracker->variance().begin(), r.tracker->variance().end());
    const bool isolated = before == after && r.parameters().size() == 3;  // W, b, beta
    return {"precision positivity and isolation", positive && isolated,
            std::string(positive ? "Pi > 0 over 500 updates" : "non-positive Pi") +
                (isolated ? ", untouched by backward/step" : ", tracker changed by the optimiser")};
}

CheckResult closed_form()
{
    Rng rng(31);
    Router r(gate(true, false, false), 6, 2, rng);
    for (double& raw : r.memory->beta_raw.value.data()) raw = rng.normal(0.5, 1.0);
    const std::vector<double> beta = r.memory->values();
    std::vector<Tensor> xs;
    for (int t = 0; t < 20; ++t) xs.push_back(ad::gaussian_tensor({3, 6}, 1.0, rng));
    Tape tape;
    RouterState s = r.begin_sequence(tape, 3);
    double worst = 0.0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        r.step(tape, s, tape.constant(xs[t]));
        for (std::size_t b = 0; b < 3; ++b) {
            for (std::size_t j = 0; j < 6; ++j) {
                double expect = 0.0;
                for (std::size_t k = 0; k <= t; ++k) expect += std::pow(beta[j], double(t - k)) * xs[k].at(b, j);
                worst = std::max(worst, std::abs(expect - s.state.value().at(b, j)));
            }
        }
    }
    return {"h_t closed form", worst <= 1e-10, "max abs err " + fmt("%.1e", worst) + " over 20 steps"};
}

CheckResult coverage_monotone()
{
    bool ok = true;
    double prev = INFINITY;
    for (double p = 0.001; p < 0.999; p += 0.001) {
        const double th = routing::coverage_k(p, 0.01).threshold;
        ok = ok && th <= prev;
        prev = th;
    }
    int prev_k = 0;
    for (double delta = 0.5; delta > 1e-6; delta /= 2.0) {
        const int k = routing::coverage_k(0.3, delta).k;
        ok = ok && k >= prev_k;
        prev_k = k;
    }
    return {"coverage monotonicity", ok, "non-increasing in p, non-decreasing as delta shrinks"};
}

CheckResult generator_determinism()
{
    using tasks::TaskSpec;
    const TaskSpec specs[] = {TaskSpec::early_signal(), TaskSpec::domain_switch(), TaskSpec::precision_regression(true),
                              TaskSpec::anticipation(), TaskSpec::char_lm()};
    bool same = true;
    for (TaskSpec spec : specs) {
        spec.batch_size = 16;
        for (std::int64_t step : {0, 777}) {
            Rng r1 = Rng::stream(42, "selftest"), r2 = Rng::stream(42, "selftest");
            const tasks::Batch a = tasks::generate(spec, r1, step), b = tasks::generate(spec, r2, step);
            auto eq = [](const Tensor& x, const Tensor& y) {
                return x.shape() == y.shape() &&
                       std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(double)) == 0;
            };
            auto eqv = [](const std::vector<double>& x, const std::vector<double>& y) {
                return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
            };
            same = same && eq(a.inputs, b.inputs) && a.tokens == b.tokens && a.domains == b.domains &&
                   a.routing_labels == b.routing_labels && eqv(a.targets, b.targets) && eqv(a.observed, b.observed) &&
                   eq(a.expert_outputs, b.expert_outputs);
        }
    }
    return {"generator determinism", same, "5 tasks regenerated bitwise from the same stream"};
}

CheckResult argmax_rule()
{
    const double tie[] = {0.1, 0.45, 0.45};
    const double all_same[] = {0.25, 0.25, 0.25, 0.25};
    const bool ok = metrics::argmax(tie) == 1 && metrics::argmax(all_same) == 0;
    // Uniform gates are scored as "expert 0" every time.
    const Tensor g(ad::Shape{2, 4}, 0.25);
    const std::vector<int> labels{0, 2};
    const bool acc_ok = metrics::accuracy(g, labels) == 0.5;
    return {"argmax tie rule", ok && acc_ok, "ties resolve to the lowest index"};
}

} // namespace

std::vector<CheckResult> selftest()
{
    return {op_gradients(),         gate_gradients(), softmax_normalisation(), beta_bounds(), precision_properties(),
            closed_form(),          coverage_monotone(), generator_determinism(), argmax_rule()};
}

} // namespace routelab::harness
