#include "routelab/harness/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "routelab/autodiff/adam.hpp"
#include "routelab/models/regression.hpp"

namespace routelab::harness {

namespace {

using metrics::RunResult;
namespace mn = metrics::name;

// Tape buffers of a few MB are allocated and freed every step; by default glibc
// serves those with mmap, and the resulting page faults cost more than the math.
void keep_large_buffers()
{
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
        return true;
    }();
    (void)once;
#endif
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end)
{
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += v[i];
    return s / static_cast<double>(end - begin);
}

void check_beta(const routing::Router& r)
{
    if (!r.memory) return;
    for (double b : r.memory->values()) {
        if (!(b > 0.0 && b < 1.0)) throw std::logic_error("beta left (0, 1) after an optimiser step");
    }
}

void record_beta(const routing::Router& r, RunResult& out)
{
    if (!r.memory) return;
    const std::vector<double> beta = r.memory->values();
    double s = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        s += beta[i];
        if (beta.size() <= 4) out.metrics["beta_" + std::to_string(i)] = beta[i];
    }
    out.metrics[mn::beta_mean] = s / static_cast<double>(beta.size());
    if (beta.size() > 4) {
        out.metrics["beta_min"] = *std::min_element(beta.begin(), beta.end());
        out.metrics["beta_max"] = *std::max_element(beta.begin(), beta.end());
    }
}

RunResult train_toy(const ExperimentConfig& cfg, const Condition& cond, std::uint64_t seed,
                    const Progress& progress)
{
    ad::Rng data = data_stream(seed, cond.task);
    ad::Rng init = init_stream(seed, cond.name);
    models::ToyRouter model(cond.gate, cond.readout, cond.task.d_model, cond.task.n_experts, init);
    ad::Adam opt(model.parameters(), ad::AdamConfig{cfg.lr});

    RunResult out;
    auto& loss_curve = out.curves["loss"];
    auto& acc_curve = out.curves["acc_all"];
    auto& trans_curve = out.curves["acc_transition"];
    auto& pred_curve = out.curves["pred_loss"];
    const bool anticipation = cond.task.kind == tasks::TaskKind::anticipation;

    for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
        const tasks::Batch batch = tasks::generate(cond.task, data);
        ad::Tape tape;
        const models::ToyForward f = models::toy_forward(tape, model, batch);
        const double loss = f.loss.value().item();
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite training loss at epoch " + std::to_string(ep));
        loss_curve.push_back(loss);
        acc_curve.push_back(metrics::accuracy(f.logits.value(), batch.routing_labels));
        trans_curve.push_back(metrics::acc_at(cond.transition_step, f.logits.value(), batch.routing_labels, batch.batch));
        if (f.pred_loss) pred_curve.push_back(f.pred_loss->value().item());
        tape.backward(f.loss);
        opt.step();
        check_beta(model.router());
        model.update_precision(batch);
        if (progress.callback && (ep + 1) % progress.every == 0) progress.callback(ep + 1, loss);
    }
    if (pred_curve.empty()) out.curves.erase("pred_loss");

    const std::size_t from = cfg.epochs - cfg.window;
    out.metrics[mn::acc_all] = mean_of(acc_curve, from, cfg.epochs);
    out.metrics[mn::acc_transition] = mean_of(trans_curve, from, cfg.epochs);
    out.metrics[mn::final_train_loss] = mean_of(loss_curve, from, cfg.epochs);
    if (!anticipation) {
        // Table 1 tasks are labelled only at the final step.
        out.metrics[mn::acc_final] = out.metrics[mn::acc_transition];
        out.curves.erase("acc_all");
    }

    tasks::TaskSpec eval_spec = cond.task;
    eval_spec.batch_size = cfg.eval_sequences;
    ad::Rng eval = eval_stream(seed, cond.task);
    const tasks::Batch batch = tasks::generate(eval_spec, eval);
    ad::Tape tape;
    const models::ToyForward f = models::toy_forward(tape, model, batch);
    out.metrics[mn::eval_acc_all] = metrics::accuracy(f.logits.value(), batch.routing_labels);
    out.metrics[mn::eval_acc_transition] =
        metrics::acc_at(cond.transition_step, f.logits.value(), batch.routing_labels, batch.batch);
    if (cond.gate.use_beta && cond.gate.beta_variant == routing::BetaVariant::per_dimension) {
        for (std::size_t t = 0; t < f.states.size(); ++t) {
            out.metrics["h_block_mean@" + std::to_string(t)] = block_mean(f.states[t]);
        }
    }
    record_beta(model.router(), out);
    if (const auto& tr = model.router().tracker) {
        const std::vector<double> pi = tr->pi();
        for (std::size_t i = 0; i < pi.size(); ++i) out.metrics["pi_" + std::to_string(i)] = pi[i];
    }
    return out;
}

RunResult train_regression(const ExperimentConfig& cfg, const Condition& cond, std::uint64_t seed,
                           const Progress& progress)
{
    ad::Rng data = data_stream(seed, cond.task);
    ad::Rng init = init_stream(seed, cond.name);
    routing::Router router(cond.gate, cond.task.d_model, cond.task.n_experts, init);
    ad::Adam opt(router.parameters(), ad::AdamConfig{cfg.lr});

    RunResult out;
    auto& loss_curve = out.curves["loss"];
    std::vector<std::vector<double>> pi_trace;
    for (std::size_t step = 0; step < cfg.epochs; ++step) {
        const tasks::Batch batch = tasks::gen_precision_regression(cond.task, data, static_cast<std::int64_t>(step));
        ad::Tape tape;
        const models::RegressionForward f = models::regression_forward(tape, router, batch);
        const double loss = f.loss.value().item();
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss at step " + std::to_string(step));
        loss_curve.push_back(loss);
        tape.backward(f.loss);
        opt.step();
        if (router.tracker) {
            router.tracker->update(models::expert_mse_signal(batch));
            pi_trace.push_back(router.tracker->pi());
        }
        if (progress.callback && (step + 1) % progress.every == 0) progress.callback(step + 1, loss);
    }
    const std::size_t w = cfg.loss_window;
    out.metrics[mn::early_loss] = mean_of(loss_curve, 0, w);
    out.metrics[mn::final_loss] = mean_of(loss_curve, cfg.epochs - w, cfg.epochs);

    if (!pi_trace.empty()) {
        const std::size_t n = pi_trace.front().size();
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = out.curves["pi_" + std::to_string(i)];
            for (const auto& row : pi_trace) c.push_back(row[i]);
            out.metrics["pi_" + std::to_string(i)] = pi_trace.back()[i];
        }
        std::vector<std::size_t> grid;
        for (std::size_t s : metrics::default_pi_grid()) {
            if (s < pi_trace.size()) grid.push_back(s);
        }
        const metrics::PiTimeline tl = metrics::pi_timeline(pi_trace, grid);
        for (const metrics::PiRow& row : tl.rows) {
            for (std::size_t i = 0; i < row.pi.size(); ++i) {
                out.metrics["pi_" + std::to_string(i) + "@" + std::to_string(row.step)] = row.pi[i];
            }
        }
        out.metrics[mn::pi_crossover_step] = tl.crossover ? static_cast<double>(*tl.crossover) : -1.0;
    }
    return out;
}

RunResult train_lm(const ExperimentConfig& cfg, const Condition& cond, std::uint64_t seed,
                   const Progress& progress)
{
    ad::Rng data = data_stream(seed, cond.task);
    ad::Rng init = init_stream(seed, cond.name);
    models::CharMoELM model(cond.gate, cfg.lm, init);
    ad::Adam opt(model.parameters(), ad::AdamConfig{cfg.lr});

    RunResult out;
    auto& loss_curve = out.curves["loss"];
    auto& bpc_curve = out.curves["bpc_all"];
    for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
        const tasks::Batch batch = tasks::gen_char_lm(cond.task, data);
        ad::Tape tape;
        const models::LMForward f = models::lm_forward(tape, model, batch);
        const double loss = f.loss.value().item();
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss at epoch " + std::to_string(ep));
        loss_curve.push_back(loss);
        bpc_curve.push_back(metrics::bpc(f.logits.value(), f.targets));
        tape.backward(f.loss);
        opt.step();
        check_beta(model.router);
        if (progress.callback && (ep + 1) % progress.every == 0) progress.callback(ep + 1, loss);
    }

    // Held-out evaluation in chunks of the training batch size.
    const std::size_t S = cond.task.seq_len - 1;
    const std::size_t trans = cfg.lm.transition_step;
    const std::size_t mid_from = 40, mid_to = S - 1;
    const std::size_t N = cfg.lm.n_experts;
    tasks::TaskSpec spec = cond.task;
    ad::Rng eval = eval_stream(seed, cond.task);
    double ce_all = 0.0, ce_trans = 0.0;
    std::size_t n_all = 0, n_trans = 0;
    std::vector<double> gate_trans(N, 0.0), gate_mid(N, 0.0);
    std::size_t remaining = cfg.eval_sequences;
    while (remaining > 0) {
        spec.batch_size = std::min(remaining, cond.task.batch_size);
        remaining -= spec.batch_size;
        const tasks::Batch batch = tasks::gen_char_lm(spec, eval);
        ad::Tape tape;
        const models::LMForward f = models::lm_forward(tape, model, batch);
        const std::vector<double> ce = metrics::cross_entropy_rows(f.logits.value(), f.targets);
        const ad::Tensor& g = f.gates.value();
        const std::size_t B = batch.batch;
        for (std::size_t t = 0; t < S; ++t) {
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t r = t * B + b;
                ce_all += ce[r];
                ++n_all;
                if (t == trans) {
                    ce_trans += ce[r];
                    ++n_trans;
                    for (std::size_t i = 0; i < N; ++i) gate_trans[i] += g.at(r, i);
                }
                if (t >= mid_from && t <= mid_to) {
                    for (std::size_t i = 0; i < N; ++i) gate_mid[i] += g.at(r, i);
                }
            }
        }
    }
    const double mid_rows = static_cast<double>(cfg.eval_sequences * (mid_to - mid_from + 1));
    // The domain-B expert is the one carrying more mass mid-way through domain B.
    ad::Tensor mid_mean(ad::Shape{1, N});
    for (std::size_t i = 0; i < N; ++i) mid_mean[i] = gate_mid[i] / mid_rows;
    const int b_expert = models::identify_domain_expert(mid_mean, 1, 0, 0);
    const double p_trans = gate_trans[b_expert] / static_cast<double>(n_trans);
    const routing::Coverage k = routing::coverage_k(p_trans, 0.01);

    out.metrics[mn::bpc_all] = ce_all / static_cast<double>(n_all) / std::log(2.0);
    out.metrics[mn::bpc_transition] = ce_trans / static_cast<double>(n_trans) / std::log(2.0);
    out.metrics[mn::b_expert] = b_expert;
    out.metrics[mn::p_b_transition] = p_trans;
    out.metrics[mn::p_b_mid] = mid_mean[b_expert];
    out.metrics[mn::k99] = p_trans >= 1.0 - 0.01 ? 1.0 : k.threshold;
    out.metrics[mn::k99_ceil] = k.k;
    out.metrics[mn::final_train_loss] = mean_of(loss_curve, cfg.epochs - std::min(cfg.window, cfg.epochs), cfg.epochs);
    record_beta(model.router, out);
    return out;
}

} // namespace

ad::Rng data_stream(std::uint64_t seed, const tasks::TaskSpec& task)
{
    return ad::Rng::stream(seed, std::string("data/") + tasks::to_string(task.kind));
}

ad::Rng eval_stream(std::uint64_t seed, const tasks::TaskSpec& task)
{
    return ad::Rng::stream(seed, std::string("eval/") + tasks::to_string(task.kind));
}

ad::Rng init_stream(std::uint64_t seed, const std::string& condition)
{
    return ad::Rng::stream(seed, "init/" + condition);
}

double block_mean(const ad::Tensor& state)
{
    const std::size_t half = state.cols() / tasks::kDomains;
    double s = 0.0;
    for (std::size_t r = 0; r < state.rows(); ++r) {
        for (std::size_t j = 0; j < half; ++j) s += state.at(r, j);
    }
    return s / static_cast<double>(state.rows() * half);
}

metrics::RunResult train_run(const ExperimentConfig& config, const Condition& condition,
                             std::uint64_t seed, const Progress& progress)
{
    keep_large_buffers();
    const auto start = std::chrono::steady_clock::now();
    metrics::RunResult out;
    switch (condition.model) {
    case ModelKind::toy: out = train_toy(config, condition, seed, progress); break;
    case ModelKind::regression: out = train_regression(config, condition, seed, progress); break;
    case ModelKind::char_lm: out = train_lm(config, condition, seed, progress); break;
    }
    out.condition = condition.name;
    out.seed = seed;
    out.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

} // namespace routelab::harness
