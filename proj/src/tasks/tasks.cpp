#include "routelab/tasks/tasks.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace routelab::tasks {

namespace {

void require(bool ok, const std::string& what)
{
    if (!ok) throw std::invalid_argument("TaskSpec: " + what);
}

void require_kind(const TaskSpec& spec, TaskKind kind, const char* fn)
{
    spec.validate();
    if (spec.kind != kind) {
        throw std::invalid_argument(std::string(fn) + ": spec is for task " + to_string(spec.kind));
    }
}

// Writes pattern(domain) * signal + N(0, sigma^2) into row `row` of `inputs`.
void fill_token(Tensor& inputs, std::size_t row, int domain, bool signal, double sigma, Rng& rng)
{
    const std::size_t d = inputs.cols();
    const std::size_t half = d / kDomains;
    for (std::size_t j = 0; j < d; ++j) {
        const bool on = signal && j / half == static_cast<std::size_t>(domain);
        inputs.at(row, j) = (on ? 1.0 : 0.0) + sigma * rng.normal();
    }
}

Batch empty_sequence_batch(const TaskSpec& spec)
{
    Batch b;
    b.kind = spec.kind;
    b.batch = spec.batch_size;
    b.steps = spec.seq_len;
    b.inputs = Tensor(ad::Shape{spec.seq_len * spec.batch_size, spec.d_model});
    b.domains.assign(spec.seq_len * spec.batch_size, 0);
    b.routing_labels.assign(spec.seq_len * spec.batch_size, -1);
    return b;
}

// Shared body of the two-phase tasks: first domain for steps [0, switch),
// the other domain afterwards.
Batch two_phase(const TaskSpec& spec, Rng& rng)
{
    Batch out = empty_sequence_batch(spec);
    for (std::size_t b = 0; b < spec.batch_size; ++b) {
        const int first = static_cast<int>(rng.uniform_index(kDomains));
        for (std::size_t t = 0; t < spec.seq_len; ++t) {
            const int dom = t < spec.switch_step ? first : 1 - first;
            out.domains[out.index(t, b)] = dom;
            fill_token(out.inputs, out.index(t, b), dom, true, spec.noise_sigma, rng);
        }
    }
    return out;
}

} // namespace

const char* to_string(TaskKind kind)
{
    switch (kind) {
    case TaskKind::early_signal: return "early_signal";
    case TaskKind::domain_switch: return "domain_switch";
    case TaskKind::precision_regression: return "precision_regression";
    case TaskKind::anticipation: return "anticipation";
    case TaskKind::char_lm: return "char_lm";
    }
    return "?";
}

TaskKind task_kind_from_string(const std::string& name)
{
    for (TaskKind k : {TaskKind::early_signal, TaskKind::domain_switch,
                       TaskKind::precision_regression, TaskKind::anticipation, TaskKind::char_lm}) {
        if (name == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown task kind '" + name + "'");
}

void TaskSpec::validate() const
{
    require(batch_size > 0, "batch_size must be positive");
    require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
    if (kind == TaskKind::char_lm) {
        require(vocab_size == 2 * kLetters, "char_lm vocab_size must be 26");
        require(seq_len >= 2 && switch_step > 0 && switch_step < seq_len,
                "char_lm switch_step must lie inside the sequence");
        require(p_step1 >= 0.0 && p_step2 >= 0.0 && p_step1 + p_step2 <= 1.0,
                "char_lm step probabilities must form a distribution");
        return;
    }
    require(d_model >= kDomains && d_model % kDomains == 0, "d_model must split into two halves");
    require(n_experts >= 2 * kDomains - 1, "need an expert for each domain (expert 2d)");
    if (kind == TaskKind::precision_regression) {
        require(expert_sigma.size() == n_experts, "expert_sigma needs one entry per expert");
        for (double s : expert_sigma) require(s >= 0.0, "expert_sigma entries must be >= 0");
        require(target_sigma >= 0.0, "target_sigma must be >= 0");
        require(n_experts >= 3, "the shifting schedule swaps experts 0 and 2");
        return;
    }
    require(seq_len >= 1, "seq_len must be positive");
    if (kind == TaskKind::early_signal) {
        require(seq_len > kSignalTokens, "early_signal needs more than 3 tokens");
    } else {
        require(switch_step > 0 && switch_step < seq_len, "switch_step must be < seq_len");
    }
}

TaskSpec TaskSpec::early_signal()
{
    TaskSpec s;
    s.kind = TaskKind::early_signal;
    s.seq_len = 8;
    s.switch_step = kSignalTokens;
    s.noise_sigma = 1.2;
    return s;
}

TaskSpec TaskSpec::domain_switch()
{
    TaskSpec s;
    s.kind = TaskKind::domain_switch;
    s.seq_len = 8;
    s.switch_step = 4;
    s.noise_sigma = 1.2;
    return s;
}

TaskSpec TaskSpec::precision_regression(bool shifting)
{
    TaskSpec s;
    s.kind = TaskKind::precision_regression;
    s.seq_len = 1;
    s.switch_step = 0;
    s.noise_sigma = 1.0;
    s.shifting = shifting;
    return s;
}

TaskSpec TaskSpec::anticipation() { return TaskSpec{}; }

TaskSpec TaskSpec::char_lm()
{
    TaskSpec s;
    s.kind = TaskKind::char_lm;
    s.d_model = 64;
    s.n_experts = 2;
    s.seq_len = 64;
    s.switch_step = 32;
    s.noise_sigma = 0.0;
    s.batch_size = 256;
    return s;
}

Tensor clean_pattern(int domain, std::size_t d_model)
{
    if (domain < 0 || static_cast<std::size_t>(domain) >= kDomains) {
        throw std::out_of_range("clean_pattern: domain " + std::to_string(domain));
    }
    Tensor p(ad::Shape{1, d_model});
    const std::size_t half = d_model / kDomains;
    for (std::size_t j = 0; j < half; ++j) p[domain * half + j] = 1.0;
    return p;
}

double precision_target(std::span<const double> x, int domain)
{
    if (domain < 0 || static_cast<std::size_t>(domain) >= kDomains) {
        throw std::out_of_range("precision_target: domain " + std::to_string(domain));
    }
    const std::size_t half = x.size() / kDomains;
    double s = 0.0;
    for (std::size_t j = 0; j < half; ++j) s += x[domain * half + j];
    return s / static_cast<double>(half);
}

Batch gen_early_signal(const TaskSpec& spec, Rng& rng)
{
    require_kind(spec, TaskKind::early_signal, "gen_early_signal");
    Batch out = empty_sequence_batch(spec);
    for (std::size_t b = 0; b < spec.batch_size; ++b) {
        const int dom = static_cast<int>(rng.uniform_index(kDomains));
        for (std::size_t t = 0; t < spec.seq_len; ++t) {
            out.domains[out.index(t, b)] = dom;
            fill_token(out.inputs, out.index(t, b), dom, t < kSignalTokens, spec.noise_sigma, rng);
        }
        out.routing_labels[out.index(spec.seq_len - 1, b)] = expert_for_domain(dom);
    }
    return out;
}

Batch gen_domain_switch(const TaskSpec& spec, Rng& rng)
{
    require_kind(spec, TaskKind::domain_switch, "gen_domain_switch");
    Batch out = two_phase(spec, rng);
    const std::size_t last = spec.seq_len - 1;
    for (std::size_t b = 0; b < spec.batch_size; ++b) {
        out.routing_labels[out.index(last, b)] = expert_for_domain(out.domains[out.index(last, b)]);
    }
    return out;
}

Batch gen_anticipation(const TaskSpec& spec, Rng& rng)
{
    require_kind(spec, TaskKind::anticipation, "gen_anticipation");
    Batch out = two_phase(spec, rng);
    // The target at step t is the expert of step t+1; the final step has none.
    for (std::size_t t = 0; t + 1 < spec.seq_len; ++t) {
        for (std::size_t b = 0; b < spec.batch_size; ++b) {
            out.routing_labels[out.index(t, b)] = expert_for_domain(out.domains[out.index(t + 1, b)]);
        }
    }
    return out;
}

std::vector<double> expert_noise_at(const TaskSpec& spec, std::int64_t step)
{
    if (step < 0) throw std::invalid_argument("precision task: step must be >= 0");
    std::vector<double> sigma = spec.expert_sigma;
    if (spec.shifting && static_cast<std::size_t>(step) >= spec.shift_step) {
        std::swap(sigma[0], sigma[2]);
    }
    return sigma;
}

Batch gen_precision_regression(const TaskSpec& spec, Rng& rng, std::int64_t step)
{
    require_kind(spec, TaskKind::precision_regression, "gen_precision_regression");
    const std::vector<double> sigma = expert_noise_at(spec, step);
    const std::size_t B = spec.batch_size;
    const std::size_t d = spec.d_model;

    Batch out;
    out.kind = spec.kind;
    out.batch = B;
    out.steps = 1;
    out.inputs = Tensor(ad::Shape{B, d});
    out.domains.resize(B);
    out.routing_labels.assign(B, -1);
    out.targets.resize(B);
    out.observed.resize(B);
    out.expert_outputs = Tensor(ad::Shape{B, spec.n_experts});

    for (std::size_t b = 0; b < B; ++b) {
        const int dom = static_cast<int>(rng.uniform_index(kDomains));
        out.domains[b] = dom;
        for (std::size_t j = 0; j < d; ++j) out.inputs.at(b, j) = rng.normal();
        const double target = precision_target(out.inputs.data().subspan(b * d, d), dom);
        out.targets[b] = target;
        for (std::size_t i = 0; i < spec.n_experts; ++i) {
            out.expert_outputs.at(b, i) = target + sigma[i] * rng.normal();
        }
        out.observed[b] = target + spec.target_sigma * rng.normal();
    }
    return out;
}

std::vector<double> char_transition_probs(const TaskSpec& spec)
{
    const double rest = 1.0 - spec.p_step1 - spec.p_step2;
    std::vector<double> p(kLetters, rest / static_cast<double>(kLetters));
    p[1] += spec.p_step1;
    p[2] += spec.p_step2;
    return p;
}

Batch gen_char_lm(const TaskSpec& spec, Rng& rng)
{
    require_kind(spec, TaskKind::char_lm, "gen_char_lm");
    Batch out;
    out.kind = spec.kind;
    out.batch = spec.batch_size;
    out.steps = spec.seq_len;
    out.tokens.resize(spec.seq_len * spec.batch_size);
    out.domains.resize(out.tokens.size());
    out.routing_labels.assign(out.tokens.size(), -1);

    const double cut1 = spec.p_step1;
    const double cut2 = spec.p_step1 + spec.p_step2;
    for (std::size_t b = 0; b < spec.batch_size; ++b) {
        std::size_t cur = 0;
        for (std::size_t t = 0; t < spec.seq_len; ++t) {
            const int dom = t < spec.switch_step ? 0 : 1;
            if (t == 0 || t == spec.switch_step) {
                cur = rng.uniform_index(kLetters);
            } else {
                const double u = rng.uniform();
                if (u < cut1) {
                    cur = (cur + 1) % kLetters;
                } else if (u < cut2) {
                    cur = (cur + 2) % kLetters;
                } else {
                    cur = rng.uniform_index(kLetters);
                }
            }
            out.tokens[out.index(t, b)] = static_cast<int>(cur + dom * kLetters);
            out.domains[out.index(t, b)] = dom;
        }
    }
    return out;
}

Batch generate(const TaskSpec& spec, Rng& rng, std::int64_t step)
{
    switch (spec.kind) {
    case TaskKind::early_signal: return gen_early_signal(spec, rng);
    case TaskKind::domain_switch: return gen_domain_switch(spec, rng);
    case TaskKind::precision_regression: return gen_precision_regression(spec, rng, step);
    case TaskKind::anticipation: return gen_anticipation(spec, rng);
    case TaskKind::char_lm: return gen_char_lm(spec, rng);
    }
    throw std::logic_error("generate: unhandled task kind");
}

void dump_csv(const Batch& batch, std::ostream& out)
{
    out.precision(17);
    if (batch.kind == TaskKind::char_lm) {
        out << "seq,step,domain,token\n";
        for (std::size_t b = 0; b < batch.batch; ++b) {
            for (std::size_t t = 0; t < batch.steps; ++t) {
                const std::size_t i = batch.index(t, b);
                out << b << ',' << t << ',' << batch.domains[i] << ',' << batch.tokens[i] << '\n';
            }
        }
        return;
    }
    const std::size_t d = batch.inputs.cols();
    if (batch.kind == TaskKind::precision_regression) {
        out << "seq,domain,target,observed";
        for (std::size_t i = 0; i < batch.expert_outputs.cols(); ++i) out << ",y" << i;
        for (std::size_t j = 0; j < d; ++j) out << ",x" << j;
        out << '\n';
        for (std::size_t b = 0; b < batch.batch; ++b) {
            out << b << ',' << batch.domains[b] << ',' << batch.targets[b] << ',' << batch.observed[b];
            for (std::size_t i = 0; i < batch.expert_outputs.cols(); ++i) {
                out << ',' << batch.expert_outputs.at(b, i);
            }
            for (std::size_t j = 0; j < d; ++j) out << ',' << batch.inputs.at(b, j);
            out << '\n';
        }
        return;
    }
    out << "seq,step,domain,label";
    for (std::size_t j = 0; j < d; ++j) out << ",x" << j;
    out << '\n';
    for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t t = 0; t < batch.steps; ++t) {
            const std::size_t i = batch.index(t, b);
            out << b << ',' << t << ',' << batch.domains[i] << ',' << batch.routing_labels[i];
            for (std::size_t j = 0; j < d; ++j) out << ',' << batch.inputs.at(i, j);
            out << '\n';
        }
    }
}

} // namespace routelab::tasks
