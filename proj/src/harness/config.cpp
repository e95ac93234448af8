#include "routelab/harness/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <stdexcept>

namespace routelab::harness {

namespace {

using routing::BetaVariant;
using routing::GateConfig;
using routing::PrecisionMode;
using routing::PredictorIntegration;
using tasks::TaskSpec;

nlohmann::json gate_json(const GateConfig& g)
{
    return {{"use_beta", g.use_beta},
            {"use_pi", g.use_pi},
            {"use_ant", g.use_ant},
            {"beta_variant", routing::to_string(g.beta_variant)},
            {"predictor_integration", routing::to_string(g.predictor_integration)},
            {"beta_init", g.beta_init},
            {"learn_beta", g.learn_beta},
            {"pi_mode", routing::to_string(g.pi_mode)},
            {"pi_alpha", g.pi_alpha},
            {"pi_eps0", g.pi_eps0},
            {"pi_init_var", g.pi_init_var},
            {"lambda_pred", g.lambda_pred},
            {"membrane_theta", g.membrane_theta}};
}

nlohmann::json task_json(const TaskSpec& t)
{
    return {{"kind", tasks::to_string(t.kind)},
            {"d_model", t.d_model},
            {"n_experts", t.n_experts},
            {"seq_len", t.seq_len},
            {"switch_step", t.switch_step},
            {"noise_sigma", t.noise_sigma},
            {"shifting", t.shifting},
            {"shift_step", t.shift_step},
            {"expert_sigma", t.expert_sigma},
            {"target_sigma", t.target_sigma},
            {"vocab_size", t.vocab_size},
            {"p_step1", t.p_step1},
            {"p_step2", t.p_step2}};
}

GateConfig gate(bool beta, bool pi, bool ant)
{
    GateConfig g;
    g.use_beta = beta;
    g.use_pi = pi;
    g.use_ant = ant;
    return g;
}

Condition toy(std::string name, GateConfig g, const TaskSpec& task, std::size_t batch,
              models::Readout readout = models::Readout::current)
{
    Condition c;
    c.name = std::move(name);
    c.model = ModelKind::toy;
    c.gate = g;
    c.readout = readout;
    c.task = task;
    c.task.batch_size = batch;
    c.transition_step = task.kind == tasks::TaskKind::anticipation ? task.switch_step - 1 : task.seq_len - 1;
    return c;
}

std::vector<Condition> table1_conditions(const ExperimentConfig& cfg)
{
    std::vector<Condition> out;
    const struct {
        const char* prefix;
        TaskSpec spec;
        double beta;
    } tasks_[] = {{"A", TaskSpec::early_signal(), 0.9}, {"B", TaskSpec::domain_switch(), 0.75}};
    for (const auto& t : tasks_) {
        const std::string p = t.prefix;
        out.push_back(toy(p + "/last_token", gate(false, false, false), t.spec, cfg.batch_size));
        out.push_back(toy(p + "/mean_pool", gate(false, false, false), t.spec, cfg.batch_size,
                          models::Readout::running_mean));
        GateConfig lif = gate(true, false, false);
        lif.beta_variant = BetaVariant::per_expert_membrane_cap;
        lif.beta_init = t.beta;
        lif.learn_beta = false;
        out.push_back(toy(p + "/lif_fixed", lif, t.spec, cfg.batch_size));
        lif.learn_beta = true;
        out.push_back(toy(p + "/lif_learned", lif, t.spec, cfg.batch_size));
    }
    return out;
}

std::vector<Condition> precision_conditions(const ExperimentConfig& cfg, bool timeline_only)
{
    std::vector<Condition> out;
    for (bool shifting : {false, true}) {
        if (timeline_only && !shifting) continue;
        for (bool use_pi : {false, true}) {
            if (timeline_only && !use_pi) continue;
            Condition c;
            c.name = std::string(shifting ? "shifting" : "static") + "/" + (use_pi ? "precision" : "affinity");
            c.model = ModelKind::regression;
            c.gate = gate(false, use_pi, false);
            c.gate.pi_mode = PrecisionMode::mse;
            c.task = TaskSpec::precision_regression(shifting);
            c.task.batch_size = cfg.batch_size;
            out.push_back(c);
        }
    }
    return out;
}

GateConfig ablation_gate(bool beta, bool pi, bool ant)
{
    GateConfig g = gate(beta, pi, ant);
    g.pi_mode = PrecisionMode::correctness;
    g.predictor_integration = PredictorIntegration::direct;
    return g;
}

std::vector<Condition> table4_conditions(const ExperimentConfig& cfg)
{
    const TaskSpec t = TaskSpec::anticipation();
    return {toy("baseline", ablation_gate(false, false, false), t, cfg.batch_size),
            toy("stateless_ant", ablation_gate(false, false, true), t, cfg.batch_size),
            toy("stateful_ant", ablation_gate(true, false, true), t, cfg.batch_size),
            toy("oracle", ablation_gate(false, false, false), t, cfg.batch_size, models::Readout::oracle_next)};
}

std::vector<Condition> ablation_conditions(const ExperimentConfig& cfg)
{
    const TaskSpec t = TaskSpec::anticipation();
    std::vector<Condition> out;
    out.push_back(toy("baseline", ablation_gate(false, false, false), t, cfg.batch_size));
    // Subsets in Table 5 order: none, single mechanisms, pairs, all three.
    const bool subsets[8][3] = {{false, false, false}, {true, false, false}, {false, true, false},
                                {false, false, true},  {true, true, false},  {true, false, true},
                                {false, true, true},   {true, true, true}};
    for (const auto& s : subsets) {
        const GateConfig g = ablation_gate(s[0], s[1], s[2]);
        out.push_back(toy(g.label(), g, t, cfg.batch_size));
    }
    out.push_back(toy("oracle", ablation_gate(false, false, false), t, cfg.batch_size, models::Readout::oracle_next));
    return out;
}

std::vector<Condition> lm_conditions(const ExperimentConfig& cfg)
{
    TaskSpec t = TaskSpec::char_lm();
    t.batch_size = cfg.batch_size;
    t.d_model = cfg.lm.d_model;
    t.n_experts = cfg.lm.n_experts;
    std::vector<Condition> out;
    const struct {
        const char* name;
        bool beta, ant;
    } rows[] = {{"standard", false, false}, {"beta", true, false}, {"beta+ant", true, true}};
    for (const auto& r : rows) {
        Condition c;
        c.name = r.name;
        c.model = ModelKind::char_lm;
        c.gate = gate(r.beta, false, r.ant);
        c.gate.predictor_integration = PredictorIntegration::additive;
        c.task = t;
        c.transition_step = cfg.lm.transition_step;
        out.push_back(c);
    }
    return out;
}

} // namespace

const char* to_string(Experiment e)
{
    switch (e) {
    case Experiment::table1: return "table1";
    case Experiment::table2: return "table2";
    case Experiment::table3: return "table3";
    case Experiment::table4: return "table4";
    case Experiment::ablation: return "ablation";
    case Experiment::lm: return "lm";
    }
    return "?";
}

const std::vector<Experiment>& all_experiments()
{
    static const std::vector<Experiment> all = {Experiment::table1, Experiment::table2, Experiment::table3,
                                                Experiment::table4, Experiment::ablation, Experiment::lm};
    return all;
}

Experiment experiment_from_string(const std::string& name)
{
    for (Experiment e : all_experiments()) {
        if (name == to_string(e)) return e;
    }
    if (name == "table5") return Experiment::ablation;
    if (name == "table6") return Experiment::lm;
    throw std::invalid_argument("unknown experiment '" + name +
                                "' (expected table1, table2, table3, table4, ablation or lm)");
}

nlohmann::json Condition::to_json() const
{
    const char* kinds[] = {"toy", "regression", "char_lm"};
    return {{"name", name},
            {"model", kinds[static_cast<int>(model)]},
            {"gate", gate_json(gate)},
            {"readout", models::to_string(readout)},
            {"task", task_json(task)},
            {"transition_step", transition_step}};
}

ExperimentConfig ExperimentConfig::defaults(Experiment e)
{
    ExperimentConfig c;
    c.experiment = e;
    c.out = default_out_dir();
    switch (e) {
    case Experiment::table1:
        c.epochs = 500;
        break;
    case Experiment::table2:
    case Experiment::table3:
        c.epochs = 1000;
        break;
    case Experiment::table4:
    case Experiment::ablation:
        c.epochs = 800;
        break;
    case Experiment::lm:
        c.epochs = 1500;
        c.batch_size = 256;
        break;
    }
    return c;
}

void ExperimentConfig::validate() const
{
    if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seed list is empty");
    if (epochs == 0) throw std::invalid_argument("ExperimentConfig: epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("ExperimentConfig: batch_size must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("ExperimentConfig: lr must be positive");
    if (window == 0 || window > epochs) {
        throw std::invalid_argument("ExperimentConfig: accuracy window must lie in [1, epochs]");
    }
    if ((experiment == Experiment::table2 || experiment == Experiment::table3) && loss_window > epochs) {
        throw std::invalid_argument("ExperimentConfig: loss window exceeds the number of steps");
    }
    if (eval_sequences == 0) throw std::invalid_argument("ExperimentConfig: eval_sequences must be positive");
    if (jobs == 0) throw std::invalid_argument("ExperimentConfig: jobs must be >= 1");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        for (std::size_t j = i + 1; j < seeds.size(); ++j) {
            if (seeds[i] == seeds[j]) {
                throw std::invalid_argument("ExperimentConfig: duplicate seed " + std::to_string(seeds[i]));
            }
        }
    }
    for (const Condition& c : conditions(*this)) {
        c.gate.validate();
        c.task.validate();
    }
}

nlohmann::json ExperimentConfig::to_json() const
{
    nlohmann::json conds = nlohmann::json::array();
    for (const Condition& c : conditions(*this)) conds.push_back(c.to_json());
    return {{"experiment", to_string(experiment)},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
            {"window", window},
            {"loss_window", loss_window},
            {"eval_sequences", eval_sequences},
            {"lm",
             {{"vocab", lm.vocab},
              {"d_model", lm.d_model},
              {"n_experts", lm.n_experts},
              {"hidden", lm.hidden},
              {"transition_step", lm.transition_step},
              {"transition_weight", lm.transition_weight}}},
            {"conditions", conds}};
}

std::string ExperimentConfig::hash() const
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(ad::fnv1a64(to_json().dump())));
    return buf;
}

std::vector<Condition> conditions(const ExperimentConfig& config)
{
    switch (config.experiment) {
    case Experiment::table1: return table1_conditions(config);
    case Experiment::table2: return precision_conditions(config, false);
    case Experiment::table3: return precision_conditions(config, true);
    case Experiment::table4: return table4_conditions(config);
    case Experiment::ablation: return ablation_conditions(config);
    case Experiment::lm: return lm_conditions(config);
    }
    throw std::logic_error("conditions: unhandled experiment");
}

std::filesystem::path default_out_dir()
{
    if (const char* env = std::getenv("ROUTE_LAB_OUT"); env && *env) return env;
    return "results";
}

} // namespace routelab::harness
