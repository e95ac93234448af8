#include "routelab/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace routelab::harness {

namespace {

using metrics::Aggregate;
namespace mn = metrics::name;

enum class Best { none, max, min };

struct Column {
    Column(std::string h, std::string m, int d, Best b, bool p = false, std::string pre = "")
      : header(std::move(h)), metric(std::move(m)), digits(d), best(b), paired(p), prefix(std::move(pre))
    { }

    std::string header;
    std::string metric;
    int digits;
    Best best;
    bool paired;         // delta against the "baseline" condition, paired per seed
    std::string prefix;  // prepended to the row's condition (per-task columns)
};

struct Row {
    std::string label;
    std::string condition;
    bool eligible = true;  // may receive the best-cell asterisk
};

std::string fmt(double v, int digits, bool sign = false)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, sign ? "%+.*f" : "%.*f", digits, v);
    std::string out = buf;
    // Tiny negatives round to "-0.000"; show them as zero.
    if (out[0] == '-' && out.find_first_of("123456789") == std::string::npos) out = (sign ? "+" : "") + out.substr(1);
    return out;
}

std::string render_grid(const std::vector<std::vector<std::string>>& grid)
{
    // Width in code points, so "±" counts once.
    auto width = [](const std::string& s) {
        std::size_t n = 0;
        for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
        return n;
    };
    std::vector<std::size_t> w(grid.front().size(), 0);
    for (const auto& line : grid) {
        for (std::size_t c = 0; c < line.size(); ++c) w[c] = std::max(w[c], width(line[c]));
    }
    std::string out;
    for (std::size_t r = 0; r < grid.size(); ++r) {
        for (std::size_t c = 0; c < grid[r].size(); ++c) {
            out += grid[r][c];
            if (c + 1 < grid[r].size()) out += std::string(w[c] - width(grid[r][c]) + 2, ' ');
        }
        out += '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (std::size_t x : w) total += x + 2;
            out += std::string(total - 2, '-') + '\n';
        }
    }
    return out;
}

class Builder {
public:
    Builder(const char* table_id, const ResultTable& t) : id_(table_id), t_(t) { }

    // Renders one table; returns it and appends its cells to the CSV.
    std::string table(const std::string& title, const std::vector<Row>& rows, const std::vector<Column>& cols)
    {
        std::vector<std::vector<Aggregate>> agg(rows.size(), std::vector<Aggregate>(cols.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < cols.size(); ++c) {
                agg[r][c] = cell(cols[c].prefix + rows[r].condition, cols[c]);
                csv_cell(rows[r].label, cols[c].header, agg[r][c]);
            }
        }
        std::vector<std::vector<std::string>> grid;
        std::vector<std::string> head{"Condition"};
        for (const Column& c : cols) head.push_back(c.header);
        grid.push_back(head);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::vector<std::string> line{rows[r].label};
            for (std::size_t c = 0; c < cols.size(); ++c) {
                if (agg[r][c].n == 0) {
                    line.push_back("---");
                    continue;
                }
                std::string s = format_cell(agg[r][c], cols[c].digits, cols[c].paired);
                if (rows[r].eligible && is_best(rows, agg, r, c, cols[c])) s += " *";
                line.push_back(s);
            }
            grid.push_back(line);
        }
        return title + "\n" + render_grid(grid) + "* best non-oracle cell per column\n";
    }

    void csv_cell(const std::string& row, const std::string& col, const Aggregate& a)
    {
        if (a.n == 0) return;
        csv_ << id_ << ',' << row << ',' << col << ',' << a.n << ',' << format_double(a.mean) << ','
             << format_double(a.std) << '\n';
    }

    std::string csv() const { return "table,row,column,n,mean,std\n" + csv_.str(); }

private:
    Aggregate cell(const std::string& cond, const Column& col) const
    {
        if (col.paired) {
            if (cond == "baseline") return Aggregate{};
            const auto d = metrics::paired_deltas(t_.values(cond, col.metric), t_.values("baseline", col.metric));
            const auto v = metrics::values_of(d);
            return metrics::aggregate(v);
        }
        return t_.aggregate(cond, col.metric);
    }

    static bool is_best(const std::vector<Row>& rows, const std::vector<std::vector<Aggregate>>& agg,
                        std::size_t r, std::size_t c, const Column& col)
    {
        if (col.best == Best::none) return false;
        // Compare at display precision so visually tied cells are all marked.
        const double scale = std::pow(10.0, col.digits);
        auto key = [&](std::size_t i) { return std::round(agg[i][c].mean * scale); };
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i].eligible || agg[i][c].n == 0) continue;
            if (col.best == Best::max ? key(i) > key(r) : key(i) < key(r)) return false;
        }
        return true;
    }

    const char* id_;
    const ResultTable& t_;
    std::ostringstream csv_;
};

std::string seeds_line(const ResultTable& t)
{
    std::string s = "seeds:";
    for (std::uint64_t k : t.seeds()) s += " " + std::to_string(k);
    return s + "  (config " + t.hash() + ")\n";
}

// Mean over seeds of a vector-valued metric family name_0, name_1, ...
std::string vector_line(const ResultTable& t, const std::string& cond, const std::string& prefix, int digits)
{
    std::string s = "[";
    for (int i = 0; t.has(cond, prefix + std::to_string(i)); ++i) {
        if (i > 0) s += ", ";
        s += fmt(t.aggregate(cond, prefix + std::to_string(i)).mean, digits);
    }
    return s + "]";
}

Report table1(const ResultTable& t)
{
    Builder b("table1", t);
    std::string text = b.table("Table 1: beta-routing, accuracy at the final step (last 50 epochs)",
                               {{"Stateless last-token", "last_token"},
                                {"Stateless mean-pool", "mean_pool"},
                                {"LIF fixed beta", "lif_fixed"},
                                {"LIF learned beta", "lif_learned"}},
                               {{"Task A (early signal)", mn::acc_final, 3, Best::max, false, "A/"},
                                {"Task B (domain switch)", mn::acc_final, 3, Best::max, false, "B/"}});
    text += "learned beta, Task A: " + vector_line(t, "A/lif_learned", "beta_", 3) + "\n";
    text += "learned beta, Task B: " + vector_line(t, "B/lif_learned", "beta_", 3) + "\n";
    text += seeds_line(t);
    return {text, b.csv()};
}

Report table2(const ResultTable& t)
{
    Builder b("table2", t);
    std::string text;
    for (const char* cond : {"static", "shifting"}) {
        const std::string c = cond;
        text += b.table(std::string("Table 2: precision gating, ") + cond + " reliability (mean MSE)",
                        {{"Affinity", c + "/affinity"}, {"Precision", c + "/precision"}},
                        {{"Early loss", mn::early_loss, 4, Best::min},
                         {"Final loss", mn::final_loss, 4, Best::min}});
    }
    text += "static Pi at convergence: " + vector_line(t, "static/precision", "pi_", 2) + "\n";
    const Aggregate aff = t.aggregate("shifting/affinity", mn::final_loss);
    const Aggregate pre = t.aggregate("shifting/precision", mn::final_loss);
    text += "shifting final-loss ratio affinity / precision: " + fmt(aff.mean / pre.mean, 2) + "x\n";
    text += seeds_line(t);
    return {text, b.csv()};
}

Report table3(const ResultTable& t)
{
    Builder b("table3", t);
    const std::string cond = "shifting/precision";
    std::vector<std::vector<std::string>> grid{{"Step", "Pi_0", "Pi_1", "Pi_2", "Pi_3", "Pi_0 > Pi_2?"}};
    for (std::size_t step : metrics::default_pi_grid()) {
        const std::string at = "@" + std::to_string(step);
        if (!t.has(cond, "pi_0" + at)) continue;
        std::vector<std::string> line{std::to_string(step)};
        double m[4];
        for (int i = 0; i < 4; ++i) {
            const Aggregate a = t.aggregate(cond, "pi_" + std::to_string(i) + at);
            m[i] = a.mean;
            b.csv_cell(std::to_string(step), "pi_" + std::to_string(i), a);
            line.push_back(format_cell(a, 2));
        }
        line.push_back(m[0] > m[2] ? "YES" : "no");
        grid.push_back(line);
    }
    std::string text = "Table 3: Pi around the reliability shift at step 500 (mean over seeds)\n" + render_grid(grid);
    const Aggregate cross = t.aggregate(cond, mn::pi_crossover_step);
    b.csv_cell("crossover", "step", cross);
    text += "first crossover step: " + format_cell(cross, 1) + "  (per seed:";
    for (const auto& [seed, v] : t.values(cond, mn::pi_crossover_step)) text += " " + fmt(v, 0);
    text += ")\n" + seeds_line(t);
    return {text, b.csv()};
}

Report table4(const ResultTable& t)
{
    Builder b("table4", t);
    std::string text = b.table("Table 4: anticipatory routing (training accuracy, last 50 epochs)",
                               {{"Current-token (baseline)", "baseline"},
                                {"Stateless anticipatory", "stateless_ant"},
                                {"Stateful anticipatory", "stateful_ant"},
                                {"Oracle (upper bound)", "oracle", false}},
                               {{"acc (all steps)", mn::acc_all, 3, Best::max},
                                {"acc (transition t=5)", mn::acc_transition, 3, Best::max}});
    if (t.has("stateful_ant", "h_block_mean@4")) {
        text += "stateful h, domain-A block mean: t=4 " + format_cell(t.aggregate("stateful_ant", "h_block_mean@4"), 2) +
                ", t=5 " + format_cell(t.aggregate("stateful_ant", "h_block_mean@5"), 2) + "\n";
    }
    text += seeds_line(t);
    return {text, b.csv()};
}

Report ablation(const ResultTable& t)
{
    Builder b("ablation", t);
    const std::pair<const char*, const char*> order[] = {
        {"baseline", "Baseline"},      {"beta", "beta only"},           {"pi", "Pi only"},
        {"ant", "Ant only"},           {"beta+pi", "beta + Pi"},        {"beta+ant", "beta + Ant"},
        {"pi+ant", "Pi + Ant"},        {"beta+pi+ant", "beta + Pi + Ant"}, {"oracle", "Oracle"}};
    std::vector<Row> rows;
    for (const auto& [cond, label] : order) rows.push_back({label, cond, std::string(cond) != "oracle"});
    if (t.has("none", mn::acc_transition)) rows.insert(rows.begin() + 1, Row{"none (empty subset)", "none"});
    std::string text = b.table("Table 5: full ablation (training accuracy, last 50 epochs; delta paired per seed)", rows,
                               {{"acc (all)", mn::acc_all, 3, Best::max},
                                {"acc@transition", mn::acc_transition, 3, Best::max},
                                {"delta vs baseline", mn::acc_transition, 3, Best::max, true}});
    const auto inter = metrics::interaction(t.values("beta+ant", mn::acc_transition), t.values("beta", mn::acc_transition),
                                            t.values("ant", mn::acc_transition), t.values("baseline", mn::acc_transition));
    const Aggregate ia = metrics::aggregate(metrics::values_of(inter));
    b.csv_cell("interaction", "beta x ant", ia);
    text += "interaction delta(beta+Ant) - delta(beta) - delta(Ant): " + format_cell(ia, 3, true) + " (paired per seed)\n";
    const Aggregate oracle = t.aggregate("oracle", mn::acc_transition);
    const Aggregate base = t.aggregate("baseline", mn::acc_transition);
    const Aggregate both = t.aggregate("beta+ant", mn::acc_transition);
    text += "share of oracle gap closed by beta+Ant: " + fmt(100.0 * (both.mean - base.mean) / (oracle.mean - base.mean), 0) +
            "%\n";
    if (t.has("beta+ant", "h_block_mean@4")) {
        text += "beta+Ant h, domain-A block mean: t=4 " + format_cell(t.aggregate("beta+ant", "h_block_mean@4"), 2) +
                ", t=5 " + format_cell(t.aggregate("beta+ant", "h_block_mean@5"), 2) + "\n";
    }
    text += "Pi (correctness mode) at end, beta+Pi: " + vector_line(t, "beta+pi", "pi_", 2) + "\n";
    text += seeds_line(t);
    return {text, b.csv()};
}

Report lm(const ResultTable& t)
{
    Builder b("lm", t);
    std::string text = b.table("Table 6: character-level MoE language model (held-out)",
                               {{"Standard MoE", "standard"}, {"beta-MoE", "beta"}, {"beta+Ant MoE", "beta+ant"}},
                               {{"BPC (all)", mn::bpc_all, 3, Best::min},
                                {"BPC (trans)", mn::bpc_transition, 3, Best::min},
                                {"p_B@trans", mn::p_b_transition, 3, Best::max},
                                {"p_B@mid", mn::p_b_mid, 3, Best::max},
                                {"K (99%)", mn::k99, 1, Best::min}});
    const auto d = metrics::paired_deltas(t.values("beta", mn::bpc_transition), t.values("standard", mn::bpc_transition));
    const Aggregate da = metrics::aggregate(metrics::values_of(d));
    b.csv_cell("beta - standard", "BPC (trans)", da);
    text += "paired BPC(trans) change, beta vs standard: " + format_cell(da, 2, true) + "\n";
    text += "K is the unrounded log(0.01)/log(1-p_B@trans) per seed, floored at 1, then averaged\n";
    text += seeds_line(t);
    return {text, b.csv()};
}

} // namespace

std::string format_cell(const Aggregate& a, int digits, bool sign)
{
    const std::string sd = a.n > 1 && std::isfinite(a.std) ? fmt(a.std, digits) : "n/a";
    return fmt(a.mean, digits, sign) + " ± " + sd;
}

ResultTable ResultTable::from_rows(const std::vector<MetricRow>& rows, const std::string& hash,
                                   const std::vector<std::string>& conditions)
{
    ResultTable t;
    t.hash_ = hash;
    t.conditions_ = conditions;
    for (const MetricRow& r : rows) {
        if (r.config_hash != hash) continue;
        t.seeds_.insert(r.seed);
        t.data_[{r.condition, r.metric}][r.seed] = r.value;
    }
    if (t.seeds_.empty()) throw MissingRuns("no stored runs for config " + hash);
    std::string missing;
    for (const std::string& c : conditions) {
        for (std::uint64_t s : t.seeds_) {
            const bool any = std::any_of(t.data_.begin(), t.data_.end(), [&](const auto& kv) {
                return kv.first.first == c && kv.second.count(s) > 0;
            });
            if (!any) missing += "\n  " + c + " seed " + std::to_string(s);
        }
    }
    if (!missing.empty()) throw MissingRuns("missing runs for config " + hash + ":" + missing);
    return t;
}

ResultTable ResultTable::load(const ResultStore& store)
{
    if (store.latest_hash().empty() || !std::filesystem::exists(store.metrics_path())) {
        throw MissingRuns("no results under " + store.dir().string() + "; run the experiment first");
    }
    std::vector<std::string> conds;
    for (const auto& c : store.configs().at(store.latest_hash()).at("conditions")) {
        conds.push_back(c.at("name").get<std::string>());
    }
    return from_rows(parse_metrics_csv(read_file(store.metrics_path())), store.latest_hash(), conds);
}

bool ResultTable::has(const std::string& condition, const std::string& metric) const
{
    return data_.count({condition, metric}) > 0;
}

const metrics::SeedValues& ResultTable::values(const std::string& condition, const std::string& metric) const
{
    const auto it = data_.find({condition, metric});
    if (it == data_.end()) throw MissingRuns("no '" + metric + "' stored for condition '" + condition + "'");
    if (it->second.size() != seeds_.size()) {
        throw MissingRuns("'" + metric + "' for '" + condition + "' is missing some seeds");
    }
    return it->second;
}

Aggregate ResultTable::aggregate(const std::string& condition, const std::string& metric) const
{
    const auto v = metrics::values_of(values(condition, metric));
    return metrics::aggregate(v);
}

Report build_report(Experiment experiment, const ResultTable& table)
{
    switch (experiment) {
    case Experiment::table1: return table1(table);
    case Experiment::table2: return table2(table);
    case Experiment::table3: return table3(table);
    case Experiment::table4: return table4(table);
    case Experiment::ablation: return ablation(table);
    case Experiment::lm: return lm(table);
    }
    throw std::logic_error("build_report: unhandled experiment");
}

Report build_report(const ResultStore& store)
{
    return build_report(store.experiment(), ResultTable::load(store));
}

} // namespace routelab::harness
