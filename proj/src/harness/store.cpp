#include "routelab/harness/store.hpp"

#include <algorithm>
#include <charconv>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace routelab::harness {

namespace fs = std::filesystem;

namespace {

const char* const kHeader = "experiment,condition,seed,config_hash,metric,value";

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, std::size_t line)
{
    double v = 0.0;
    const char* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || ptr != end) {
        throw std::invalid_argument("metrics csv line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

} // namespace

std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string emit_metrics_csv(const std::vector<MetricRow>& rows)
{
    std::string out = std::string(kHeader) + "\n";
    for (const MetricRow& r : rows) {
        for (const std::string* f : {&r.experiment, &r.condition, &r.config_hash, &r.metric}) {
            if (f->find_first_of(",\n\"") != std::string::npos) {
                throw std::invalid_argument("metrics csv: field '" + *f + "' contains a separator");
            }
        }
        out += r.experiment + ',' + r.condition + ',' + std::to_string(r.seed) + ',' + r.config_hash + ',' +
               r.metric + ',' + format_double(r.value) + '\n';
    }
    return out;
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader) {
        throw std::invalid_argument("metrics csv: missing or unexpected header");
    }
    std::vector<MetricRow> rows;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 6) {
            throw std::invalid_argument("metrics csv line " + std::to_string(n) + ": expected 6 fields, got " +
                                        std::to_string(f.size()));
        }
        MetricRow r;
        r.experiment = f[0];
        r.condition = f[1];
        try {
            std::size_t used = 0;
            r.seed = std::stoull(f[2], &used);
            if (used != f[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw std::invalid_argument("metrics csv line " + std::to_string(n) + ": bad seed '" + f[2] + "'");
        }
        r.config_hash = f[3];
        r.metric = f[4];
        r.value = parse_double(f[5], n);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_atomic(const fs::path& path, const std::string& text)
{
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw StoreError("cannot create " + path.parent_path().string() + ": " + ec.message());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StoreError("cannot open " + tmp.string() + ": " + std::strerror(errno));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.flush();
        if (!out) throw StoreError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw StoreError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_stem(const std::string& condition)
{
    std::string s = condition;
    std::replace(s.begin(), s.end(), '/', '-');
    return s;
}

ResultStore::ResultStore(fs::path root, Experiment experiment)
  : dir_(std::move(root) / to_string(experiment)), experiment_(experiment)
{
    load();
}

void ResultStore::load()
{
    const fs::path manifest = dir_ / "manifest.json";
    if (!fs::exists(manifest)) return;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(manifest));
    } catch (const nlohmann::json::exception& e) {
        throw StoreError("corrupt manifest " + manifest.string() + ": " + e.what());
    }
    if (j.value("experiment", "") != to_string(experiment_)) {
        throw StoreError(manifest.string() + " belongs to experiment '" + j.value("experiment", "") + "'");
    }
    configs_ = j.value("configs", nlohmann::json::object());
    latest_hash_ = j.value("latest_hash", "");
    for (const auto& r : j.at("runs")) {
        RunRecord rec;
        rec.condition = r.at("condition").get<std::string>();
        rec.seed = r.at("seed").get<std::uint64_t>();
        rec.config_hash = r.at("config_hash").get<std::string>();
        for (const auto& [k, v] : r.at("metrics").items()) {
            // JSON has no NaN; they are stored as null.
            rec.metrics[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
        }
        rec.wallclock_s = r.value("wallclock", 0.0);
        runs_.push_back(std::move(rec));
    }
}

bool ResultStore::contains(const std::string& condition, std::uint64_t seed, const std::string& hash) const
{
    return std::any_of(runs_.begin(), runs_.end(), [&](const RunRecord& r) {
        return r.condition == condition && r.seed == seed && r.config_hash == hash;
    });
}

fs::path ResultStore::curve_path(const std::string& condition, std::uint64_t seed) const
{
    return dir_ / "curves" / (file_stem(condition) + "__seed" + std::to_string(seed) + ".csv");
}

void ResultStore::commit(const ExperimentConfig& config, const metrics::RunResult& result)
{
    const std::string hash = config.hash();
    configs_[hash] = config.to_json();
    latest_hash_ = hash;

    RunRecord rec{result.condition, result.seed, hash, result.metrics, result.wallclock_s};
    auto it = std::find_if(runs_.begin(), runs_.end(), [&](const RunRecord& r) {
        return r.condition == rec.condition && r.seed == rec.seed;
    });
    if (it != runs_.end()) {
        *it = std::move(rec);
    } else {
        runs_.push_back(std::move(rec));
    }

    // Curves: one column per named curve, one row per epoch.
    std::string csv = "epoch";
    std::size_t len = 0;
    for (const auto& [name, v] : result.curves) {
        csv += ',' + name;
        len = std::max(len, v.size());
    }
    csv += '\n';
    for (std::size_t i = 0; i < len; ++i) {
        csv += std::to_string(i);
        for (const auto& [name, v] : result.curves) {
            csv += ',';
            if (i < v.size()) csv += format_double(v[i]);
        }
        csv += '\n';
    }
    write_atomic(curve_path(result.condition, result.seed), csv);
    write_metrics();
    write_manifest();
    std::error_code ec;
    fs::remove(dir_ / "PARTIAL", ec);
}

void ResultStore::write_metrics() const
{
    std::vector<MetricRow> rows;
    for (const RunRecord& r : runs_) {
        for (const auto& [k, v] : r.metrics) {
            rows.push_back({to_string(experiment_), r.condition, r.seed, r.config_hash, k, v});
        }
    }
    write_atomic(metrics_path(), emit_metrics_csv(rows));
}

void ResultStore::write_manifest() const
{
    nlohmann::json runs = nlohmann::json::array();
    for (const RunRecord& r : runs_) {
        nlohmann::json m = nlohmann::json::object();
        for (const auto& [k, v] : r.metrics) m[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
        runs.push_back({{"condition", r.condition},
                        {"seed", r.seed},
                        {"config_hash", r.config_hash},
                        {"metrics", m},
                        {"wallclock", r.wallclock_s}});
    }
    const nlohmann::json j = {{"experiment", to_string(experiment_)},
                              {"latest_hash", latest_hash_},
                              {"configs", configs_},
                              {"runs", runs}};
    write_atomic(dir_ / "manifest.json", j.dump(2) + "\n");
}

void ResultStore::mark_partial(const std::string& reason) const
{
    // Best effort: the disk may be the thing that failed.
    std::error_code ec;
    fs::create_directories(dir_, ec);
    std::ofstream out(dir_ / "PARTIAL", std::ios::trunc);
    out << reason << '\n';
}

bool ResultStore::partial() const { return fs::exists(dir_ / "PARTIAL"); }

} // namespace routelab::harness
