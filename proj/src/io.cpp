#include "dxchoice/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "dxchoice/errors.hpp"
#include "dxchoice/sampling.hpp"

namespace dxchoice {

using nlohmann::json;

namespace {

constexpr std::string_view kPatientsHeader = "physician_id,patient_id,risk,y,d";
constexpr std::string_view kEstimatesHeader =
    "physician_id,n,beta,sigma_xi,sigma_eta,loglik,converged,beta_lo,beta_hi,sxi_lo,sxi_hi,seta_lo,seta_hi";

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

// Calls fn(line_number, line) for each non-empty line after the header.
template <typename Fn>
void for_each_row(std::string_view text, std::string_view header, Fn&& fn) {
    if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
        ++line_no;
        if (!line.empty()) {
            if (!saw_header) {
                if (line != header)
                    throw ValidationError("line 1: expected header '" + std::string(header) + "'");
                saw_header = true;
            } else {
                fn(line_no, line);
            }
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    if (!saw_header) throw ValidationError("missing header '" + std::string(header) + "'");
}

[[noreturn]] void row_error(std::size_t line_no, const std::string& what) {
    throw ValidationError("line " + std::to_string(line_no) + ": " + what);
}

double parse_double(std::string_view s, std::size_t line_no, const char* field) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        row_error(line_no, std::string("cannot parse ") + field + " '" + std::string(s) + "'");
    return v;
}

double parse_optional_double(std::string_view s, std::size_t line_no, const char* field) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    return parse_double(s, line_no, field);
}

long long parse_int(std::string_view s, std::size_t line_no, const char* field) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        row_error(line_no, std::string("cannot parse ") + field + " '" + std::string(s) + "'");
    return v;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::vector<PatientCase> parse_patients_text(std::string_view text, CsvReport* report) {
    std::vector<PatientCase> cases;
    std::set<std::pair<std::string, std::string>> seen;
    CsvReport rep;
    for_each_row(text, kPatientsHeader, [&](std::size_t line_no, std::string_view line) {
        const auto f = split_fields(line);
        if (f.size() != 5) row_error(line_no, "expected 5 fields, found " + std::to_string(f.size()));
        if (f[0].empty() || f[1].empty()) row_error(line_no, "empty physician_id or patient_id");
        const double risk = parse_double(f[2], line_no, "risk");
        if (!(risk >= 0.0 && risk <= 1.0)) row_error(line_no, "risk must lie in [0, 1]");
        const long long y = parse_int(f[3], line_no, "y");
        const long long d = parse_int(f[4], line_no, "d");
        if (y != 0 && y != 1) row_error(line_no, "y must be 0 or 1, got " + std::string(f[3]));
        if (d != 0 && d != 1) row_error(line_no, "d must be 0 or 1, got " + std::string(f[4]));
        if (!seen.emplace(std::string(f[0]), std::string(f[1])).second)
            row_error(line_no, "duplicate case (" + std::string(f[0]) + ", " + std::string(f[1]) + ")");
        bool clamped = false;
        cases.push_back(make_case(std::string(f[0]), std::string(f[1]), risk, static_cast<int>(y),
                                  static_cast<int>(d), &clamped));
        rep.clamped += clamped ? 1 : 0;
        ++rep.rows;
    });
    if (report) *report = rep;
    return cases;
}

std::vector<PatientCase> parse_patients_csv(const std::filesystem::path& path, CsvReport* report) {
    try {
        return parse_patients_text(read_text(path), report);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_patients_csv(const std::filesystem::path& path, std::span<const PatientCase> cases) {
    auto out = open_out(path);
    out << kPatientsHeader << '\n';
    for (const auto& c : cases)
        out << c.physician_id << ',' << c.patient_id << ',' << fmt(c.risk) << ',' << c.y << ',' << c.d << '\n';
}

void write_estimates_csv(const std::filesystem::path& path, std::span<const EstimationResult> results) {
    auto out = open_out(path);
    out << kEstimatesHeader << '\n';
    for (const auto& r : results) {
        out << r.physician_id << ',' << r.n_obs << ',' << fmt(r.params.beta) << ',' << fmt(r.params.sigma_xi) << ','
            << fmt(r.params.sigma_eta) << ',' << fmt(r.loglik) << ',' << (r.converged ? 1 : 0);
        if (r.bootstrap_ci) {
            const auto& ci = *r.bootstrap_ci;
            for (const Interval* iv : {&ci.beta, &ci.sigma_xi, &ci.sigma_eta})
                out << ',' << fmt(iv->lower) << ',' << fmt(iv->upper);
        } else {
            out << ",,,,,,";
        }
        out << '\n';
    }
}

std::vector<EstimationResult> read_estimates_csv(const std::filesystem::path& path) {
    std::vector<EstimationResult> results;
    std::set<std::string> seen;
    try {
        for_each_row(read_text(path), kEstimatesHeader, [&](std::size_t line_no, std::string_view line) {
            const auto f = split_fields(line);
            if (f.size() != 13) row_error(line_no, "expected 13 fields, found " + std::to_string(f.size()));
            EstimationResult r;
            r.physician_id = std::string(f[0]);
            if (r.physician_id.empty()) row_error(line_no, "empty physician_id");
            if (!seen.insert(r.physician_id).second) row_error(line_no, "duplicate physician " + r.physician_id);
            r.n_obs = static_cast<std::size_t>(parse_int(f[1], line_no, "n"));
            r.params.beta = parse_double(f[2], line_no, "beta");
            r.params.sigma_xi = parse_double(f[3], line_no, "sigma_xi");
            r.params.sigma_eta = parse_double(f[4], line_no, "sigma_eta");
            if (!(r.params.beta >= 0.0 && r.params.beta <= 1.0) || !(r.params.sigma_xi >= 0.0) ||
                !(r.params.sigma_eta > 0.0))
                row_error(line_no, "parameters out of range");
            r.loglik = parse_optional_double(f[5], line_no, "loglik");
            const long long conv = parse_int(f[6], line_no, "converged");
            if (conv != 0 && conv != 1) row_error(line_no, "converged must be 0 or 1");
            r.converged = conv == 1;
            bool any_ci = false;
            for (std::size_t k = 7; k < 13; ++k) any_ci = any_ci || !f[k].empty();
            if (any_ci) {
                BootstrapIntervals ci;
                ci.beta = {parse_optional_double(f[7], line_no, "beta_lo"), parse_optional_double(f[8], line_no, "beta_hi")};
                ci.sigma_xi = {parse_optional_double(f[9], line_no, "sxi_lo"), parse_optional_double(f[10], line_no, "sxi_hi")};
                ci.sigma_eta = {parse_optional_double(f[11], line_no, "seta_lo"),
                                parse_optional_double(f[12], line_no, "seta_hi")};
                r.bootstrap_ci = ci;
            }
            results.push_back(std::move(r));
        });
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return results;
}

void write_truth_csv(const std::filesystem::path& path, std::span<const PhysicianTruth> truth) {
    std::vector<EstimationResult> rows;
    for (const auto& t : truth) {
        EstimationResult r;
        r.physician_id = t.physician_id;
        r.params = t.params;
        r.loglik = std::numeric_limits<double>::quiet_NaN();
        r.converged = true;
        rows.push_back(std::move(r));
    }
    write_estimates_csv(path, rows);
}

EstimateMap to_estimate_map(std::span<const EstimationResult> results) {
    EstimateMap map;
    for (const auto& r : results) map[r.physician_id] = r.params;
    return map;
}

void write_welfare_csv(const std::filesystem::path& path, const WelfareCurve& curve) {
    auto out = open_out(path);
    out << "beta_s";
    for (std::size_t p = 0; p < curve.w_values.size(); ++p) out << ",w_policy" << p + 1;
    out << '\n';
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        out << fmt(curve.grid[g]);
        for (const auto& w : curve.w_values) out << ',' << fmt(w[g]);
        out << '\n';
    }
}

void write_fit_moments_csv(const std::filesystem::path& path, std::span<const PhysicianFitMoments> rows) {
    auto out = open_out(path);
    out << "physician_id,n,obs_prescribe,obs_over,obs_under,sim_prescribe,sim_over,sim_under\n";
    for (const auto& r : rows)
        out << r.physician_id << ',' << r.n << ',' << fmt(r.observed.prescribe_rate) << ','
            << fmt(r.observed.overprescribe_rate) << ',' << fmt(r.observed.underprescribe_rate) << ','
            << fmt(r.simulated.prescribe_rate) << ',' << fmt(r.simulated.overprescribe_rate) << ','
            << fmt(r.simulated.underprescribe_rate) << '\n';
}

SmoothingConfig RunConfig::smoothing() const { return {lambda, r_count}; }

OptimizerConfig RunConfig::optimizer() const {
    OptimizerConfig opt;
    opt.gradient_tolerance = gradient_tolerance;
    opt.max_iterations = max_iterations;
    opt.restarts = restarts;
    opt.jitter = jitter;
    opt.min_observations = min_observations;
    return opt;
}

CounterfactualConfig RunConfig::counterfactual() const {
    CounterfactualConfig cfg;
    cfg.mode = decision_mode;
    cfg.seed = seed;
    cfg.quadrature_order = quadrature_order;
    cfg.redistribute_per_physician = redistribute_per_physician;
    return cfg;
}

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> keys, const char* where) {
    if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (auto key : keys) known = known || k == key;
        if (!known) throw ValidationError(std::string(where) + ": unknown key '" + k + "'");
    }
}

template <typename T>
void take(const json& j, const char* key, T& value) {
    if (!j.contains(key)) return;
    try {
        value = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad value for '") + key + "': " + e.what());
    }
}

DecisionMode parse_mode(const std::string& s) {
    if (s == "expected") return DecisionMode::expected;
    if (s == "realized") return DecisionMode::realized;
    throw ValidationError("decision_mode must be 'expected' or 'realized'");
}

TruncatedNormalLaw law_from_json(const json& j, TruncatedNormalLaw law, const char* where) {
    reject_unknown_keys(j, {"mean", "sd", "lower", "upper"}, where);
    take(j, "mean", law.mean);
    take(j, "sd", law.sd);
    take(j, "lower", law.lower);
    take(j, "upper", law.upper);
    return law;
}

json law_to_json(const TruncatedNormalLaw& law) {
    return {{"mean", law.mean}, {"sd", law.sd}, {"lower", law.lower}, {"upper", law.upper}};
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    reject_unknown_keys(j,
                        {"seed", "r_count", "lambda", "gradient_tolerance", "max_iterations", "restarts", "jitter",
                         "bootstrap_reps", "welfare_step", "min_observations", "decision_mode",
                         "redistribute_per_physician", "quadrature_order"},
                        "run config");
    RunConfig cfg;
    take(j, "seed", cfg.seed);
    take(j, "r_count", cfg.r_count);
    take(j, "lambda", cfg.lambda);
    take(j, "gradient_tolerance", cfg.gradient_tolerance);
    take(j, "max_iterations", cfg.max_iterations);
    take(j, "restarts", cfg.restarts);
    take(j, "jitter", cfg.jitter);
    take(j, "bootstrap_reps", cfg.bootstrap_reps);
    take(j, "welfare_step", cfg.welfare_step);
    take(j, "min_observations", cfg.min_observations);
    take(j, "redistribute_per_physician", cfg.redistribute_per_physician);
    take(j, "quadrature_order", cfg.quadrature_order);
    std::string mode = to_string(cfg.decision_mode);
    take(j, "decision_mode", mode);
    cfg.decision_mode = parse_mode(mode);
    validate(cfg.smoothing());
    if (cfg.restarts < 0 || cfg.max_iterations < 1 || !(cfg.gradient_tolerance > 0.0))
        throw ValidationError("invalid optimizer settings");
    return cfg;
}

json to_json(const RunConfig& cfg) {
    return {{"seed", cfg.seed},
            {"r_count", cfg.r_count},
            {"lambda", cfg.lambda},
            {"gradient_tolerance", cfg.gradient_tolerance},
            {"max_iterations", cfg.max_iterations},
            {"restarts", cfg.restarts},
            {"jitter", cfg.jitter},
            {"bootstrap_reps", cfg.bootstrap_reps},
            {"welfare_step", cfg.welfare_step},
            {"min_observations", cfg.min_observations},
            {"decision_mode", to_string(cfg.decision_mode)},
            {"redistribute_per_physician", cfg.redistribute_per_physician},
            {"quadrature_order", cfg.quadrature_order}};
}

PopulationSpec population_spec_from_json(const json& j) {
    reject_unknown_keys(j, {"n_physicians", "patients_per_physician", "seed", "params", "risk"}, "population spec");
    PopulationSpec spec;
    take(j, "n_physicians", spec.n_physicians);
    take(j, "patients_per_physician", spec.patients_per_physician);
    take(j, "seed", spec.seed);
    if (j.contains("params")) {
        const json& p = j.at("params");
        reject_unknown_keys(p, {"fixed", "beta", "sigma_xi", "sigma_eta"}, "params");
        if (p.contains("fixed")) {
            const json& f = p.at("fixed");
            reject_unknown_keys(f, {"beta", "sigma_xi", "sigma_eta"}, "params.fixed");
            PhysicianParams theta;
            take(f, "beta", theta.beta);
            take(f, "sigma_xi", theta.sigma_xi);
            take(f, "sigma_eta", theta.sigma_eta);
            spec.param_law.fixed = theta;
        }
        if (p.contains("beta")) spec.param_law.beta = law_from_json(p.at("beta"), spec.param_law.beta, "params.beta");
        if (p.contains("sigma_xi"))
            spec.param_law.sigma_xi = law_from_json(p.at("sigma_xi"), spec.param_law.sigma_xi, "params.sigma_xi");
        if (p.contains("sigma_eta"))
            spec.param_law.sigma_eta = law_from_json(p.at("sigma_eta"), spec.param_law.sigma_eta, "params.sigma_eta");
    }
    if (j.contains("risk")) {
        const json& r = j.at("risk");
        reject_unknown_keys(r, {"kind", "a", "b"}, "risk");
        std::string kind = "beta";
        take(r, "kind", kind);
        if (kind == "beta") {
            spec.risk_law.kind = RiskLaw::Kind::beta;
        } else if (kind == "fixed") {
            spec.risk_law.kind = RiskLaw::Kind::fixed;
        } else if (kind == "uniform") {
            spec.risk_law.kind = RiskLaw::Kind::uniform;
            spec.risk_law.a = 0.0;
            spec.risk_law.b = 1.0;
        } else {
            throw ValidationError("risk.kind must be 'beta', 'fixed' or 'uniform'");
        }
        take(r, "a", spec.risk_law.a);
        take(r, "b", spec.risk_law.b);
    }
    validate(spec);
    return spec;
}

json to_json(const PopulationSpec& spec) {
    json params;
    if (spec.param_law.fixed) {
        const auto& f = *spec.param_law.fixed;
        params["fixed"] = {{"beta", f.beta}, {"sigma_xi", f.sigma_xi}, {"sigma_eta", f.sigma_eta}};
    } else {
        params["beta"] = law_to_json(spec.param_law.beta);
        params["sigma_xi"] = law_to_json(spec.param_law.sigma_xi);
        params["sigma_eta"] = law_to_json(spec.param_law.sigma_eta);
    }
    const char* kind = spec.risk_law.kind == RiskLaw::Kind::beta    ? "beta"
                       : spec.risk_law.kind == RiskLaw::Kind::fixed ? "fixed"
                                                                    : "uniform";
    json risk = {{"kind", kind}, {"a", spec.risk_law.a}};
    if (spec.risk_law.kind != RiskLaw::Kind::fixed) risk["b"] = spec.risk_law.b;
    return {{"n_physicians", spec.n_physicians},
            {"patients_per_physician", spec.patients_per_physician},
            {"seed", spec.seed},
            {"params", params},
            {"risk", risk}};
}

json read_json_file(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

std::string config_hash(const json& config) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_id(config.dump())));
    return buf;
}

void write_run_metadata(const std::filesystem::path& output, const std::string& command, std::uint64_t seed,
                        const json& config) {
    json meta = {{"command", command}, {"seed", seed}, {"config", config}, {"config_hash", config_hash(config)}};
    auto meta_path = output;
    meta_path += ".meta.json";
    write_json_file(meta_path, meta);
}

namespace {

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json counts_json(const DecisionCounts& c) {
    return {{"total", c.total}, {"treated_bacterial", c.treated_bacterial}, {"overprescribed", c.overprescribed}};
}

}  // namespace

json to_json(const PolicyOutcome& o) {
    json j = {{"policy", to_string(o.policy)},
              {"decision_mode", to_string(o.mode)},
              {"baseline_counts", counts_json(o.baseline)},
              {"counterfactual_counts", counts_json(o.counterfactual)},
              {"delta_total_pct", nan_to_null(o.delta_total_pct)},
              {"delta_treated_bacterial_pct", nan_to_null(o.delta_treated_bacterial_pct)},
              {"delta_overprescribe_pct", nan_to_null(o.delta_overprescribe_pct)},
              {"payoff_gain_mean_pct", nan_to_null(o.payoff_gain_mean_pct)},
              {"payoff_gain_excluded", o.payoff_gain_excluded}};
    j["kappa"] = o.kappa ? json(*o.kappa) : json(nullptr);
    if (o.policy == PolicyId::manipulate_payoff) j["target_met"] = o.target_met;
    if (o.policy == PolicyId::redistribute) j["degenerate_ranking"] = o.degenerate_ranking;
    return j;
}

json to_json(const PoissonBinomialTest& t) {
    return {{"n", t.n},
            {"observed_sum", t.observed_sum},
            {"expected_sum", std::accumulate(t.p_values.begin(), t.p_values.end(), 0.0)},
            {"p_two_sided", t.p_two_sided},
            {"reject_at_5pct", t.reject_at_5pct}};
}

json to_json(const DeltaAuc& d) {
    return {{"auc_risk", d.auc_risk},
            {"auc_combined", d.auc_combined},
            {"delta_auc", d.delta},
            {"folds", d.folds},
            {"fold_gamma", d.fold_gamma},
            {"combiner", d.combiner}};
}

}  // namespace dxchoice
