#include "dxchoice/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dxchoice/errors.hpp"
#include "dxchoice/normal.hpp"
#include "dxchoice/sampling.hpp"

namespace dxchoice {

double sample_truncated_normal(const TruncatedNormalLaw& law, double u) {
    if (!(law.sd > 0.0)) return std::clamp(law.mean, law.lower, law.upper);
    const double lo = normal_cdf((law.lower - law.mean) / law.sd);
    const double hi = normal_cdf((law.upper - law.mean) / law.sd);
    const double x = law.mean + law.sd * normal_quantile(lo + u * (hi - lo));
    return std::clamp(x, law.lower, law.upper);
}

namespace {

// Marsaglia-Tsang gamma(shape, 1) on a counter stream starting at `counter`.
double sample_gamma(double shape, std::uint64_t stream, std::uint64_t& counter) {
    if (shape < 1.0) {
        const double g = sample_gamma(shape + 1.0, stream, counter);
        return g * std::pow(counter_uniform(stream, counter++), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
        const double x = counter_normal(stream, counter++);
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = counter_uniform(stream, counter++);
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

double sample_risk(const RiskLaw& law, std::uint64_t stream) {
    std::uint64_t counter = 1000;
    switch (law.kind) {
        case RiskLaw::Kind::fixed:
            return law.a;
        case RiskLaw::Kind::uniform:
            return law.a + (law.b - law.a) * counter_uniform(stream, counter);
        case RiskLaw::Kind::beta:
        default: {
            const double ga = sample_gamma(law.a, stream, counter);
            const double gb = sample_gamma(law.b, stream, counter);
            return ga / (ga + gb);
        }
    }
}

void validate_law(const TruncatedNormalLaw& law, const char* name) {
    if (!(law.lower <= law.upper) || !(law.sd >= 0.0) || !std::isfinite(law.mean))
        throw ValidationError(std::string("invalid parameter law for ") + name);
}

std::string physician_label(std::size_t j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "P%04zu", j + 1);
    return buf;
}

}  // namespace

void validate(const PopulationSpec& spec) {
    if (spec.n_physicians == 0) throw ValidationError("n_physicians must be >= 1");
    if (spec.patients_per_physician == 0) throw ValidationError("patients_per_physician must be >= 1");
    if (spec.param_law.fixed) {
        validate(*spec.param_law.fixed);
    } else {
        validate_law(spec.param_law.beta, "beta");
        validate_law(spec.param_law.sigma_xi, "sigma_xi");
        validate_law(spec.param_law.sigma_eta, "sigma_eta");
        if (!(spec.param_law.beta.lower > 0.0 && spec.param_law.beta.upper < 1.0))
            throw ValidationError("beta law support must lie inside (0, 1)");
        if (spec.param_law.sigma_xi.lower < 0.0) throw ValidationError("sigma_xi law support must be >= 0");
        if (!(spec.param_law.sigma_eta.lower > 0.0)) throw ValidationError("sigma_eta law support must be > 0");
    }
    const auto& r = spec.risk_law;
    switch (r.kind) {
        case RiskLaw::Kind::beta:
            if (!(r.a > 0.0 && r.b > 0.0)) throw ValidationError("beta risk law needs a, b > 0");
            break;
        case RiskLaw::Kind::fixed:
            if (!(r.a > 0.0 && r.a < 1.0)) throw ValidationError("fixed risk must lie in (0, 1)");
            break;
        case RiskLaw::Kind::uniform:
            if (!(r.a >= 0.0 && r.b <= 1.0 && r.a < r.b)) throw ValidationError("uniform risk law needs 0 <= a < b <= 1");
            break;
    }
}

Population simulate_population(const PopulationSpec& spec) {
    validate(spec);
    Population pop;
    pop.cases.reserve(spec.n_physicians * spec.patients_per_physician);
    for (std::size_t j = 0; j < spec.n_physicians; ++j) {
        const std::string pid = physician_label(j);
        const std::uint64_t phys_key = combine_keys(spec.seed, 0x9a7a11ULL, j);
        PhysicianParams theta;
        if (spec.param_law.fixed) {
            theta = *spec.param_law.fixed;
        } else {
            theta.beta = sample_truncated_normal(spec.param_law.beta, counter_uniform(phys_key, 0));
            theta.sigma_xi = sample_truncated_normal(spec.param_law.sigma_xi, counter_uniform(phys_key, 1));
            theta.sigma_eta = sample_truncated_normal(spec.param_law.sigma_eta, counter_uniform(phys_key, 2));
        }
        pop.truth.push_back({pid, theta});

        for (std::size_t i = 0; i < spec.patients_per_physician; ++i) {
            const std::uint64_t key = combine_keys(spec.seed, j, i);
            char label[48];
            std::snprintf(label, sizeof label, "%s-%05zu", pid.c_str(), i + 1);
            const double risk = clamp_risk(sample_risk(spec.risk_law, key));
            const double tau = risk_to_type(risk);
            const double nu = tau + counter_normal(key, 1);
            const double xi = tau + theta.sigma_xi * counter_normal(key, 2);
            const double eta = nu + theta.sigma_eta * counter_normal(key, 3);
            pop.cases.push_back(make_case(pid, label, risk, nu > 0.0 ? 1 : 0, decide(xi, eta, theta)));
        }
    }
    return pop;
}

RocCurve simulate_roc(const PhysicianParams& params, std::span<const PatientCase> cases,
                      std::span<const double> beta_grid, int quadrature_order) {
    std::size_t n1 = 0;
    for (const auto& c : cases) n1 += static_cast<std::size_t>(c.y);
    const std::size_t n0 = cases.size() - n1;
    if (n1 == 0 || n0 == 0) throw ValidationError("ROC needs both y = 0 and y = 1 cases");

    std::vector<double> grid(beta_grid.begin(), beta_grid.end());
    grid.push_back(0.0);
    grid.push_back(1.0);
    for (double b : grid)
        if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("beta grid values must lie in [0, 1]");
    std::sort(grid.begin(), grid.end(), std::greater<>());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    RocCurve curve;
    for (double b : grid) {
        PhysicianParams p = params;
        p.beta = b;
        double tp = 0.0;
        double fp = 0.0;
        for (const auto& c : cases) {
            const double prob = choice_probability_exact(c.tau, c.y, p, quadrature_order).probability;
            (c.y == 1 ? tp : fp) += prob;
        }
        RocPoint pt{fp / static_cast<double>(n0), tp / static_cast<double>(n1), b};
        if (!curve.points.empty()) {
            pt.fpr = std::max(pt.fpr, curve.points.back().fpr);
            pt.tpr = std::max(pt.tpr, curve.points.back().tpr);
        }
        curve.points.push_back(pt);
    }
    return curve;
}

double roc_tpr_at(const RocCurve& curve, double fpr) {
    const auto& pts = curve.points;
    if (pts.empty()) return 0.0;
    if (fpr <= pts.front().fpr) return pts.front().tpr;
    for (std::size_t k = 1; k < pts.size(); ++k) {
        if (fpr <= pts[k].fpr) {
            const double span = pts[k].fpr - pts[k - 1].fpr;
            if (span <= 0.0) return pts[k].tpr;
            const double w = (fpr - pts[k - 1].fpr) / span;
            return pts[k - 1].tpr + w * (pts[k].tpr - pts[k - 1].tpr);
        }
    }
    return pts.back().tpr;
}

std::vector<SensitivityPoint> sensitivity_sweep(const PhysicianParams& base, std::span<const PatientCase> cases,
                                                double step, const SensitivityConfig& cfg) {
    if (!(step >= 0.0)) throw ValidationError("sensitivity step must be >= 0");
    if (cases.empty()) throw ValidationError("sensitivity sweep needs cases");
    std::vector<double> grid = cfg.sigma_xi_grid;
    if (grid.empty())
        for (int s = 0; s <= 30; ++s) grid.push_back(s);

    const SimulatedLikelihood sim(cases, cfg.seed, cfg.smoothing);
    std::vector<SensitivityPoint> out;
    for (double s : grid) {
        if (!(s >= 0.0)) throw ValidationError("sigma_xi grid values must be >= 0");
        PhysicianParams lo = base;
        lo.sigma_xi = s;
        PhysicianParams hi = base;
        hi.sigma_xi = s + step;
        const auto p_lo = sim.choice_probabilities(lo);
        const auto p_hi = step == 0.0 ? p_lo : sim.choice_probabilities(hi);
        double total = 0.0;
        for (std::size_t i = 0; i < p_lo.size(); ++i) total += std::abs(p_hi[i] - p_lo[i]);
        out.push_back({s, 100.0 * total / static_cast<double>(p_lo.size())});
    }
    return out;
}

}  // namespace dxchoice
