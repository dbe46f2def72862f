#include "dxchoice/model.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dxchoice/errors.hpp"

namespace dxchoice {

void validate(const PhysicianParams& params) {
    if (!(params.beta > 0.0 && params.beta < 1.0))
        throw ValidationError("beta must lie in (0, 1), got " + std::to_string(params.beta));
    if (!(params.sigma_xi >= 0.0) || !std::isfinite(params.sigma_xi))
        throw ValidationError("sigma_xi must be finite and >= 0, got " + std::to_string(params.sigma_xi));
    if (!(params.sigma_eta > 0.0) || !std::isfinite(params.sigma_eta))
        throw ValidationError("sigma_eta must be finite and > 0, got " + std::to_string(params.sigma_eta));
}

double clamp_risk(double risk) { return std::clamp(risk, kRiskFloor, kRiskCeiling); }

double risk_to_type(double risk) {
    if (!(risk > 0.0 && risk < 1.0))
        throw std::domain_error("risk must lie strictly inside (0, 1), got " + std::to_string(risk));
    return normal_quantile(risk);
}

PatientCase make_case(std::string physician_id, std::string patient_id, double risk, int y, int d,
                      bool* was_clamped) {
    if (!std::isfinite(risk)) throw ValidationError("risk is not a finite number");
    if (y != 0 && y != 1) throw ValidationError("y must be 0 or 1");
    if (d != 0 && d != 1) throw ValidationError("d must be 0 or 1");
    const double clamped = clamp_risk(risk);
    if (was_clamped) *was_clamped = clamped != risk;
    PatientCase c;
    c.physician_id = std::move(physician_id);
    c.patient_id = std::move(patient_id);
    c.risk = clamped;
    c.tau = risk_to_type(clamped);
    c.y = y;
    c.d = d;
    return c;
}

std::map<std::string, std::vector<PatientCase>> group_by_physician(std::span<const PatientCase> cases) {
    std::map<std::string, std::vector<PatientCase>> groups;
    for (const auto& c : cases) groups[c.physician_id].push_back(c);
    return groups;
}

void require_estimates(std::span<const PatientCase> cases, const EstimateMap& estimates) {
    for (const auto& c : cases)
        if (!estimates.contains(c.physician_id))
            throw ValidationError("no estimate for physician " + c.physician_id);
}

namespace {

struct GaussLegendreRule {
    std::vector<double> nodes;    // on [-1, 1]
    std::vector<double> weights;
};

// Newton iteration on the Legendre recurrence; nodes are accurate to rounding.
GaussLegendreRule make_gauss_legendre(int n) {
    GaussLegendreRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 1.0;
            double p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
            }
            dp = n * (z * p1 - p2) / (z * z - 1.0);
            const double step = p1 / dp;
            z -= step;
            if (std::abs(step) < 1e-15) break;
        }
        rule.nodes[i] = -z;
        rule.nodes[n - 1 - i] = z;
        rule.weights[i] = rule.weights[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return rule;
}

const GaussLegendreRule& gauss_legendre(int n) {
    thread_local std::map<int, GaussLegendreRule> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_gauss_legendre(n)).first;
    return it->second;
}

// Integrand pieces for one (tau, y, params) triple.
struct TruncatedIndexIntegral {
    double tau;
    bool sick;
    double mass;      // Pr(y | tau): width of the probability-scale interval
    double boundary;  // nu at which the inner probability is 1/2
    double width;     // scale of the inner probit in nu units

    // Probability-scale coordinate -> nu on the truncated side.
    double nu_at(double q) const { return sick ? tau - normal_quantile(q) : tau + normal_quantile(q); }
    // nu -> probability-scale coordinate.
    double q_at(double nu) const { return sick ? normal_cdf(tau - nu) : normal_cdf(nu - tau); }
    double inner(double nu) const { return normal_cdf((nu - boundary) / width); }

    double integrate(const std::vector<double>& breaks, int order) const {
        const auto& rule = gauss_legendre(order);
        double total = 0.0;
        for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
            const double lo = breaks[k];
            const double hi = breaks[k + 1];
            if (!(hi > lo)) continue;
            const double half = 0.5 * (hi - lo);
            const double mid = 0.5 * (hi + lo);
            double panel = 0.0;
            for (int i = 0; i < order; ++i) panel += rule.weights[i] * inner(nu_at(mid + half * rule.nodes[i]));
            total += half * panel;
        }
        return total / mass;
    }
};

}  // namespace

QuadratureResult choice_probability_exact(double tau, int y, const PhysicianParams& params, int quadrature_order) {
    if (quadrature_order < 16) throw ValidationError("quadrature_order must be >= 16");
    if (y != 0 && y != 1) throw ValidationError("y must be 0 or 1");
    if (!(params.sigma_xi >= 0.0) || !(params.sigma_eta > 0.0) || !(params.beta >= 0.0 && params.beta <= 1.0))
        throw ValidationError("invalid physician parameters for choice_probability_exact");
    if (!std::isfinite(tau)) throw ValidationError("tau must be finite");

    QuadratureResult result;
    result.order = 2 * quadrature_order;
    if (params.beta >= 1.0) return result;
    if (params.beta <= 0.0) {
        result.probability = 1.0;
        return result;
    }

    const double type_var = params.sigma_xi * params.sigma_xi + 1.0;
    const double clin_var = params.sigma_eta * params.sigma_eta;
    const double w_xi = clin_var / (type_var + clin_var);
    const double w_eta = type_var / (type_var + clin_var);
    const double spread = std::sqrt(w_xi * w_xi * params.sigma_xi * params.sigma_xi + w_eta * w_eta * clin_var);

    TruncatedIndexIntegral f;
    f.tau = tau;
    f.sick = y == 1;
    f.mass = f.sick ? normal_cdf(tau) : normal_cdf(-tau);
    f.boundary = (cutoff(params) - w_xi * tau) / w_eta;
    f.width = spread / w_eta;

    std::vector<double> breaks{0.0, f.mass};
    for (double k : {-8.0, -4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
        const double nu = f.boundary + k * f.width;
        if (f.sick ? nu > 0.0 : nu < 0.0) breaks.push_back(f.q_at(nu));
    }
    for (double scale = 1e-1; scale > 1e-7; scale *= 1e-1) breaks.push_back(f.mass * scale);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::remove_if(breaks.begin(), breaks.end(), [&](double q) { return q < 0.0 || q > f.mass; }),
                 breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    const double coarse = f.integrate(breaks, quadrature_order);
    const double fine = f.integrate(breaks, 2 * quadrature_order);
    result.probability = std::clamp(fine, 0.0, 1.0);
    result.change = std::abs(fine - coarse);
    result.converged = result.change <= 1e-6;
    return result;
}

double choice_probability_unconditional(double tau, const PhysicianParams& params) {
    if (params.beta >= 1.0) return 0.0;
    if (params.beta <= 0.0) return 1.0;
    const double type_var = params.sigma_xi * params.sigma_xi + 1.0;
    const double clin_var = params.sigma_eta * params.sigma_eta;
    const double w_xi = clin_var / (type_var + clin_var);
    const double w_eta = type_var / (type_var + clin_var);
    // mu = tau + w_xi sigma_xi Z1 + w_eta (Z2 + sigma_eta Z3), since w_xi + w_eta = 1.
    const double sd = std::sqrt(w_xi * w_xi * params.sigma_xi * params.sigma_xi + w_eta * w_eta * (1.0 + clin_var));
    return normal_cdf((tau - cutoff(params)) / sd);
}

}  // namespace dxchoice
