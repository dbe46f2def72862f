#include "dxchoice/counterfactuals.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "dxchoice/errors.hpp"
#include "dxchoice/sampling.hpp"

namespace dxchoice {

std::string to_string(PolicyId policy) {
    switch (policy) {
        case PolicyId::provide_type: return "provide_type";
        case PolicyId::manipulate_payoff: return "manipulate_payoff";
        case PolicyId::redistribute: return "redistribute";
    }
    return "unknown";
}

std::string to_string(DecisionMode mode) {
    return mode == DecisionMode::expected ? "expected" : "realized";
}

DecisionCounts count_decisions(std::span<const PatientCase> cases, std::span<const double> decisions) {
    if (cases.size() != decisions.size()) throw ValidationError("decision vector does not match the cases");
    DecisionCounts out;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        out.total += decisions[i];
        (cases[i].y == 1 ? out.treated_bacterial : out.overprescribed) += decisions[i];
    }
    return out;
}

std::vector<double> observed_decisions(std::span<const PatientCase> cases) {
    std::vector<double> d(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) d[i] = cases[i].d;
    return d;
}

PayoffGain payoff_gain(std::span<const PatientCase> cases, std::span<const double> decisions,
                       const EstimateMap& estimates) {
    if (cases.size() != decisions.size()) throw ValidationError("decision vector does not match the cases");
    require_estimates(cases, estimates);
    struct Sums {
        double cf{0.0};
        double base{0.0};
        double sick{0.0};
    };
    std::map<std::string, Sums> sums;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        const double beta = estimates.at(c.physician_id).beta;
        Sums& s = sums[c.physician_id];
        s.cf += -c.y * (1.0 - decisions[i]) - beta * decisions[i];
        s.base += payoff(c.d, c.y, beta);
        s.sick += c.y;
    }
    PayoffGain out;
    double total = 0.0;
    for (const auto& [id, s] : sums) {
        const double first_best = -estimates.at(id).beta * s.sick;
        const double denom = first_best - s.base;
        if (!(denom > 1e-12 * (1.0 + std::abs(s.base)))) {
            ++out.n_excluded;
            continue;
        }
        const double w = (s.cf - s.base) / denom;
        out.per_physician.emplace_back(id, w);
        total += w;
        ++out.n_included;
    }
    out.mean_pct = out.n_included ? 100.0 * total / static_cast<double>(out.n_included)
                                  : std::numeric_limits<double>::quiet_NaN();
    return out;
}

namespace {

double pct_change(double base, double cf) {
    if (base == 0.0) return cf == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    return 100.0 * (cf - base) / base;
}

void fill_summary(PolicyOutcome& out, std::span<const PatientCase> cases, const EstimateMap* estimates) {
    out.baseline = count_decisions(cases, observed_decisions(cases));
    out.counterfactual = count_decisions(cases, out.decisions);
    out.delta_total_pct = pct_change(out.baseline.total, out.counterfactual.total);
    out.delta_treated_bacterial_pct = pct_change(out.baseline.treated_bacterial, out.counterfactual.treated_bacterial);
    out.delta_overprescribe_pct = pct_change(out.baseline.overprescribed, out.counterfactual.overprescribed);
    if (estimates) {
        const auto gain = payoff_gain(cases, out.decisions, *estimates);
        out.payoff_gain_mean_pct = gain.mean_pct;
        out.payoff_gain_excluded = gain.n_excluded;
    } else {
        out.payoff_gain_mean_pct = std::numeric_limits<double>::quiet_NaN();
    }
}

using ParamTransform = std::function<PhysicianParams(const PhysicianParams&)>;

// Status-quo choice probabilities at Theta-hat and the per-case uniforms used
// in realized mode; computed once and reused across kappa evaluations.
struct PolicyBase {
    std::vector<double> p_status_quo;
    std::vector<double> uniforms;
};

PolicyBase make_base(std::span<const PatientCase> cases, const EstimateMap& estimates,
                     const CounterfactualConfig& cfg) {
    require_estimates(cases, estimates);
    PolicyBase base;
    base.p_status_quo.resize(cases.size());
    base.uniforms.resize(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        if (cfg.mode == DecisionMode::expected) {
            base.p_status_quo[i] =
                choice_probability_exact(c.tau, c.y, estimates.at(c.physician_id), cfg.quadrature_order).probability;
        } else {
            base.uniforms[i] =
                counter_uniform(combine_keys(cfg.seed, hash_id(c.physician_id), hash_id(c.patient_id)), 0);
        }
    }
    return base;
}

std::vector<double> policy_decisions(std::span<const PatientCase> cases, const EstimateMap& estimates,
                                     const CounterfactualConfig& cfg, const PolicyBase& base,
                                     const ParamTransform& transform) {
    std::vector<double> out(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        const PhysicianParams theta = transform(estimates.at(c.physician_id));
        const double p = choice_probability_exact(c.tau, c.y, theta, cfg.quadrature_order).probability;
        if (cfg.mode == DecisionMode::expected)
            out[i] = c.d + p - base.p_status_quo[i];
        else
            out[i] = base.uniforms[i] < p ? 1.0 : 0.0;
    }
    return out;
}

ParamTransform kappa_shift(double kappa) {
    return [kappa](const PhysicianParams& p) {
        PhysicianParams q = p;
        q.beta = std::min(p.beta + kappa, 1.0);
        return q;
    };
}

}  // namespace

PolicyOutcome cf_provide_type(std::span<const PatientCase> cases, const EstimateMap& estimates,
                              const CounterfactualConfig& cfg) {
    const PolicyBase base = make_base(cases, estimates, cfg);
    PolicyOutcome out;
    out.policy = PolicyId::provide_type;
    out.mode = cfg.mode;
    out.decisions = policy_decisions(cases, estimates, cfg, base, [](const PhysicianParams& p) {
        PhysicianParams q = p;
        q.sigma_xi = 0.0;
        return q;
    });
    fill_summary(out, cases, &estimates);
    return out;
}

PolicyOutcome cf_manipulate_payoff_at(std::span<const PatientCase> cases, const EstimateMap& estimates,
                                      double kappa, const CounterfactualConfig& cfg) {
    if (!(kappa >= 0.0 && kappa <= 1.0)) throw ValidationError("kappa must lie in [0, 1]");
    const PolicyBase base = make_base(cases, estimates, cfg);
    PolicyOutcome out;
    out.policy = PolicyId::manipulate_payoff;
    out.mode = cfg.mode;
    out.kappa = kappa;
    out.decisions = policy_decisions(cases, estimates, cfg, base, kappa_shift(kappa));
    fill_summary(out, cases, &estimates);
    return out;
}

PolicyOutcome cf_manipulate_payoff(std::span<const PatientCase> cases, const EstimateMap& estimates,
                                   double target_delta_total_pct, const CounterfactualConfig& cfg) {
    if (!std::isfinite(target_delta_total_pct)) throw ValidationError("target must be finite");
    const PolicyBase base = make_base(cases, estimates, cfg);
    const double baseline_total = count_decisions(cases, observed_decisions(cases)).total;
    if (baseline_total <= 0.0) throw ValidationError("no observed prescriptions to reduce");

    PolicyOutcome out;
    out.policy = PolicyId::manipulate_payoff;
    out.mode = cfg.mode;
    auto evaluate = [&](double kappa) {
        out.decisions = policy_decisions(cases, estimates, cfg, base, kappa_shift(kappa));
        return pct_change(baseline_total, count_decisions(cases, out.decisions).total);
    };

    double lo = 0.0;
    double hi = 1.0;
    if (target_delta_total_pct == 0.0) {
        hi = 0.0;
    } else {
        const double at_zero = evaluate(0.0);
        const double at_one = evaluate(1.0);
        if (target_delta_total_pct > at_zero + cfg.kappa_tolerance_pp ||
            target_delta_total_pct < at_one - cfg.kappa_tolerance_pp) {
            std::ostringstream msg;
            msg << "target " << target_delta_total_pct << "% is outside the reachable range [" << at_one
                << "%, " << at_zero << "%] for kappa in [0, 1]";
            throw ValidationError(msg.str());
        }
        for (int it = 0; it < cfg.kappa_iterations; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (evaluate(mid) > target_delta_total_pct)
                lo = mid;
            else
                hi = mid;
        }
    }
    // Report the bracket end closer to the target.
    const double kappa = std::abs(evaluate(lo) - target_delta_total_pct) <= std::abs(evaluate(hi) - target_delta_total_pct)
                             ? lo
                             : hi;
    const double achieved = evaluate(kappa);
    out.kappa = kappa;
    out.target_met = std::abs(achieved - target_delta_total_pct) <= cfg.kappa_tolerance_pp;
    fill_summary(out, cases, &estimates);
    return out;
}

namespace {

// Redistributes within one block of case indices; returns true if the
// stopping point falls inside a run of tied risks.
bool redistribute_block(std::span<const PatientCase> cases, std::vector<std::size_t> idx,
                        std::vector<double>& decisions) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = cases[a];
        const auto& z = cases[b];
        if (x.risk != z.risk) return x.risk > z.risk;
        if (x.physician_id != z.physician_id) return x.physician_id < z.physician_id;
        return x.patient_id < z.patient_id;
    });
    std::size_t target = 0;
    std::size_t sick = 0;
    for (std::size_t i : idx) {
        target += static_cast<std::size_t>(cases[i].d * cases[i].y);
        sick += static_cast<std::size_t>(cases[i].y);
    }
    if (sick < target) throw ValidationError("fewer bacterial cases than observed treated bacterial cases");

    std::size_t treated = 0;
    std::size_t k = 0;
    while (k < idx.size() && treated < target) {
        decisions[idx[k]] = 1.0;
        treated += static_cast<std::size_t>(cases[idx[k]].y);
        ++k;
    }
    bool degenerate = k > 0 && k < idx.size() && cases[idx[k]].risk == cases[idx[k - 1]].risk;
    if (!idx.empty() && cases[idx.front()].risk == cases[idx.back()].risk) degenerate = true;
    return degenerate;
}

}  // namespace

PolicyOutcome cf_redistribute(std::span<const PatientCase> cases, const CounterfactualConfig& cfg,
                              const EstimateMap* estimates) {
    PolicyOutcome out;
    out.policy = PolicyId::redistribute;
    out.mode = cfg.mode;
    out.decisions.assign(cases.size(), 0.0);
    if (cfg.redistribute_per_physician) {
        std::map<std::string, std::vector<std::size_t>> blocks;
        for (std::size_t i = 0; i < cases.size(); ++i) blocks[cases[i].physician_id].push_back(i);
        for (auto& [id, idx] : blocks)
            out.degenerate_ranking = redistribute_block(cases, std::move(idx), out.decisions) || out.degenerate_ranking;
    } else {
        std::vector<std::size_t> idx(cases.size());
        std::iota(idx.begin(), idx.end(), 0);
        out.degenerate_ranking = redistribute_block(cases, std::move(idx), out.decisions);
    }
    fill_summary(out, cases, estimates);
    return out;
}

WelfareCurve welfare_curve(std::span<const PatientCase> cases, std::span<const std::vector<double>> decisions,
                           double grid_step) {
    if (!(grid_step > 0.0 && grid_step <= 0.5)) throw ValidationError("welfare grid step must lie in (0, 0.5]");
    WelfareCurve curve;
    const auto n_steps = static_cast<std::size_t>(std::floor(1.0 / grid_step + 1e-9));
    for (std::size_t k = 0; k <= n_steps; ++k) curve.grid.push_back(std::min(1.0, grid_step * static_cast<double>(k)));
    if (curve.grid.back() < 1.0) curve.grid.push_back(1.0);

    // Pooled payoff is -U - beta^S D with U untreated bacterial cases and D prescriptions.
    double u0 = 0.0;
    double d0 = 0.0;
    double sick = 0.0;
    for (const auto& c : cases) {
        u0 += c.y * (1 - c.d);
        d0 += c.d;
        sick += c.y;
    }
    for (double b : curve.grid) {
        const double denom = u0 + b * (d0 - sick);
        curve.undefined.push_back(std::abs(denom) <= 1e-12 * (1.0 + sick));
    }
    for (const auto& dec : decisions) {
        if (dec.size() != cases.size()) throw ValidationError("decision vector does not match the cases");
        double u = 0.0;
        double d = 0.0;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            u += cases[i].y * (1.0 - dec[i]);
            d += dec[i];
        }
        std::vector<double> w;
        for (std::size_t g = 0; g < curve.grid.size(); ++g) {
            const double b = curve.grid[g];
            if (curve.undefined[g]) {
                w.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            w.push_back((-(u - u0) - b * (d - d0)) / (u0 + b * (d0 - sick)));
        }
        curve.w_values.push_back(std::move(w));
    }
    return curve;
}

std::optional<double> crossing_point(const WelfareCurve& curve, std::size_t a, std::size_t b) {
    if (a >= curve.w_values.size() || b >= curve.w_values.size()) throw ValidationError("policy index out of range");
    const auto& wa = curve.w_values[a];
    const auto& wb = curve.w_values[b];
    bool seen_below = false;
    double prev_gap = 0.0;
    double prev_x = 0.0;
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        const double gap = wa[g] - wb[g];
        if (std::isnan(gap)) continue;
        if (gap < 0.0) {
            seen_below = true;
        } else if (seen_below) {
            const double x = curve.grid[g];
            return prev_x + (x - prev_x) * (-prev_gap) / (gap - prev_gap);
        }
        prev_gap = gap;
        prev_x = curve.grid[g];
    }
    return std::nullopt;
}

}  // namespace dxchoice
