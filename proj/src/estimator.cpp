#include "dxchoice/estimator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "dxchoice/errors.hpp"
#include "dxchoice/normal.hpp"
#include "dxchoice/optimizer.hpp"

namespace dxchoice {

void validate(const SmoothingConfig& cfg) {
    if (!(cfg.lambda > 0.0) || !std::isfinite(cfg.lambda)) throw ValidationError("lambda must be > 0");
    if (cfg.r_count < 1) throw ValidationError("r_count must be >= 1");
}

namespace {

// Per-draw quantities shared by value and gradient.
struct DrawTerms {
    double log_s1;
    double log_s0;
    double weight;  // s1 * s0 / lambda
};

inline double log_logistic(double x) {
    // log(1 / (1 + exp(-x))) without overflow.
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

struct Kernel {
    double tau;
    double beta;
    double sigma_xi;
    double sigma_eta;
    double lambda;
    double type_var;
    double clin_var;
    double sqrt_q;
    double half_dq_xi;   // 0.5 dQ/dsigma_xi / Q
    double half_dq_eta;  // 0.5 dQ/dsigma_eta / Q

    Kernel(double tau_, const PhysicianParams& p, double lambda_)
        : tau(tau_), beta(p.beta), sigma_xi(p.sigma_xi), sigma_eta(p.sigma_eta), lambda(lambda_) {
        type_var = sigma_xi * sigma_xi + 1.0;
        clin_var = sigma_eta * sigma_eta;
        const double total = type_var + clin_var;
        const double q = total * type_var * clin_var;
        sqrt_q = std::sqrt(q);
        half_dq_xi = sigma_xi * clin_var * (type_var + total) / q;
        half_dq_eta = sigma_eta * type_var * (clin_var + total) / q;
    }

    // mu / sigma_post = (xi sigma_eta^2 + eta (sigma_xi^2 + 1)) / sqrt(D a b).
    double t_of(double nu, double z_xi, double z_eta) const {
        const double xi = tau + sigma_xi * z_xi;
        const double eta = nu + sigma_eta * z_eta;
        return (xi * clin_var + eta * type_var) / sqrt_q;
    }

    // d t / d sigma_xi and d t / d sigma_eta.
    void dt(double nu, double z_xi, double z_eta, double& d_xi, double& d_eta) const {
        const double xi = tau + sigma_xi * z_xi;
        const double eta = nu + sigma_eta * z_eta;
        const double n = xi * clin_var + eta * type_var;
        const double dn_xi = z_xi * clin_var + eta * 2.0 * sigma_xi;
        const double dn_eta = xi * 2.0 * sigma_eta + z_eta * type_var;
        d_xi = (dn_xi - n * half_dq_xi) / sqrt_q;
        d_eta = (dn_eta - n * half_dq_eta) / sqrt_q;
    }
};

struct CaseEvaluation {
    double p1{0.0};
    double p0{0.0};
    double loglik{0.0};
    Eigen::Vector3d gradient{Eigen::Vector3d::Zero()};
};

// One case: mean smoothed probabilities, log-likelihood contribution and its
// natural-scale gradient. Falls back to log-space accumulation when the
// chosen-side probability underflows.
CaseEvaluation evaluate_case(double tau, int d, const StandardizedDraws& z, const PhysicianParams& params,
                             double lambda, bool want_gradient) {
    const Kernel k(tau, params, lambda);
    const Eigen::Index r_count = z.nu.size();
    double sum1 = 0.0;
    double sum0 = 0.0;
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (Eigen::Index r = 0; r < r_count; ++r) {
        const double t = k.t_of(z.nu(r), z.z_xi(r), z.z_eta(r));
        const double x = (normal_cdf(t) - k.beta) / lambda;
        const double e = std::exp(-std::abs(x));
        const double inv = 1.0 / (1.0 + e);
        const double s1 = x >= 0.0 ? inv : e * inv;
        const double s0 = x >= 0.0 ? e * inv : inv;
        sum1 += s1;
        sum0 += s0;
        if (want_gradient) {
            const double w = s1 * s0 / lambda;
            if (w > 0.0) {
                double d_xi = 0.0;
                double d_eta = 0.0;
                k.dt(z.nu(r), z.z_xi(r), z.z_eta(r), d_xi, d_eta);
                const double dens = normal_pdf(t);
                acc(0) -= w;
                acc(1) += w * dens * d_xi;
                acc(2) += w * dens * d_eta;
            }
        }
    }
    const double inv_r = 1.0 / static_cast<double>(r_count);
    CaseEvaluation out;
    out.p1 = sum1 * inv_r;
    out.p0 = sum0 * inv_r;
    const double chosen = d == 1 ? out.p1 : out.p0;
    if (chosen > 1e-250) {
        out.loglik = std::log(chosen);
        if (want_gradient) out.gradient = (d == 1 ? 1.0 : -1.0) * (acc * inv_r) / chosen;
        return out;
    }

    // Log-space pass: log P = logsumexp(log s^r) - log R, and the score is a
    // softmax-weighted average of the per-draw derivatives.
    std::vector<DrawTerms> terms(static_cast<std::size_t>(r_count));
    double max_log = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < r_count; ++r) {
        const double t = k.t_of(z.nu(r), z.z_xi(r), z.z_eta(r));
        const double x = (normal_cdf(t) - k.beta) / lambda;
        auto& term = terms[static_cast<std::size_t>(r)];
        term.log_s1 = log_logistic(x);
        term.log_s0 = log_logistic(-x);
        max_log = std::max(max_log, d == 1 ? term.log_s1 : term.log_s0);
    }
    double denom = 0.0;
    Eigen::Vector3d num = Eigen::Vector3d::Zero();
    for (Eigen::Index r = 0; r < r_count; ++r) {
        const auto& term = terms[static_cast<std::size_t>(r)];
        const double own = d == 1 ? term.log_s1 : term.log_s0;
        const double other = d == 1 ? term.log_s0 : term.log_s1;
        const double scaled = std::exp(own - max_log);
        denom += scaled;
        if (want_gradient) {
            // d s_own / d x = +-s1 s0 = +-s_own * s_other.
            const double t = k.t_of(z.nu(r), z.z_xi(r), z.z_eta(r));
            double d_xi = 0.0;
            double d_eta = 0.0;
            k.dt(z.nu(r), z.z_xi(r), z.z_eta(r), d_xi, d_eta);
            const double w = scaled * std::exp(other) / lambda;
            const double dens = normal_pdf(t);
            num(0) -= w;
            num(1) += w * dens * d_xi;
            num(2) += w * dens * d_eta;
        }
    }
    out.loglik = max_log + std::log(denom * inv_r);
    if (want_gradient) out.gradient = (d == 1 ? 1.0 : -1.0) * num / denom;
    return out;
}

Eigen::Vector3d natural_to_unconstrained_gradient(const Eigen::Vector3d& g, const PhysicianParams& p) {
    return {g(0) * p.beta * (1.0 - p.beta), g(1) * p.sigma_xi, g(2) * p.sigma_eta};
}

}  // namespace

SmoothedProbability smoothed_choice_probability(const PatientCase& patient, const PhysicianParams& params,
                                                const DrawSet& draws, const SmoothingConfig& cfg) {
    validate(cfg);
    const StandardizedDraws z = standardize_draws(patient.tau, patient.y, draws);
    const Kernel k(patient.tau, params, cfg.lambda);
    SmoothedProbability out;
    out.s1.resize(z.nu.size());
    double sum0 = 0.0;
    for (Eigen::Index r = 0; r < z.nu.size(); ++r) {
        const double x = (normal_cdf(k.t_of(z.nu(r), z.z_xi(r), z.z_eta(r))) - params.beta) / cfg.lambda;
        const double e = std::exp(-std::abs(x));
        const double inv = 1.0 / (1.0 + e);
        out.s1(r) = x >= 0.0 ? inv : e * inv;
        sum0 += x >= 0.0 ? e * inv : inv;
    }
    out.p1 = out.s1.mean();
    out.p0 = sum0 / static_cast<double>(z.nu.size());
    return out;
}

DrawSet case_draw_set(std::uint64_t seed, const PatientCase& patient, Eigen::Index r_count) {
    return mlhs_draws(combine_keys(seed, hash_id(patient.physician_id)), r_count, 3, hash_id(patient.patient_id));
}

Eigen::Vector3d to_unconstrained(const PhysicianParams& params) {
    return {std::log(params.beta / (1.0 - params.beta)), std::log(params.sigma_xi), std::log(params.sigma_eta)};
}

PhysicianParams from_unconstrained(const Eigen::Vector3d& theta) {
    PhysicianParams p;
    p.beta = theta(0) >= 0.0 ? 1.0 / (1.0 + std::exp(-theta(0))) : std::exp(theta(0)) / (1.0 + std::exp(theta(0)));
    p.sigma_xi = std::exp(theta(1));
    p.sigma_eta = std::exp(theta(2));
    return p;
}

SimulatedLikelihood::SimulatedLikelihood(std::span<const PatientCase> cases, std::span<const DrawSet> draws,
                                         SmoothingConfig cfg)
    : cfg_(cfg) {
    validate(cfg_);
    if (cases.size() != draws.size()) throw ValidationError("one DrawSet per case is required");
    cases_.reserve(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i)
        cases_.push_back({cases[i].tau, cases[i].y, cases[i].d, standardize_draws(cases[i].tau, cases[i].y, draws[i])});
}

SimulatedLikelihood::SimulatedLikelihood(std::span<const PatientCase> cases, std::uint64_t seed, SmoothingConfig cfg)
    : cfg_(cfg) {
    validate(cfg_);
    cases_.reserve(cases.size());
    for (const auto& c : cases)
        cases_.push_back({c.tau, c.y, c.d, standardize_draws(c.tau, c.y, case_draw_set(seed, c, cfg_.r_count))});
}

LikelihoodValue SimulatedLikelihood::evaluate(const PhysicianParams& params, std::span<const double> weights) const {
    if (!weights.empty() && weights.size() != cases_.size()) throw ValidationError("weights size mismatch");
    LikelihoodValue out;
    for (std::size_t i = 0; i < cases_.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (w == 0.0) continue;
        const auto& c = cases_[i];
        const CaseEvaluation e = evaluate_case(c.tau, c.d, c.z, params, cfg_.lambda, true);
        out.value += w * e.loglik;
        out.gradient += w * e.gradient;
    }
    return out;
}

LikelihoodValue SimulatedLikelihood::evaluate_unconstrained(const Eigen::Vector3d& theta,
                                                            std::span<const double> weights) const {
    const PhysicianParams p = from_unconstrained(theta);
    LikelihoodValue out = evaluate(p, weights);
    out.gradient = natural_to_unconstrained_gradient(out.gradient, p);
    return out;
}

std::vector<double> SimulatedLikelihood::choice_probabilities(const PhysicianParams& params) const {
    std::vector<double> out;
    out.reserve(cases_.size());
    for (const auto& c : cases_) out.push_back(evaluate_case(c.tau, 1, c.z, params, cfg_.lambda, false).p1);
    return out;
}

LikelihoodValue log_likelihood(std::span<const PatientCase> cases, const PhysicianParams& params,
                               std::span<const DrawSet> draws, const SmoothingConfig& cfg) {
    return SimulatedLikelihood(cases, draws, cfg).evaluate(params);
}

EstimationResult fit_from_start(const SimulatedLikelihood& likelihood, const Eigen::Vector3d& start,
                                const OptimizerConfig& opt, std::span<const double> weights) {
    double n_eff = 0.0;
    if (weights.empty()) {
        n_eff = static_cast<double>(likelihood.size());
    } else {
        for (double w : weights) n_eff += w;
    }
    if (!(n_eff > 0.0)) throw ValidationError("cannot fit an empty sample");

    const Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const LikelihoodValue v = likelihood.evaluate_unconstrained(x, weights);
        g = -v.gradient / n_eff;
        return -v.value / n_eff;
    };
    BfgsOptions bfgs;
    bfgs.gradient_tolerance = opt.gradient_tolerance;
    bfgs.max_iterations = opt.max_iterations;
    const BfgsResult r = minimize_bfgs(objective, start, bfgs);

    EstimationResult out;
    out.params = from_unconstrained(r.x);
    out.loglik = -r.value * n_eff;
    out.gradient_norm = r.gradient.norm();
    out.converged = r.converged;
    out.iterations = r.iterations;
    out.n_obs = static_cast<std::size_t>(std::llround(n_eff));
    out.sigma_xi_uninformed = out.params.sigma_xi > opt.uninformed_sigma_xi;
    out.start_logliks.push_back(out.loglik);
    return out;
}

namespace {

void check_single_physician(std::span<const PatientCase> cases, const OptimizerConfig& opt) {
    if (cases.size() < std::max<std::size_t>(opt.min_observations, 1))
        throw ValidationError("too few observations: " + std::to_string(cases.size()) + " < " +
                              std::to_string(opt.min_observations));
    for (const auto& c : cases)
        if (c.physician_id != cases.front().physician_id)
            throw ValidationError("fit_physician expects cases from a single physician");
}

bool decisions_constant(std::span<const PatientCase> cases) {
    return std::all_of(cases.begin(), cases.end(), [&](const PatientCase& c) { return c.d == cases.front().d; });
}

double percentile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Interval percentile_interval(const std::vector<double>& values, double point) {
    Interval iv{percentile(values, 0.025), percentile(values, 0.975)};
    iv.lower = std::min(iv.lower, point);
    iv.upper = std::max(iv.upper, point);
    return iv;
}

}  // namespace

EstimationResult fit_physician(std::span<const PatientCase> cases, const SmoothingConfig& cfg,
                               const OptimizerConfig& opt, std::uint64_t seed) {
    check_single_physician(cases, opt);
    const SimulatedLikelihood likelihood(cases, seed, cfg);
    const std::uint64_t key = combine_keys(seed, hash_id(cases.front().physician_id), 0x5eedULL);

    const Eigen::Vector3d base(0.0, std::log(2.0), std::log(2.0));
    std::optional<EstimationResult> best;
    std::vector<double> logliks;
    for (int s = 0; s <= opt.restarts; ++s) {
        Eigen::Vector3d start = base;
        if (s > 0)
            for (int k = 0; k < 3; ++k)
                start(k) += opt.jitter * counter_normal(key, static_cast<std::uint64_t>(3 * s + k));
        EstimationResult r;
        try {
            r = fit_from_start(likelihood, start, opt);
        } catch (const NumericalError&) {
            continue;
        }
        logliks.push_back(r.loglik);
        const bool better = !best || (r.converged && !best->converged) ||
                            (r.converged == best->converged && r.loglik > best->loglik);
        if (better) best = std::move(r);
    }
    if (!best) throw NumericalError("no start produced a finite likelihood for physician " + cases.front().physician_id);
    best->physician_id = cases.front().physician_id;
    best->start_logliks = std::move(logliks);
    return *best;
}

BootstrapIntervals bootstrap(std::span<const PatientCase> cases, const SmoothingConfig& cfg,
                             const OptimizerConfig& opt, int n_reps, std::uint64_t seed,
                             const EstimationResult* point) {
    if (n_reps < 100) throw ValidationError("bootstrap needs n_reps >= 100");
    check_single_physician(cases, opt);
    EstimationResult own_point;
    if (!point) {
        own_point = fit_physician(cases, cfg, opt, seed);
        point = &own_point;
    }

    const SimulatedLikelihood likelihood(cases, seed, cfg);
    const Eigen::Vector3d start = to_unconstrained(point->params);
    const std::uint64_t key = combine_keys(seed, hash_id(cases.front().physician_id), 0xb007ULL);
    const std::size_t n = cases.size();

    std::vector<double> betas;
    std::vector<double> sxis;
    std::vector<double> setas;
    BootstrapIntervals out;
    out.n_reps = n_reps;
    std::vector<double> weights(n);
    for (int rep = 0; rep < n_reps; ++rep) {
        std::fill(weights.begin(), weights.end(), 0.0);
        const std::uint64_t rep_key = combine_keys(key, static_cast<std::uint64_t>(rep));
        for (std::size_t i = 0; i < n; ++i) {
            const auto pick = std::min(n - 1, static_cast<std::size_t>(counter_uniform(rep_key, i) * static_cast<double>(n)));
            weights[pick] += 1.0;
        }
        EstimationResult r;
        try {
            r = fit_from_start(likelihood, start, opt, weights);
        } catch (const NumericalError&) {
            ++out.n_failed;
            continue;
        }
        if (!r.converged) {
            ++out.n_failed;
            continue;
        }
        betas.push_back(r.params.beta);
        sxis.push_back(r.params.sigma_xi);
        setas.push_back(r.params.sigma_eta);
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (betas.size() < 2) {
        out.beta = out.sigma_xi = out.sigma_eta = Interval{nan, nan};
        out.uninformative = true;
        return out;
    }
    out.beta = percentile_interval(betas, point->params.beta);
    out.sigma_xi = percentile_interval(sxis, point->params.sigma_xi);
    out.sigma_eta = percentile_interval(setas, point->params.sigma_eta);
    out.uninformative = decisions_constant(cases) || out.n_failed * 2 > n_reps ||
                        out.beta.upper - out.beta.lower > 0.5;
    return out;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

std::vector<EstimationResult> fit_all(std::span<const PatientCase> cases, const SmoothingConfig& cfg,
                                      const OptimizerConfig& opt, std::uint64_t seed, const FitAllOptions& run,
                                      std::vector<std::string>* skipped) {
    std::vector<std::vector<PatientCase>> groups;
    for (auto& [id, group] : group_by_physician(cases)) {
        if (group.size() < opt.min_observations) {
            if (skipped) skipped->push_back(id);
            continue;
        }
        groups.push_back(std::move(group));
    }
    std::vector<EstimationResult> results(groups.size());
    parallel_for(groups.size(), run.threads, [&](std::size_t j) {
        results[j] = fit_physician(groups[j], cfg, opt, seed);
        if (run.bootstrap_reps > 0)
            results[j].bootstrap_ci = bootstrap(groups[j], cfg, opt, run.bootstrap_reps, seed, &results[j]);
    });
    return results;
}

}  // namespace dxchoice
