// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dxchoice/counterfactuals.hpp"
#include "dxchoice/diagnostics.hpp"
#include "dxchoice/estimator.hpp"
#include "dxchoice/io.hpp"
#include "dxchoice/optimizer.hpp"
#include "dxchoice/simulator.hpp"

using namespace dxchoice;

namespace {

constexpr double kGradientRelTol = 1e-5;
constexpr double kGradientSeconds = 60.0;
constexpr double kOracleTol = 0.02;
constexpr double kOracleSeconds = 300.0;
constexpr double kBetaMae = 0.05;
constexpr double kSigmaEtaRelErr = 0.20;
constexpr double kSigmaXiPassShare = 0.90;
constexpr double kChiSq1At95 = 3.841458820694124;
constexpr double kRecoverySeconds = 1800.0;
constexpr double kRejectLow = 0.03;
constexpr double kRejectHigh = 0.07;
constexpr double kBinomialTol = 1e-12;
constexpr double kCalibrationSe = 3.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<PatientCase> simulate_fixed(PhysicianParams theta, std::size_t physicians, std::size_t patients,
                                        std::uint64_t seed) {
    PopulationSpec spec;
    spec.n_physicians = physicians;
    spec.patients_per_physician = patients;
    spec.param_law.fixed = theta;
    spec.seed = seed;
    return simulate_population(spec).cases;
}

void gradient_gate() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    std::uniform_real_distribution<double> beta(0.1, 0.9);
    std::uniform_real_distribution<double> sxi(0.2, 10.0);
    std::uniform_real_distribution<double> seta(0.5, 5.0);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const PhysicianParams truth{beta(rng), sxi(rng), seta(rng)};
        const auto cases = simulate_fixed(truth, 1, 100, 500 + inst);
        const SimulatedLikelihood sim(cases, 900 + inst, SmoothingConfig{0.01, 500});
        const Eigen::Vector3d theta = to_unconstrained({beta(rng), sxi(rng), seta(rng)});
        const auto v = sim.evaluate_unconstrained(theta);
        Eigen::Vector3d fd;
        const double h = 1e-5;
        for (int k = 0; k < 3; ++k) {
            Eigen::Vector3d up = theta;
            Eigen::Vector3d dn = theta;
            up(k) += h;
            dn(k) -= h;
            fd(k) = (sim.evaluate_unconstrained(up).value - sim.evaluate_unconstrained(dn).value) / (2.0 * h);
        }
        worst = std::max(worst, (v.gradient - fd).norm() / std::max(1.0, fd.norm()));
    }
    const double secs = seconds_since(t0);
    report("gradient_gate", worst < kGradientRelTol && secs < kGradientSeconds,
           fmt("max relative error %.3e (tol %.0e) over 50 instances, %.1fs", worst, kGradientRelTol, secs));
}

void oracle_gate() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240602);
    std::uniform_real_distribution<double> beta(0.1, 0.9);
    std::uniform_real_distribution<double> sxi(0.0, 10.0);
    std::uniform_real_distribution<double> seta(0.5, 5.0);
    std::uniform_real_distribution<double> tau(-2.0, 2.0);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const PhysicianParams p{beta(rng), sxi(rng), seta(rng)};
        const double t = tau(rng);
        const int y = i % 2;
        const auto c = make_case("oracle", std::to_string(i), normal_cdf(t), y, 0);
        const double approx = smoothed_choice_probability(c, p, case_draw_set(11, c, 1000), SmoothingConfig{}).p1;
        worst = std::max(worst, std::abs(approx - choice_probability_exact(c.tau, y, p).probability));
    }
    const double secs = seconds_since(t0);
    report("oracle_gate", worst < kOracleTol && secs < kOracleSeconds,
           fmt("max |P_sim - P_exact| %.4f (tol %.2f) over 200 points, %.1fs", worst, kOracleTol, secs));
}

struct RecoveryRun {
    std::vector<PatientCase> cases;
    std::vector<PhysicianTruth> truth;
    std::vector<EstimationResult> estimates;
};

// Likelihood-ratio statistic for sigma_xi fixed at `value`, profiling beta and sigma_eta.
double profile_lr_sigma_xi(const SimulatedLikelihood& sim, const EstimationResult& fit, double value,
                           const OptimizerConfig& opt) {
    const double n = static_cast<double>(sim.size());
    const Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const double b = 1.0 / (1.0 + std::exp(-x(0)));
        const double se = std::exp(x(1));
        const auto v = sim.evaluate({b, value, se});
        g = Eigen::VectorXd(2);
        g << -v.gradient(0) * b * (1.0 - b) / n, -v.gradient(2) * se / n;
        return -v.value / n;
    };
    Eigen::VectorXd x0(2);
    x0 << std::log(fit.params.beta / (1.0 - fit.params.beta)), std::log(fit.params.sigma_eta);
    BfgsOptions bo;
    bo.gradient_tolerance = opt.gradient_tolerance;
    bo.max_iterations = opt.max_iterations;
    const auto r = minimize_bfgs(f, x0, bo);
    return std::max(0.0, 2.0 * (fit.loglik + r.value * n));
}

RecoveryRun parameter_recovery() {
    const auto t0 = Clock::now();
    PopulationSpec spec;
    spec.n_physicians = 50;
    spec.patients_per_physician = 2000;
    spec.seed = 20240603;
    spec.param_law.beta = {0.56, 0.10, 0.2, 0.9};
    spec.param_law.sigma_xi = {6.38, 3.59, 0.0, 20.0};
    spec.param_law.sigma_eta = {2.18, 0.70, 0.5, 5.0};
    auto pop = simulate_population(spec);

    const SmoothingConfig cfg;
    const OptimizerConfig opt;
    FitAllOptions run;
    run.threads = std::max(1u, std::thread::hardware_concurrency());
    RecoveryRun out;
    out.estimates = fit_all(pop.cases, cfg, opt, spec.seed, run);

    const auto groups = group_by_physician(pop.cases);
    std::vector<double> lr(out.estimates.size(), 0.0);
    parallel_for(out.estimates.size(), run.threads, [&](std::size_t j) {
        const auto& fit = out.estimates[j];
        const SimulatedLikelihood sim(groups.at(fit.physician_id), spec.seed, cfg);
        lr[j] = profile_lr_sigma_xi(sim, fit, pop.truth[j].params.sigma_xi, opt);
    });

    double beta_mae = 0.0;
    double seta_rel = 0.0;
    int sxi_pass = 0;
    int uninformed_pass = 0;
    int converged = 0;
    const double m = static_cast<double>(out.estimates.size());
    for (std::size_t j = 0; j < out.estimates.size(); ++j) {
        const auto& e = out.estimates[j];
        const auto& t = pop.truth[j].params;
        beta_mae += std::abs(e.params.beta - t.beta) / m;
        seta_rel += std::abs(e.params.sigma_eta - t.sigma_eta) / t.sigma_eta / m;
        converged += e.converged ? 1 : 0;
        const bool inside = lr[j] <= kChiSq1At95;
        const bool flagged = t.sigma_xi > 10.0 && e.sigma_xi_uninformed;
        sxi_pass += (inside || flagged) ? 1 : 0;
        uninformed_pass += (!inside && flagged) ? 1 : 0;
    }
    const double share = sxi_pass / m;
    const double secs = seconds_since(t0);
    report("parameter_recovery",
           beta_mae < kBetaMae && seta_rel < kSigmaEtaRelErr && share >= kSigmaXiPassShare && secs < kRecoverySeconds,
           fmt("beta MAE %.4f (tol %.2f), sigma_eta mean rel err %.3f (tol %.2f), sigma_xi in LR interval or "
               "flagged %d/50 (%d by flag, need %.0f%%), converged %d/50, %.0fs on %u thread(s)",
               beta_mae, kBetaMae, seta_rel, kSigmaEtaRelErr, sxi_pass, uninformed_pass, 100.0 * kSigmaXiPassShare,
               converged, secs, run.threads));
    out.cases = std::move(pop.cases);
    out.truth = std::move(pop.truth);
    return out;
}

void poisson_binomial_calibration() {
    std::mt19937_64 rng(20240604);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> pl(0.05, 0.95);
    int rejections = 0;
    const int reps = 2000;
    std::vector<double> p(200);
    for (int r = 0; r < reps; ++r) {
        std::size_t sum = 0;
        for (auto& pi : p) {
            pi = pl(rng);
            sum += u(rng) < pi ? 1 : 0;
        }
        rejections += poisson_binomial_test(p, sum).reject_at_5pct ? 1 : 0;
    }
    const double rate = static_cast<double>(rejections) / reps;

    double worst = 0.0;
    for (int n : {1, 10, 50, 200}) {
        for (double q : {0.01, 0.3, 0.5, 0.87}) {
            const std::vector<double> same(static_cast<std::size_t>(n), q);
            const auto pmf = poisson_binomial_pmf(same);
            for (int k = 0; k <= n; ++k) {
                const double logc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
                const double exact = std::exp(logc + k * std::log(q) + (n - k) * std::log1p(-q));
                worst = std::max(worst, std::abs(pmf[static_cast<std::size_t>(k)] - exact));
            }
        }
    }
    report("poisson_binomial", rate >= kRejectLow && rate <= kRejectHigh && worst < kBinomialTol,
           fmt("null rejection rate %.4f (band [%.2f, %.2f]) over %d replicates of n=200, max |pmf - binomial| %.2e",
               rate, kRejectLow, kRejectHigh, reps, worst));
}

void counterfactual_invariants() {
    const PhysicianParams mean_theta{0.56, 6.38, 2.18};
    PopulationSpec spec;
    spec.n_physicians = 20;
    spec.patients_per_physician = 500;
    spec.param_law.fixed = mean_theta;
    spec.seed = 20240605;
    const auto pop = simulate_population(spec);
    EstimateMap truth;
    for (const auto& t : pop.truth) truth[t.physician_id] = t.params;

    const auto p1 = cf_provide_type(pop.cases, truth);
    const auto p2 = cf_manipulate_payoff(pop.cases, truth, p1.delta_total_pct);
    const auto p3 = cf_redistribute(pop.cases, {}, &truth);
    const std::vector<std::vector<double>> decisions{p1.decisions, p2.decisions, p3.decisions};
    const auto curve = welfare_curve(pop.cases, decisions, 0.01);

    double min_w3 = INFINITY;
    bool defined = true;
    for (std::size_t g = 0; g < curve.grid.size(); ++g) {
        defined = defined && !curve.undefined[g];
        min_w3 = std::min(min_w3, curve.w_values[2][g]);
    }
    const auto cross = crossing_point(curve, 0, 2);
    const bool ok = p3.counterfactual.treated_bacterial == p3.baseline.treated_bacterial && defined &&
                    min_w3 >= 0.0 && p2.target_met &&
                    p2.delta_treated_bacterial_pct < p1.delta_treated_bacterial_pct && cross.has_value() &&
                    *cross < mean_theta.beta;
    report("counterfactual_invariants", ok,
           fmt("redistribute delta treated-bacterial %.1f cases, min W3 %.4f over %zu grid points; "
               "at delta total %.2f%% (kappa %.4f): treated-bacterial %.2f%% (payoff) vs %.2f%% (type); "
               "crossing of policy 1 over 3 at beta^S %.3f (mean beta %.2f)",
               p3.counterfactual.treated_bacterial - p3.baseline.treated_bacterial, min_w3, curve.grid.size(),
               p2.delta_total_pct, p2.kappa.value_or(NAN), p2.delta_treated_bacterial_pct,
               p1.delta_treated_bacterial_pct, cross.value_or(NAN), mean_theta.beta));
}

void model_fit_closed_loop(const RecoveryRun& run) {
    const auto rows = fit_moments(run.cases, to_estimate_map(run.estimates));
    std::vector<double> obs[3];
    std::vector<double> sim[3];
    for (const auto& r : rows) {
        obs[0].push_back(r.observed.prescribe_rate);
        obs[1].push_back(r.observed.overprescribe_rate);
        obs[2].push_back(r.observed.underprescribe_rate);
        sim[0].push_back(r.simulated.prescribe_rate);
        sim[1].push_back(r.simulated.overprescribe_rate);
        sim[2].push_back(r.simulated.underprescribe_rate);
    }
    int kept = 0;
    double pv[3];
    for (int k = 0; k < 3; ++k) {
        pv[k] = ks_two_sample(obs[k], sim[k]).p_value;
        kept += pv[k] > 0.05 ? 1 : 0;
    }
    report("model_fit_closed_loop", kept >= 2,
           fmt("KS p-values prescribe %.3f, overprescribe %.3f, underprescribe %.3f; %d/3 not rejected at 5%%",
               pv[0], pv[1], pv[2], kept));
}

double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    double pos = 0.0;
    double neg = 0.0;
    for (int v : y) (v ? pos : neg) += 1.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (y[k]) continue;
            wins += s[i] > s[k] ? 1.0 : (s[i] == s[k] ? 0.5 : 0.0);
        }
    }
    return wins / (pos * neg);
}

void auc_and_calibration() {
    std::mt19937_64 rng(20240606);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> size(10, 600);
    int equal = 0;
    for (int b = 0; b < 100; ++b) {
        const int n = size(rng);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        const bool coarse = b % 2 == 0;
        for (int i = 0; i < n; ++i) {
            s[i] = coarse ? std::floor(u(rng) * 8.0) / 8.0 : u(rng);
            y[i] = u(rng) < 0.3 + 0.4 * s[i] ? 1 : 0;
        }
        y[0] = 1;
        y[1] = 0;
        equal += auc(s, y) == pair_auc(s, y) ? 1 : 0;
    }

    const std::size_t n = 20000;
    const std::size_t bin = 1000;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = u(rng);
        y[i] = u(rng) < s[i] ? 1 : 0;
    }
    const auto bins = calibration_bins(s, y, bin);
    double worst_z = 0.0;
    for (const auto& c : bins) {
        const double se = std::sqrt(c.mean_score * (1.0 - c.mean_score) / static_cast<double>(c.count));
        worst_z = std::max(worst_z, std::abs(c.mean_label - c.mean_score) / se);
    }
    report("auc_and_calibration", equal == 100 && worst_z <= kCalibrationSe,
           fmt("AUC equals pair count on %d/100 batteries; calibration max |z| %.2f (limit %.0f) over %zu bins",
               equal, worst_z, kCalibrationSe, bins.size()));
}

}  // namespace

int main() {
    try {
        gradient_gate();
        oracle_gate();
        const auto recovery = parameter_recovery();
        poisson_binomial_calibration();
        counterfactual_invariants();
        model_fit_closed_loop(recovery);
        auc_and_calibration();
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%s: %d failure(s)\n", failures == 0 ? "ALL PASS" : "FAILED", failures);
    return failures == 0 ? 0 : 1;
}
