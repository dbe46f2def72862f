#pragma once

// Per-physician simulated maximum likelihood.
//
// Choice probabilities use the logit-smoothed accept-reject simulator: for
// draw r the posterior sickness probability p^r = Phi(mu^r / sigma) is
// compared with beta through
//     S1^r = 1 / (1 + exp((Phi(-mu^r / sigma) - 1 + beta) / lambda))
//          = logistic((p^r - beta) / lambda),
// and P1 is the mean of S1^r over the R draws. Draws are fixed per
// (seed, physician, patient), so the objective is smooth in the parameters.
//
// The optimizer works on (logit beta, log sigma_xi, log sigma_eta).

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dxchoice/model.hpp"
#include "dxchoice/sampling.hpp"

namespace dxchoice {

struct SmoothingConfig {
    double lambda{0.01};
    Eigen::Index r_count{1000};
};

void validate(const SmoothingConfig& cfg);

struct SmoothedProbability {
    double p1{0.0};
    double p0{0.0};         ///< 1 - p1, accumulated separately to keep precision
    Eigen::ArrayXd s1;      ///< per-draw smoothed indicators
};

SmoothedProbability smoothed_choice_probability(const PatientCase& patient, const PhysicianParams& params,
                                                const DrawSet& draws, const SmoothingConfig& cfg);

/// MLHS draw set used for one case: keyed by (seed, physician_id, patient_id).
DrawSet case_draw_set(std::uint64_t seed, const PatientCase& patient, Eigen::Index r_count);

/// (logit beta, log sigma_xi, log sigma_eta).
Eigen::Vector3d to_unconstrained(const PhysicianParams& params);
PhysicianParams from_unconstrained(const Eigen::Vector3d& theta);

struct LikelihoodValue {
    double value{0.0};
    Eigen::Vector3d gradient{Eigen::Vector3d::Zero()};
};

/// Simulated log-likelihood of one physician's decisions with the draws
/// standardized once. Evaluation is const and thread-safe.
class SimulatedLikelihood {
public:
    /// `draws[i]` belongs to `cases[i]`.
    SimulatedLikelihood(std::span<const PatientCase> cases, std::span<const DrawSet> draws, SmoothingConfig cfg);
    /// Generates keyed draws with case_draw_set.
    SimulatedLikelihood(std::span<const PatientCase> cases, std::uint64_t seed, SmoothingConfig cfg);

    /// Sum over cases of w_i [d log P1 + (1 - d) log(1 - P1)] and its gradient
    /// in (beta, sigma_xi, sigma_eta). Empty `weights` means all ones.
    LikelihoodValue evaluate(const PhysicianParams& params, std::span<const double> weights = {}) const;

    /// Same value; gradient in (logit beta, log sigma_xi, log sigma_eta).
    LikelihoodValue evaluate_unconstrained(const Eigen::Vector3d& theta, std::span<const double> weights = {}) const;

    /// Smoothed P1 for each case at `params`.
    std::vector<double> choice_probabilities(const PhysicianParams& params) const;

    std::size_t size() const { return cases_.size(); }
    const SmoothingConfig& config() const { return cfg_; }

private:
    struct CaseData {
        double tau;
        int y;
        int d;
        StandardizedDraws z;
    };
    std::vector<CaseData> cases_;
    SmoothingConfig cfg_;
};

/// Convenience wrapper around SimulatedLikelihood::evaluate.
LikelihoodValue log_likelihood(std::span<const PatientCase> cases, const PhysicianParams& params,
                               std::span<const DrawSet> draws, const SmoothingConfig& cfg);

struct OptimizerConfig {
    double gradient_tolerance{1e-6};  ///< on the mean negative log-likelihood
    int max_iterations{500};
    int restarts{4};                  ///< jittered starts in addition to the default start
    double jitter{0.5};               ///< sd of the start perturbation on the transformed scale
    std::size_t min_observations{100};
    double uninformed_sigma_xi{50.0};
};

struct Interval {
    double lower{0.0};
    double upper{0.0};
};

struct BootstrapIntervals {
    Interval beta;
    Interval sigma_xi;
    Interval sigma_eta;
    int n_reps{0};
    int n_failed{0};         ///< resamples whose refit did not converge (excluded)
    bool uninformative{false};
};

struct EstimationResult {
    std::string physician_id;
    PhysicianParams params;
    double loglik{0.0};
    double gradient_norm{0.0};  ///< of the mean negative log-likelihood, transformed scale
    bool converged{false};
    int iterations{0};
    std::size_t n_obs{0};
    bool sigma_xi_uninformed{false};  ///< sigma_xi estimate above OptimizerConfig::uninformed_sigma_xi
    std::vector<double> start_logliks;  ///< final log-likelihood from each start
    std::optional<BootstrapIntervals> bootstrap_ci;
};

/// Maximizes the simulated likelihood from the default start
/// (beta = 0.5, sigma_xi = sigma_eta = 2) and `restarts` jittered starts;
/// keeps the best. Throws ValidationError on mixed physicians or too few cases.
EstimationResult fit_physician(std::span<const PatientCase> cases, const SmoothingConfig& cfg,
                               const OptimizerConfig& opt, std::uint64_t seed);

/// Single BFGS run on a prepared likelihood.
EstimationResult fit_from_start(const SimulatedLikelihood& likelihood, const Eigen::Vector3d& start,
                                const OptimizerConfig& opt, std::span<const double> weights = {});

/// Patient-level nonparametric bootstrap within one physician with
/// percentile 95% intervals. Each resample is refit from the point estimate.
/// Intervals are widened, if needed, to contain the point estimate.
/// Throws ValidationError if n_reps < 100.
BootstrapIntervals bootstrap(std::span<const PatientCase> cases, const SmoothingConfig& cfg,
                             const OptimizerConfig& opt, int n_reps, std::uint64_t seed,
                             const EstimationResult* point = nullptr);

struct FitAllOptions {
    unsigned threads{1};
    int bootstrap_reps{0};  ///< 0 skips the bootstrap
};

/// Fits every physician with at least opt.min_observations cases, in
/// physician-id order, spreading physicians over `threads` workers. Results
/// do not depend on the thread count. Smaller physicians are listed in
/// `skipped` (if given).
std::vector<EstimationResult> fit_all(std::span<const PatientCase> cases, const SmoothingConfig& cfg,
                                      const OptimizerConfig& opt, std::uint64_t seed, const FitAllOptions& run = {},
                                      std::vector<std::string>* skipped = nullptr);

/// Calls body(i) for i in [0, n) on up to `threads` threads. The first
/// exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace dxchoice
