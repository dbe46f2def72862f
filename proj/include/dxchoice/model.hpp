#pragma once

// Closed-form pieces of the treatment-choice model.
//
// A patient's sickness index is nu ~ N(tau, 1) and the patient is sick
// (bacterial) when nu > 0. Physician j sees a type signal xi ~ N(tau, sigma_xi^2)
// and a clinical signal eta ~ N(nu, sigma_eta^2), forms the normal posterior
// over nu, and prescribes when the posterior probability of sickness exceeds
// the cost ratio beta (the untreated-sickness cost is normalized to one).

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dxchoice/normal.hpp"

namespace dxchoice {

/// Theta_j = (beta, sigma_xi, sigma_eta), with the sickness cost alpha fixed at 1.
template <typename Scalar>
struct BasicPhysicianParams {
    Scalar beta{0.5};       ///< cost of a prescription relative to untreated sickness
    Scalar sigma_xi{1.0};   ///< type-signal noise; 0 means the type is known exactly
    Scalar sigma_eta{1.0};  ///< clinical-signal noise; must stay positive
};

using PhysicianParams = BasicPhysicianParams<double>;

/// Throws ValidationError unless 0 < beta < 1, sigma_xi >= 0 and sigma_eta > 0
/// (all finite).
void validate(const PhysicianParams& params);

/// One tested consultation.
struct PatientCase {
    std::string physician_id;
    std::string patient_id;
    double risk{0.5};  ///< predicted probability of a bacterial result, clamped
    double tau{0.0};   ///< latent type, Phi^-1(risk)
    int y{0};          ///< 1 when the laboratory result was bacterial
    int d{0};          ///< 1 when an antibiotic was prescribed at consultation
};

/// Fitted or true Theta per physician id.
using EstimateMap = std::map<std::string, PhysicianParams>;

/// Cases split by physician id, each group in input order.
std::map<std::string, std::vector<PatientCase>> group_by_physician(std::span<const PatientCase> cases);

/// Throws ValidationError naming the first physician in `cases` absent from `estimates`.
void require_estimates(std::span<const PatientCase> cases, const EstimateMap& estimates);

inline constexpr double kRiskFloor = 1e-6;
inline constexpr double kRiskCeiling = 1.0 - 1e-6;

/// Clamps a risk into [1e-6, 1 - 1e-6] so that its probit stays finite.
double clamp_risk(double risk);

/// tau = Phi^-1(risk). Throws std::domain_error unless 0 < risk < 1.
double risk_to_type(double risk);

/// Builds a case from raw fields, clamping the risk and deriving tau.
/// `was_clamped` (if given) reports whether the risk moved.
PatientCase make_case(std::string physician_id, std::string patient_id, double risk, int y, int d,
                      bool* was_clamped = nullptr);

template <typename Scalar>
struct BasicPosterior {
    Scalar mu;
    Scalar sigma;
};

using Posterior = BasicPosterior<double>;

/// Posterior over nu given both signals (sigma_nu = 1):
///   mu      = (xi sigma_eta^2 + eta (sigma_xi^2 + 1)) / (sigma_xi^2 + 1 + sigma_eta^2)
///   sigma^2 = (sigma_xi^2 + 1) sigma_eta^2 / (sigma_xi^2 + 1 + sigma_eta^2)
template <typename Scalar>
BasicPosterior<Scalar> posterior(Scalar xi, Scalar eta, const BasicPhysicianParams<Scalar>& params) {
    const Scalar type_var = params.sigma_xi * params.sigma_xi + Scalar(1);
    const Scalar clin_var = params.sigma_eta * params.sigma_eta;
    const Scalar total = type_var + clin_var;
    return {(xi * clin_var + eta * type_var) / total, std::sqrt(type_var * clin_var / total)};
}

/// Posterior standard deviation; it does not depend on the signal values.
template <typename Scalar>
Scalar posterior_sigma(const BasicPhysicianParams<Scalar>& params) {
    return posterior(Scalar(0), Scalar(0), params).sigma;
}

/// v* = -sigma_post * Phi^-1(1 - beta). The physician prescribes iff mu > v*.
/// beta >= 1 gives +inf (never prescribe) and beta <= 0 gives -inf.
template <typename Scalar>
Scalar cutoff(const BasicPhysicianParams<Scalar>& params) {
    if (params.beta >= Scalar(1)) return std::numeric_limits<Scalar>::infinity();
    if (params.beta <= Scalar(0)) return -std::numeric_limits<Scalar>::infinity();
    return -posterior_sigma(params) * normal_quantile(Scalar(1) - params.beta);
}

/// The undivided decision index
///   g = xi sigma_eta^2 + eta (sigma_xi^2 + 1)
///       + sqrt((1 + sigma_xi^2 + sigma_eta^2)(sigma_xi^2 + 1) sigma_eta^2) Phi^-1(1 - beta),
/// which is (mu - v*) scaled by the positive factor (sigma_xi^2 + 1 + sigma_eta^2).
template <typename Scalar>
Scalar prescription_index(Scalar xi, Scalar eta, const BasicPhysicianParams<Scalar>& params) {
    const Scalar type_var = params.sigma_xi * params.sigma_xi + Scalar(1);
    const Scalar clin_var = params.sigma_eta * params.sigma_eta;
    const Scalar scale = std::sqrt((type_var + clin_var) * type_var * clin_var);
    return xi * clin_var + eta * type_var + scale * normal_quantile(Scalar(1) - params.beta);
}

/// d = 1[mu > v*]. Ties (mu == v*) resolve to 0.
template <typename Scalar>
int decide(Scalar xi, Scalar eta, const BasicPhysicianParams<Scalar>& params) {
    return posterior(xi, eta, params).mu > cutoff(params) ? 1 : 0;
}

/// pi(d, y; beta) = -y (1 - d) - beta d.
template <typename Scalar>
Scalar payoff(int d, int y, Scalar beta) {
    return -Scalar(y) * Scalar(1 - d) - beta * Scalar(d);
}

struct QuadratureResult {
    double probability{0.0};
    bool converged{true};
    double change{0.0};  ///< |P(order) - P(2 order)|
    int order{0};        ///< Gauss-Legendre nodes per panel of the reported value
};

/// Pr(d = 1 | tau, y, params) by numerical integration over the sickness
/// index nu restricted to the side implied by y. For a fixed nu the posterior
/// mean is Gaussian in (xi, eta), so the inner probability is a normal CDF.
/// The outer integral is composite Gauss-Legendre in the probability scale
/// of the truncated nu, with panel breaks clustered at the decision boundary.
/// Evaluates at `quadrature_order` and twice that, reports the finer value and
/// sets converged = false if the two differ by more than 1e-6.
/// beta may be 0 or 1 (returns 1 or 0). Throws ValidationError for order < 16.
QuadratureResult choice_probability_exact(double tau, int y, const PhysicianParams& params,
                                          int quadrature_order = 32);

/// Pr(d = 1 | tau) with y integrated out, in closed form.
double choice_probability_unconditional(double tau, const PhysicianParams& params);

}  // namespace dxchoice
