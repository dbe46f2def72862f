#pragma once

// Synthetic populations, ROC sweeps and the sigma_xi relevance sweep.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dxchoice/estimator.hpp"
#include "dxchoice/model.hpp"

namespace dxchoice {

/// Normal law restricted to [lower, upper], sampled by inversion.
struct TruncatedNormalLaw {
    double mean{0.0};
    double sd{1.0};
    double lower{0.0};
    double upper{1.0};
};

double sample_truncated_normal(const TruncatedNormalLaw& law, double u);

/// Either one Theta for every physician or independent truncated normals.
/// Defaults are typical cross-physician means and SDs (beta 0.56 (0.13),
/// sigma_xi 6.38 (3.59), sigma_eta 2.18 (1.40)), truncated to beta in [0.05, 0.95],
/// sigma_xi in [0, 20], sigma_eta in [0.1, 10].
struct PhysicianParamLaw {
    std::optional<PhysicianParams> fixed;
    TruncatedNormalLaw beta{0.56, 0.13, 0.05, 0.95};
    TruncatedNormalLaw sigma_xi{6.38, 3.59, 0.0, 20.0};
    TruncatedNormalLaw sigma_eta{2.18, 1.40, 0.1, 10.0};
};

/// Distribution of predicted risks. The default Beta(2.2, 3.3) has mean 0.4
/// and, for outcomes drawn as y ~ Bernoulli(m), an AUC of m against y of
/// about 0.729.
struct RiskLaw {
    enum class Kind { beta, fixed, uniform };
    Kind kind{Kind::beta};
    double a{2.2};  ///< beta shape a, fixed value, or uniform lower bound
    double b{3.3};  ///< beta shape b, or uniform upper bound
};

struct PopulationSpec {
    std::size_t n_physicians{10};
    std::size_t patients_per_physician{500};
    PhysicianParamLaw param_law;
    RiskLaw risk_law;
    std::uint64_t seed{1};
};

void validate(const PopulationSpec& spec);

struct PhysicianTruth {
    std::string physician_id;
    PhysicianParams params;
};

struct Population {
    std::vector<PatientCase> cases;    ///< sorted by (physician_id, patient_id)
    std::vector<PhysicianTruth> truth;  ///< sorted by physician_id
};

/// Draws Theta_j, then for each patient a risk m, tau = Phi^-1(m),
/// nu ~ N(tau, 1), y = 1[nu > 0], one (xi, eta) pair and d = decide(xi, eta).
/// Physician and patient ids are zero-padded ("P0001", "P0001-00001").
Population simulate_population(const PopulationSpec& spec);

struct RocPoint {
    double fpr{0.0};
    double tpr{0.0};
    double beta{0.0};
};

/// Points ordered from (0, 0) to (1, 1).
struct RocCurve {
    std::vector<RocPoint> points;
};

/// Expected (FPR, TPR) of `params` with beta replaced by each grid value,
/// averaging choice_probability_exact over the population's y = 0 and y = 1
/// cases. The corners beta = 1 and beta = 0 are always included.
/// Throws ValidationError if y is constant.
RocCurve simulate_roc(const PhysicianParams& params, std::span<const PatientCase> cases,
                      std::span<const double> beta_grid, int quadrature_order = 16);

/// Linear interpolation of TPR at `fpr` along the curve.
double roc_tpr_at(const RocCurve& curve, double fpr);

struct SensitivityConfig {
    std::vector<double> sigma_xi_grid;  ///< empty: 0, 1, ..., 30
    SmoothingConfig smoothing{};
    std::uint64_t seed{1};
};

struct SensitivityPoint {
    double sigma_xi{0.0};
    double pct_change{0.0};  ///< mean |P1(sigma_xi + step) - P1(sigma_xi)| x 100
};

/// For each grid value s, the mean over cases of the absolute change in the
/// smoothed prescription probability between sigma_xi = s and s + step,
/// with beta and sigma_eta from `base` and the same draws on both sides.
/// Throws ValidationError if step < 0.
std::vector<SensitivityPoint> sensitivity_sweep(const PhysicianParams& base, std::span<const PatientCase> cases,
                                                double step, const SensitivityConfig& cfg = {});

}  // namespace dxchoice
