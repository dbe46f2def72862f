#pragma once

// Identification and fit checks.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dxchoice/model.hpp"

namespace dxchoice {

/// Distribution of a sum of independent Bernoulli(p_i), by exact dynamic
/// programming. Throws ValidationError if any p lies outside [0, 1].
std::vector<double> poisson_binomial_pmf(std::span<const double> p_values);

struct PoissonBinomialTest {
    std::size_t n{0};
    std::size_t observed_sum{0};
    std::vector<double> p_values;
    double p_two_sided{1.0};
    bool reject_at_5pct{false};
};

/// Two-sided exact test with minimum-likelihood ordering: the p-value is the
/// mass of outcomes whose pmf does not exceed pmf(observed_sum).
PoissonBinomialTest poisson_binomial_test(std::span<const double> p_values, std::size_t observed_sum);

/// Tests whether a physician's bacterial outcomes are consistent with the
/// predicted risks. Throws ValidationError on an empty input.
PoissonBinomialTest unbiasedness_test(std::span<const PatientCase> cases);

/// Mann-Whitney AUC with ties counted one half. Throws ValidationError if a
/// label class is missing or the lengths differ.
double auc(std::span<const double> scores, std::span<const int> labels);

struct DeltaAuc {
    double auc_risk{0.5};
    double auc_combined{0.5};
    double delta{0.0};
    int folds{5};
    std::vector<double> fold_gamma;
    std::string combiner;  ///< description of the stacking rule, an approximation
};

/// AUC of the held-out score tau + gamma d minus the AUC of the risk alone.
/// gamma is picked per fold on the training part by maximizing training AUC
/// over a fixed grid; folds are keyed by the patient-id hash.
/// Throws ValidationError if n < 100 or y is constant.
DeltaAuc delta_auc_with_choice(std::span<const PatientCase> cases, int folds = 5);

struct CalibrationPoint {
    double mean_score{0.0};
    double mean_label{0.0};
    std::size_t count{0};
};

/// Successive bins of `bin_size` patients sorted by score; a trailing partial
/// bin is dropped. Throws ValidationError if bin_size is 0.
std::vector<CalibrationPoint> calibration_bins(std::span<const double> scores, std::span<const int> labels,
                                               std::size_t bin_size);

struct FitMoments {
    double prescribe_rate{0.0};       ///< mean d
    double overprescribe_rate{0.0};   ///< mean d (1 - y)
    double underprescribe_rate{0.0};  ///< mean (1 - d) y
};

struct PhysicianFitMoments {
    std::string physician_id;
    std::size_t n{0};
    FitMoments observed;
    FitMoments simulated;
};

struct FitMomentsConfig {
    bool realized{false};  ///< draw d ~ Bernoulli(P) instead of using P itself
    std::uint64_t seed{1};
    int quadrature_order{16};
};

/// Observed rates and their model counterparts at Theta-hat on the observed
/// (tau, y). All rates use every patient as the denominator.
/// Throws ValidationError if a physician has no estimate.
std::vector<PhysicianFitMoments> fit_moments(std::span<const PatientCase> cases, const EstimateMap& estimates,
                                             const FitMomentsConfig& cfg = {});

struct KsResult {
    double statistic{0.0};
    double p_value{1.0};
};

/// Kolmogorov distribution survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
double kolmogorov_survival(double lambda);

/// Two-sample Kolmogorov-Smirnov test, asymptotic p-value with the
/// Stephens small-sample correction.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// One-sample test against a continuous CDF.
KsResult ks_one_sample(std::span<const double> x, const std::function<double(double)>& cdf);

}  // namespace dxchoice
