#pragma once

// Policy counterfactuals, physician payoff gains and the planner welfare curve.
//
// Decision vectors are aligned with the input cases and hold either expected
// prescriptions in [0, 1] or realized 0/1 draws. In expected mode a policy
// moves each observed decision by P_cf - P_sq, the change in the model choice
// probability at Theta-hat; identity policies therefore leave the data as is.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dxchoice/model.hpp"

namespace dxchoice {

enum class DecisionMode { expected, realized };
enum class PolicyId { provide_type, manipulate_payoff, redistribute };

std::string to_string(PolicyId policy);
std::string to_string(DecisionMode mode);

struct CounterfactualConfig {
    DecisionMode mode{DecisionMode::expected};
    std::uint64_t seed{1};                  ///< realized mode only
    int quadrature_order{16};
    bool redistribute_per_physician{false};
    int kappa_iterations{40};
    double kappa_tolerance_pp{0.1};
};

/// (delta, delta y, delta not-y): prescriptions, treated bacterial cases,
/// prescriptions to non-bacterial cases.
struct DecisionCounts {
    double total{0.0};
    double treated_bacterial{0.0};
    double overprescribed{0.0};
};

DecisionCounts count_decisions(std::span<const PatientCase> cases, std::span<const double> decisions);

/// Observed decisions as doubles.
std::vector<double> observed_decisions(std::span<const PatientCase> cases);

struct PayoffGain {
    double mean_pct{0.0};          ///< physician-weighted mean W_j x 100
    std::size_t n_included{0};
    std::size_t n_excluded{0};     ///< physicians already at first best
    std::vector<std::pair<std::string, double>> per_physician;
};

/// W_j = (Pi_j(delta) - Pi_j(delta0)) / (Pi_bar_j - Pi_j(delta0)) with
/// Pi_bar_j = -beta_j sum y and delta0 the observed decisions.
PayoffGain payoff_gain(std::span<const PatientCase> cases, std::span<const double> decisions,
                       const EstimateMap& estimates);

struct PolicyOutcome {
    PolicyId policy{PolicyId::provide_type};
    DecisionMode mode{DecisionMode::expected};
    DecisionCounts baseline;
    DecisionCounts counterfactual;
    double delta_total_pct{0.0};
    double delta_treated_bacterial_pct{0.0};
    double delta_overprescribe_pct{0.0};
    double payoff_gain_mean_pct{0.0};  ///< NaN when no estimates were supplied
    std::size_t payoff_gain_excluded{0};
    std::optional<double> kappa;
    bool target_met{true};             ///< manipulate_payoff: target reached within tolerance
    bool degenerate_ranking{false};    ///< redistribute: stopping point inside a risk tie
    std::vector<double> decisions;     ///< aligned with the input cases
};

/// sigma_xi set to 0 for every physician; beta and sigma_eta kept.
PolicyOutcome cf_provide_type(std::span<const PatientCase> cases, const EstimateMap& estimates,
                              const CounterfactualConfig& cfg = {});

/// beta' = min(beta + kappa, 1) at a given kappa.
PolicyOutcome cf_manipulate_payoff_at(std::span<const PatientCase> cases, const EstimateMap& estimates,
                                      double kappa, const CounterfactualConfig& cfg = {});

/// Finds kappa in [0, 1] by bisection so that the total prescribing change
/// matches `target_delta_total_pct` (a percentage, <= 0). Throws
/// ValidationError if the target lies outside [delta(1), 0].
PolicyOutcome cf_manipulate_payoff(std::span<const PatientCase> cases, const EstimateMap& estimates,
                                   double target_delta_total_pct, const CounterfactualConfig& cfg = {});

/// Prescribes in descending risk order (ties by physician_id, patient_id)
/// until the treated bacterial count equals the observed one. Pooled unless
/// cfg.redistribute_per_physician. Payoff gains need `estimates`.
PolicyOutcome cf_redistribute(std::span<const PatientCase> cases, const CounterfactualConfig& cfg = {},
                              const EstimateMap* estimates = nullptr);

struct WelfareCurve {
    std::vector<double> grid;                   ///< beta^S values
    std::vector<std::vector<double>> w_values;  ///< [policy][grid point], NaN where undefined
    std::vector<bool> undefined;                ///< per grid point: Pi(delta0) == Pi_bar
};

/// W(delta, beta^S) = (Pi(delta) - Pi(delta0)) / (Pi_bar - Pi(delta0)) pooled
/// over all cases, for each decision vector, on 0, step, 2 step, ..., 1.
/// Throws ValidationError unless 0 < step <= 0.5.
WelfareCurve welfare_curve(std::span<const PatientCase> cases, std::span<const std::vector<double>> decisions,
                           double grid_step = 0.01);

/// Smallest beta^S at which policy `a` catches up with policy `b` after
/// being below it, by linear interpolation between grid points.
std::optional<double> crossing_point(const WelfareCurve& curve, std::size_t a, std::size_t b);

}  // namespace dxchoice
