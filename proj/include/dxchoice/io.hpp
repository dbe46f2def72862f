#pragma once

// File formats and run configuration.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dxchoice/counterfactuals.hpp"
#include "dxchoice/diagnostics.hpp"
#include "dxchoice/estimator.hpp"
#include "dxchoice/model.hpp"
#include "dxchoice/simulator.hpp"

namespace dxchoice {

struct CsvReport {
    std::size_t rows{0};
    std::size_t clamped{0};  ///< risks moved into [1e-6, 1 - 1e-6]
};

/// Header `physician_id,patient_id,risk,y,d`. Rejects malformed rows, risks
/// outside [0, 1], y or d outside {0, 1} and duplicate (physician_id,
/// patient_id) pairs with a ValidationError naming the line.
std::vector<PatientCase> parse_patients_csv(const std::filesystem::path& path, CsvReport* report = nullptr);
std::vector<PatientCase> parse_patients_text(std::string_view text, CsvReport* report = nullptr);

/// Risks are written with 17 significant digits so a re-read is exact.
void write_patients_csv(const std::filesystem::path& path, std::span<const PatientCase> cases);

/// Header `physician_id,n,beta,sigma_xi,sigma_eta,loglik,converged,beta_lo,
/// beta_hi,sxi_lo,sxi_hi,seta_lo,seta_hi`; the interval columns are empty
/// without a bootstrap and loglik is empty when unknown (NaN).
void write_estimates_csv(const std::filesystem::path& path, std::span<const EstimationResult> results);
std::vector<EstimationResult> read_estimates_csv(const std::filesystem::path& path);

/// True parameters in the estimates schema, so they can stand in for estimates.
void write_truth_csv(const std::filesystem::path& path, std::span<const PhysicianTruth> truth);

EstimateMap to_estimate_map(std::span<const EstimationResult> results);

/// Columns `beta_s,w_policy1,w_policy2,w_policy3` (one per decision vector).
void write_welfare_csv(const std::filesystem::path& path, const WelfareCurve& curve);

void write_fit_moments_csv(const std::filesystem::path& path, std::span<const PhysicianFitMoments> rows);

struct RunConfig {
    std::uint64_t seed{1};
    Eigen::Index r_count{1000};
    double lambda{0.01};
    double gradient_tolerance{1e-6};
    int max_iterations{500};
    int restarts{4};
    double jitter{0.5};
    int bootstrap_reps{200};
    double welfare_step{0.01};
    std::size_t min_observations{100};
    DecisionMode decision_mode{DecisionMode::expected};
    bool redistribute_per_physician{false};
    int quadrature_order{16};

    SmoothingConfig smoothing() const;
    OptimizerConfig optimizer() const;
    CounterfactualConfig counterfactual() const;
};

/// Unknown keys are rejected; missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

PopulationSpec population_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PopulationSpec& spec);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// FNV-1a of the canonical (key-sorted, compact) JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Writes `<output>.meta.json` with the command, seed, config and its hash.
void write_run_metadata(const std::filesystem::path& output, const std::string& command, std::uint64_t seed,
                        const nlohmann::json& config);

nlohmann::json to_json(const PolicyOutcome& outcome);
nlohmann::json to_json(const PoissonBinomialTest& test);
nlohmann::json to_json(const DeltaAuc& delta);

}  // namespace dxchoice
