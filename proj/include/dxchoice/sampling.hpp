#pragma once

// Seedable random variates for simulation and simulated likelihood.
//
// Every uniform is a pure function of a 64-bit key and a counter, so results
// do not depend on call order or threading. The mixing function is the
// SplitMix64 finalizer (Steele, Lea & Flood, 2014):
//
//   z += 0x9e3779b97f4a7c15
//   z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//   z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//   z ^= z >> 31
//
// String identifiers are hashed with 64-bit FNV-1a
// (offset basis 0xcbf29ce484222325, prime 0x100000001b3).

#include <Eigen/Core>
#include <cstdint>
#include <string_view>

#include "dxchoice/model.hpp"

namespace dxchoice {

std::uint64_t splitmix64(std::uint64_t z);

/// Combines keys into one stream key: mix(mix(a) ^ b), etc.
std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b);
std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b, std::uint64_t c);

/// 64-bit FNV-1a.
std::uint64_t hash_id(std::string_view text);

/// Uniform on the open interval (0, 1): the top 53 bits of
/// splitmix64(combine_keys(stream, counter)) shifted by half an ulp.
double counter_uniform(std::uint64_t stream, std::uint64_t counter);

/// Standard normal variate by inversion of counter_uniform.
double counter_normal(std::uint64_t stream, std::uint64_t counter);

/// Column order of a three-channel DrawSet.
enum DrawChannel : Eigen::Index { kNuChannel = 0, kXiChannel = 1, kEtaChannel = 2 };

/// R stratified uniforms per column (modified Latin hypercube sample).
struct DrawSet {
    Eigen::MatrixXd draws;  ///< r_count x n_columns, entries in (0, 1)
    std::uint64_t seed{0};
    std::uint64_t unit_index{0};
    Eigen::Index r_count{0};
};

/// Modified Latin hypercube draws: column c holds (r - 1 + s_c) / R for
/// r = 1..R with a single shift s_c ~ U(0, 1), shuffled by a Fisher-Yates
/// permutation. Shift and permutation are keyed by (seed, unit_index, c).
/// Throws ValidationError if r_count < 1 or n_columns < 1.
DrawSet mlhs_draws(std::uint64_t seed, Eigen::Index r_count, Eigen::Index n_columns, std::uint64_t unit_index);

enum class TruncationSide { above_zero, below_zero };

/// Inverse-CDF draw from N(mean, 1) restricted to (0, inf) or (-inf, 0].
/// Monotone increasing in u. `tail_warning`, when given, is set if
/// Phi(-mean) lies within 1e-14 of 0 or 1 (the kept side is then either
/// almost all of the mass or a far tail).
double truncated_normal_inverse(double u, double mean, TruncationSide side, bool* tail_warning = nullptr);

/// CDF of the truncated distribution above, for testing and diagnostics.
double truncated_normal_cdf(double x, double mean, TruncationSide side);

/// Simulated (nu, xi, eta) triples for one case: nu^r is N(tau, 1) truncated
/// to the side implied by y, xi^r = tau + sigma_xi Phi^-1(u_xi),
/// eta^r = nu^r + sigma_eta Phi^-1(u_eta). Returns an R x 3 matrix.
Eigen::MatrixX3d signal_draws(const PatientCase& patient, const PhysicianParams& params, const DrawSet& draw_set);

/// Parameter-free part of signal_draws: nu^r and the two standard normal
/// noise columns. Signals follow as xi = tau + sigma_xi z_xi and
/// eta = nu + sigma_eta z_eta.
struct StandardizedDraws {
    Eigen::ArrayXd nu;
    Eigen::ArrayXd z_xi;
    Eigen::ArrayXd z_eta;
};

StandardizedDraws standardize_draws(double tau, int y, const DrawSet& draw_set);

}  // namespace dxchoice
