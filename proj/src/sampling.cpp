#include "dxchoice/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dxchoice/errors.hpp"
#include "dxchoice/normal.hpp"

namespace dxchoice {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ b); }

std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return combine_keys(combine_keys(a, b), c);
}

std::uint64_t hash_id(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double counter_uniform(std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t bits = splitmix64(combine_keys(stream, counter)) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double counter_normal(std::uint64_t stream, std::uint64_t counter) {
    return normal_quantile(counter_uniform(stream, counter));
}

DrawSet mlhs_draws(std::uint64_t seed, Eigen::Index r_count, Eigen::Index n_columns, std::uint64_t unit_index) {
    if (r_count < 1) throw ValidationError("mlhs_draws: r_count must be >= 1");
    if (n_columns < 1) throw ValidationError("mlhs_draws: n_columns must be >= 1");

    DrawSet set;
    set.seed = seed;
    set.unit_index = unit_index;
    set.r_count = r_count;
    set.draws.resize(r_count, n_columns);

    const double inv_r = 1.0 / static_cast<double>(r_count);
    for (Eigen::Index c = 0; c < n_columns; ++c) {
        const std::uint64_t key = combine_keys(seed, unit_index, static_cast<std::uint64_t>(c));
        // Keep the shift off the stratum edges so every value is strictly interior.
        const double shift = 1e-9 + (1.0 - 2e-9) * counter_uniform(key, 0);
        auto col = set.draws.col(c);
        for (Eigen::Index r = 0; r < r_count; ++r) col(r) = (static_cast<double>(r) + shift) * inv_r;
        for (Eigen::Index i = r_count - 1; i > 0; --i) {
            const double u = counter_uniform(key, static_cast<std::uint64_t>(r_count - i));
            const auto j = std::min<Eigen::Index>(i, static_cast<Eigen::Index>(u * static_cast<double>(i + 1)));
            std::swap(col(i), col(j));
        }
    }
    return set;
}

double truncated_normal_inverse(double u, double mean, TruncationSide side, bool* tail_warning) {
    if (!(u > 0.0 && u < 1.0)) throw ValidationError("truncated_normal_inverse: u must lie in (0, 1)");
    if (side == TruncationSide::below_zero) {
        // nu <= 0 with mean m  <=>  -nu >= 0 with mean -m.
        return -truncated_normal_inverse(1.0 - u, -mean, TruncationSide::above_zero, tail_warning);
    }
    const double lower = normal_cdf(-mean);  // mass below zero
    const double kept = normal_cdf(mean);    // mass above zero
    if (tail_warning) *tail_warning = lower < 1e-14 || lower > 1.0 - 1e-14;

    const double p = lower + u * kept;
    double nu = p < 0.5 ? mean + normal_quantile(p) : mean - normal_quantile((1.0 - u) * kept);
    if (!(nu > 0.0)) nu = std::numeric_limits<double>::min();
    return nu;
}

double truncated_normal_cdf(double x, double mean, TruncationSide side) {
    if (side == TruncationSide::above_zero) {
        if (x <= 0.0) return 0.0;
        return 1.0 - normal_cdf(mean - x) / normal_cdf(mean);
    }
    if (x >= 0.0) return 1.0;
    return normal_cdf(x - mean) / normal_cdf(-mean);
}

StandardizedDraws standardize_draws(double tau, int y, const DrawSet& draw_set) {
    if (draw_set.draws.cols() < 3) throw ValidationError("signal draws need a DrawSet with 3 columns");
    const Eigen::Index r_count = draw_set.draws.rows();
    const auto side = y == 1 ? TruncationSide::above_zero : TruncationSide::below_zero;
    StandardizedDraws out;
    out.nu.resize(r_count);
    out.z_xi.resize(r_count);
    out.z_eta.resize(r_count);
    for (Eigen::Index r = 0; r < r_count; ++r) {
        out.nu(r) = truncated_normal_inverse(draw_set.draws(r, kNuChannel), tau, side);
        out.z_xi(r) = normal_quantile(draw_set.draws(r, kXiChannel));
        out.z_eta(r) = normal_quantile(draw_set.draws(r, kEtaChannel));
    }
    return out;
}

Eigen::MatrixX3d signal_draws(const PatientCase& patient, const PhysicianParams& params, const DrawSet& draw_set) {
    const StandardizedDraws z = standardize_draws(patient.tau, patient.y, draw_set);
    Eigen::MatrixX3d out(z.nu.size(), 3);
    out.col(kNuChannel) = z.nu.matrix();
    out.col(kXiChannel) = (patient.tau + params.sigma_xi * z.z_xi).matrix();
    out.col(kEtaChannel) = (z.nu + params.sigma_eta * z.z_eta).matrix();
    return out;
}

}  // namespace dxchoice
