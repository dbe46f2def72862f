#pragma once

// Standard-normal density, distribution and quantile functions.
//
// The CDF is 0.5 * erfc(-x / sqrt(2)), accurate to a few ulps across the
// whole real line (the lower tail keeps full relative precision).
//
// The quantile starts from P. J. Acklam's rational approximation
// (relative error below 1.15e-9 on (0, 1)) and takes one Halley step against
// the erfc-based CDF, which brings |Phi(Phi^-1(p)) - p| to rounding level.
// Only the lower half is evaluated directly; upper-half arguments use the
// reflection Phi^-1(p) = -Phi^-1(1 - p), exact for p >= 0.5.

#include <cmath>
#include <limits>
#include <numbers>

namespace dxchoice {

template <typename Scalar>
Scalar normal_pdf(Scalar x) {
    return std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
Scalar normal_cdf(Scalar x) {
    return Scalar(0.5) * std::erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

namespace detail {

template <typename Scalar>
Scalar acklam_lower(Scalar p) {
    constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                            1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                            6.680131188771972e+01,  -1.328068155288572e+01};
    constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                            -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                            3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < Scalar(p_low)) {
        const Scalar q = std::sqrt(Scalar(-2) * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const Scalar q = p - Scalar(0.5);
    const Scalar r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

template <typename Scalar>
Scalar quantile_lower_half(Scalar p) {
    Scalar x = acklam_lower(p);
    // Halley refinement.
    const Scalar e = normal_cdf(x) - p;
    const Scalar u = e * std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>) * std::exp(x * x / Scalar(2));
    if (std::isfinite(u)) x = x - u / (Scalar(1) + x * u / Scalar(2));
    return x;
}

}  // namespace detail

/// Inverse of normal_cdf. Returns -inf at 0, +inf at 1 and NaN outside [0, 1].
template <typename Scalar>
Scalar normal_quantile(Scalar p) {
    if (!(p >= Scalar(0) && p <= Scalar(1))) return std::numeric_limits<Scalar>::quiet_NaN();
    if (p == Scalar(0)) return -std::numeric_limits<Scalar>::infinity();
    if (p == Scalar(1)) return std::numeric_limits<Scalar>::infinity();
    if (p > Scalar(0.5)) return -detail::quantile_lower_half(Scalar(1) - p);
    return detail::quantile_lower_half(p);
}

}  // namespace dxchoice
