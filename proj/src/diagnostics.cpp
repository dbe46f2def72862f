#include "dxchoice/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>

#include "dxchoice/errors.hpp"
#include "dxchoice/sampling.hpp"

namespace dxchoice {

std::vector<double> poisson_binomial_pmf(std::span<const double> p_values) {
    std::vector<double> pmf(p_values.size() + 1, 0.0);
    pmf[0] = 1.0;
    std::size_t filled = 0;
    for (double p : p_values) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("Poisson-Binomial probabilities must lie in [0, 1]");
        const double q = 1.0 - p;
        ++filled;
        pmf[filled] = pmf[filled - 1] * p;
        for (std::size_t k = filled - 1; k > 0; --k) pmf[k] = pmf[k] * q + pmf[k - 1] * p;
        pmf[0] *= q;
    }
    return pmf;
}

PoissonBinomialTest poisson_binomial_test(std::span<const double> p_values, std::size_t observed_sum) {
    if (observed_sum > p_values.size()) throw ValidationError("observed sum exceeds the number of trials");
    PoissonBinomialTest out;
    out.n = p_values.size();
    out.observed_sum = observed_sum;
    out.p_values.assign(p_values.begin(), p_values.end());
    const auto pmf = poisson_binomial_pmf(p_values);
    const double threshold = pmf[observed_sum] * (1.0 + 1e-7);
    double mass = 0.0;
    for (double f : pmf)
        if (f <= threshold) mass += f;
    out.p_two_sided = std::clamp(mass, 0.0, 1.0);
    out.reject_at_5pct = out.p_two_sided < 0.05;
    return out;
}

PoissonBinomialTest unbiasedness_test(std::span<const PatientCase> cases) {
    if (cases.empty()) throw ValidationError("unbiasedness test needs at least one case");
    std::vector<double> p;
    p.reserve(cases.size());
    std::size_t sum = 0;
    for (const auto& c : cases) {
        p.push_back(c.risk);
        sum += static_cast<std::size_t>(c.y);
    }
    return poisson_binomial_test(p, sum);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    std::int64_t n1 = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
        if (std::isnan(scores[i])) throw ValidationError("scores must not be NaN");
        n1 += labels[i];
    }
    const std::int64_t n = static_cast<std::int64_t>(labels.size());
    const std::int64_t n0 = n - n1;
    if (n1 == 0 || n0 == 0) throw ValidationError("AUC needs both label classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the rank sum of the positives, with midranks for ties.
    std::int64_t rank_sum2 = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const auto twice_mid = static_cast<std::int64_t>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum2 += twice_mid;
        i = j + 1;
    }
    const std::int64_t u2 = rank_sum2 - n1 * (n1 + 1);
    return static_cast<double>(u2) / static_cast<double>(2 * n0 * n1);
}

namespace {

std::vector<double> gamma_grid() {
    std::vector<double> grid;
    for (int k = -200; k <= 200; ++k) grid.push_back(0.05 * k);
    grid.push_back(-100.0);
    grid.push_back(100.0);
    std::stable_sort(grid.begin(), grid.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    return grid;
}

}  // namespace

DeltaAuc delta_auc_with_choice(std::span<const PatientCase> cases, int folds) {
    if (cases.size() < 100) throw ValidationError("delta AUC needs at least 100 cases");
    if (folds < 2) throw ValidationError("delta AUC needs at least 2 folds");
    const std::size_t n = cases.size();
    std::vector<double> risk(n);
    std::vector<int> y(n);
    std::vector<int> fold(n);
    for (std::size_t i = 0; i < n; ++i) {
        risk[i] = cases[i].risk;
        y[i] = cases[i].y;
        fold[i] = static_cast<int>(hash_id(cases[i].patient_id) % static_cast<std::uint64_t>(folds));
    }

    DeltaAuc out;
    out.folds = folds;
    out.auc_risk = auc(risk, y);
    out.combiner = "cross-fitted score tau + gamma*d, gamma maximizing training-fold AUC over "
                   "{-10, -9.95, ..., 10} and +-100; approximation to refitting the risk model with d";

    const auto grid = gamma_grid();
    std::vector<double> held_out(n);
    for (int f = 0; f < folds; ++f) {
        std::vector<double> tau_train;
        std::vector<int> d_train;
        std::vector<int> y_train;
        for (std::size_t i = 0; i < n; ++i) {
            if (fold[i] == f) continue;
            tau_train.push_back(cases[i].tau);
            d_train.push_back(cases[i].d);
            y_train.push_back(y[i]);
        }
        double best_gamma = 0.0;
        double best_auc = -1.0;
        std::vector<double> score(tau_train.size());
        for (double g : grid) {
            for (std::size_t i = 0; i < score.size(); ++i) score[i] = tau_train[i] + g * d_train[i];
            const double a = auc(score, y_train);
            if (a > best_auc) {
                best_auc = a;
                best_gamma = g;
            }
        }
        out.fold_gamma.push_back(best_gamma);
        for (std::size_t i = 0; i < n; ++i)
            if (fold[i] == f) held_out[i] = cases[i].tau + best_gamma * cases[i].d;
    }
    out.auc_combined = auc(held_out, y);
    out.delta = out.auc_combined - out.auc_risk;
    return out;
}

std::vector<CalibrationPoint> calibration_bins(std::span<const double> scores, std::span<const int> labels,
                                               std::size_t bin_size) {
    if (bin_size == 0) throw ValidationError("bin size must be >= 1");
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<CalibrationPoint> out;
    for (std::size_t start = 0; start + bin_size <= order.size(); start += bin_size) {
        double s = 0.0;
        double l = 0.0;
        for (std::size_t k = start; k < start + bin_size; ++k) {
            s += scores[order[k]];
            l += labels[order[k]];
        }
        out.push_back({s / static_cast<double>(bin_size), l / static_cast<double>(bin_size), bin_size});
    }
    return out;
}

std::vector<PhysicianFitMoments> fit_moments(std::span<const PatientCase> cases, const EstimateMap& estimates,
                                             const FitMomentsConfig& cfg) {
    require_estimates(cases, estimates);
    std::vector<PhysicianFitMoments> out;
    for (const auto& [id, group] : group_by_physician(cases)) {
        const PhysicianParams& theta = estimates.at(id);
        const std::uint64_t phys_key = combine_keys(cfg.seed, hash_id(id));
        PhysicianFitMoments row;
        row.physician_id = id;
        row.n = group.size();
        for (const auto& c : group) {
            row.observed.prescribe_rate += c.d;
            row.observed.overprescribe_rate += c.d * (1 - c.y);
            row.observed.underprescribe_rate += (1 - c.d) * c.y;
            double p = choice_probability_exact(c.tau, c.y, theta, cfg.quadrature_order).probability;
            if (cfg.realized) p = counter_uniform(combine_keys(phys_key, hash_id(c.patient_id)), 0) < p ? 1.0 : 0.0;
            row.simulated.prescribe_rate += p;
            row.simulated.overprescribe_rate += p * (1 - c.y);
            row.simulated.underprescribe_rate += (1.0 - p) * c.y;
        }
        const double n = static_cast<double>(group.size());
        for (FitMoments* m : {&row.observed, &row.simulated}) {
            m->prescribe_rate /= n;
            m->overprescribe_rate /= n;
            m->underprescribe_rate /= n;
        }
        out.push_back(std::move(row));
    }
    return out;
}

double kolmogorov_survival(double lambda) {
    if (!(lambda > 0.0)) return 1.0;
    if (lambda < 1.18) {
        const double pi = std::numbers::pi;
        double cdf = 0.0;
        for (int k = 1; k <= 20; ++k) {
            const double m = 2.0 * k - 1.0;
            cdf += std::exp(-m * m * pi * pi / (8.0 * lambda * lambda));
        }
        return std::clamp(1.0 - std::sqrt(2.0 * pi) / lambda * cdf, 0.0, 1.0);
    }
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-300) break;
    }
    return std::clamp(sum, 0.0, 1.0);
}

namespace {

double ks_p_value(double d, double effective_n) {
    const double en = std::sqrt(effective_n);
    return kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
}

}  // namespace

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ValidationError("KS test needs two non-empty samples");
    std::vector<double> x(a.begin(), a.end());
    std::vector<double> z(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(z.begin(), z.end());
    const double na = static_cast<double>(x.size());
    const double nb = static_cast<double>(z.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < x.size() && j < z.size()) {
        const double v = std::min(x[i], z[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < z.size() && z[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return {d, ks_p_value(d, na * nb / (na + nb))};
}

KsResult ks_one_sample(std::span<const double> x, const std::function<double(double)>& cdf) {
    if (x.empty()) throw ValidationError("KS test needs a non-empty sample");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double f = cdf(s[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return {d, ks_p_value(d, n)};
}

}  // namespace dxchoice
