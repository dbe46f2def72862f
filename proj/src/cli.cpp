#include "dxchoice/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dxchoice/counterfactuals.hpp"
#include "dxchoice/diagnostics.hpp"
#include "dxchoice/errors.hpp"
#include "dxchoice/estimator.hpp"
#include "dxchoice/io.hpp"
#include "dxchoice/simulator.hpp"

namespace dxchoice {

using nlohmann::json;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    unsigned threads{1};
};

RunConfig load_run_config(const CommonOptions& common) {
    RunConfig cfg;
    if (!common.config_path.empty()) cfg = run_config_from_json(read_json_file(common.config_path));
    if (common.seed) cfg.seed = *common.seed;
    return cfg;
}

std::vector<PatientCase> load_patients(const std::string& path, std::ostream& err) {
    CsvReport report;
    auto cases = parse_patients_csv(path, &report);
    if (report.clamped > 0) err << "warning: " << report.clamped << " risk value(s) clamped in " << path << '\n';
    if (cases.empty()) throw ValidationError(path + ": no patient rows");
    return cases;
}

EstimateMap load_estimates(const std::string& path, std::span<const PatientCase> cases) {
    const auto rows = read_estimates_csv(path);
    EstimateMap map = to_estimate_map(rows);
    require_estimates(cases, map);
    return map;
}

std::string fmt_pct(double v) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(2);
    ss << v;
    return ss.str();
}

std::string joined(const std::vector<std::string>& args) {
    std::string s;
    for (const auto& a : args) {
        if (!s.empty()) s += ' ';
        s += a;
    }
    return s;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Structural diagnosis-and-treatment choice model: simulate, estimate, diagnose, counterfactuals"};
    app.name("dxchoice");
    app.require_subcommand(1, 1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub, bool with_threads) {
        sub->add_option("--seed", common.seed, "Random seed (overrides the config)");
        sub->add_option("--config", common.config_path, "Run configuration JSON");
        if (with_threads) sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::Range(1u, 1024u));
    };

    std::string patients_path;
    std::string estimates_path;
    std::string out_path;

    // simulate
    std::string spec_path;
    std::string truth_path;
    auto* simulate = app.add_subcommand("simulate", "Simulate a synthetic patient population");
    simulate->add_option("--config", spec_path, "Population spec JSON")->required();
    simulate->add_option("--out", out_path, "Patients CSV to write")->required();
    simulate->add_option("--truth", truth_path, "Write the true parameters in the estimates schema");
    std::optional<std::uint64_t> sim_seed;
    simulate->add_option("--seed", sim_seed, "Random seed (overrides the spec)");

    // estimate / bootstrap
    int reps = -1;
    auto* estimate = app.add_subcommand("estimate", "Simulated maximum likelihood per physician");
    estimate->add_option("--patients", patients_path, "Patients CSV")->required();
    estimate->add_option("--out", out_path, "Estimates CSV to write")->required();
    add_common(estimate, true);

    auto* boot = app.add_subcommand("bootstrap", "Estimate with bootstrap confidence intervals");
    boot->add_option("--patients", patients_path, "Patients CSV")->required();
    boot->add_option("--out", out_path, "Estimates CSV to write")->required();
    boot->add_option("--reps", reps, "Bootstrap replications (>= 100; default from config)");
    add_common(boot, true);

    // diagnose
    std::size_t bin_size = 100;
    auto* diagnose = app.add_subcommand("diagnose", "Unbiasedness tests, AUC, delta AUC and calibration bins");
    diagnose->add_option("--patients", patients_path, "Patients CSV")->required();
    diagnose->add_option("--out", out_path, "Diagnostics JSON to write")->required();
    diagnose->add_option("--bin-size", bin_size, "Patients per calibration bin")->check(CLI::PositiveNumber);

    // counterfactual
    std::optional<double> target;
    std::string mode_flag;
    bool per_physician = false;
    auto* counterfactual = app.add_subcommand("counterfactual", "Evaluate the three policy counterfactuals");
    counterfactual->add_option("--patients", patients_path, "Patients CSV")->required();
    counterfactual->add_option("--estimates", estimates_path, "Estimates CSV")->required();
    counterfactual->add_option("--out", out_path, "Policy outcome JSON to write")->required();
    counterfactual->add_option("--target", target,
                               "Total prescribing change (percent) for the payoff policy; default matches provide_type");
    counterfactual->add_option("--mode", mode_flag, "expected or realized")->check(CLI::IsMember({"expected", "realized"}));
    counterfactual->add_flag("--per-physician", per_physician, "Redistribute within each physician");
    add_common(counterfactual, false);

    // welfare
    std::optional<double> step;
    auto* welfare = app.add_subcommand("welfare", "Planner welfare curve for the three policies");
    welfare->add_option("--patients", patients_path, "Patients CSV")->required();
    welfare->add_option("--estimates", estimates_path, "Estimates CSV")->required();
    welfare->add_option("--out", out_path, "Welfare CSV to write")->required();
    welfare->add_option("--step", step, "Grid step for beta^S");
    welfare->add_option("--target", target, "Total prescribing change (percent) for the payoff policy");
    welfare->add_option("--mode", mode_flag, "expected or realized")->check(CLI::IsMember({"expected", "realized"}));
    welfare->add_flag("--per-physician", per_physician, "Redistribute within each physician");
    add_common(welfare, false);

    // sensitivity
    double base_beta = 0.56;
    double base_sigma_eta = 2.18;
    double sens_step = 1.0;
    auto* sensitivity = app.add_subcommand("sensitivity", "Change in choices per unit change of sigma_xi");
    sensitivity->add_option("--patients", patients_path, "Patients CSV")->required();
    sensitivity->add_option("--out", out_path, "Sensitivity CSV to write")->required();
    sensitivity->add_option("--beta", base_beta, "beta held fixed")->check(CLI::Range(0.0, 1.0));
    sensitivity->add_option("--sigma-eta", base_sigma_eta, "sigma_eta held fixed")->check(CLI::PositiveNumber);
    sensitivity->add_option("--step", sens_step, "Increment in sigma_xi")->check(CLI::NonNegativeNumber);
    add_common(sensitivity, false);

    // fit-moments
    bool realized = false;
    auto* moments = app.add_subcommand("fit-moments", "Observed against model-implied prescribing rates");
    moments->add_option("--patients", patients_path, "Patients CSV")->required();
    moments->add_option("--estimates", estimates_path, "Estimates CSV")->required();
    moments->add_option("--out", out_path, "Moments CSV to write")->required();
    moments->add_flag("--realized", realized, "Draw decisions instead of using probabilities");
    add_common(moments, false);

    std::vector<std::string> argv_store{"dxchoice"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        if (rc == 0) return kExitOk;
        err << app.help();
        return kExitValidation;
    }

    const std::string command = joined(args);
    try {
        if (*simulate) {
            PopulationSpec spec = population_spec_from_json(read_json_file(spec_path));
            if (sim_seed) spec.seed = *sim_seed;
            const Population pop = simulate_population(spec);
            write_patients_csv(out_path, pop.cases);
            const json config = {{"population", to_json(spec)}};
            write_run_metadata(out_path, command, spec.seed, config);
            if (!truth_path.empty()) {
                write_truth_csv(truth_path, pop.truth);
                write_run_metadata(truth_path, command, spec.seed, config);
            }
            out << "simulate: " << pop.cases.size() << " cases for " << pop.truth.size() << " physicians -> "
                << out_path << '\n';
            return kExitOk;
        }

        RunConfig cfg = load_run_config(common);
        if (!mode_flag.empty()) cfg.decision_mode = mode_flag == "realized" ? DecisionMode::realized : DecisionMode::expected;
        if (per_physician) cfg.redistribute_per_physician = true;
        if (step) cfg.welfare_step = *step;
        json config = to_json(cfg);

        if (*estimate || *boot) {
            const auto cases = load_patients(patients_path, err);
            FitAllOptions run;
            run.threads = common.threads;
            if (*boot) {
                run.bootstrap_reps = reps >= 0 ? reps : cfg.bootstrap_reps;
                if (run.bootstrap_reps < 100) throw ValidationError("bootstrap needs --reps >= 100");
                config["bootstrap_reps"] = run.bootstrap_reps;
            } else {
                config["bootstrap_reps"] = 0;
            }
            std::vector<std::string> skipped;
            const auto results = fit_all(cases, cfg.smoothing(), cfg.optimizer(), cfg.seed, run, &skipped);
            write_estimates_csv(out_path, results);
            write_run_metadata(out_path, command, cfg.seed, config);
            const auto converged = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.converged; });
            out << (*boot ? "bootstrap: " : "estimate: ") << results.size() << " physicians estimated, " << converged
                << " converged, " << skipped.size() << " skipped (< " << cfg.min_observations << " cases) -> "
                << out_path << '\n';
            return kExitOk;
        }

        if (*diagnose) {
            const auto cases = load_patients(patients_path, err);
            json report;
            report["physicians"] = json::array();
            std::size_t rejected = 0;
            for (const auto& [id, group] : group_by_physician(cases)) {
                json row = {{"physician_id", id}, {"n", group.size()}};
                const auto test = unbiasedness_test(group);
                rejected += test.reject_at_5pct ? 1 : 0;
                row["unbiasedness"] = to_json(test);
                const bool both = std::any_of(group.begin(), group.end(), [](const auto& c) { return c.y == 1; }) &&
                                  std::any_of(group.begin(), group.end(), [](const auto& c) { return c.y == 0; });
                if (both && group.size() >= 100) row["delta_auc"] = to_json(delta_auc_with_choice(group));
                report["physicians"].push_back(row);
            }
            std::vector<double> scores;
            std::vector<int> labels;
            for (const auto& c : cases) {
                scores.push_back(c.risk);
                labels.push_back(c.y);
            }
            const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
            if (both) report["pooled_auc"] = auc(scores, labels);
            json bins = json::array();
            for (const auto& b : calibration_bins(scores, labels, bin_size))
                bins.push_back({{"mean_score", b.mean_score}, {"mean_label", b.mean_label}, {"count", b.count}});
            report["calibration_bins"] = bins;
            write_json_file(out_path, report);
            config["bin_size"] = bin_size;
            write_run_metadata(out_path, command, cfg.seed, config);
            const std::size_t n_phys = report["physicians"].size();
            out << "diagnose: unbiasedness not rejected for " << n_phys - rejected << " of " << n_phys
                << " physicians at 5% -> " << out_path << '\n';
            return kExitOk;
        }

        if (*counterfactual || *welfare) {
            const auto cases = load_patients(patients_path, err);
            const EstimateMap estimates = load_estimates(estimates_path, cases);
            const CounterfactualConfig cf = cfg.counterfactual();
            const PolicyOutcome p1 = cf_provide_type(cases, estimates, cf);
            const double goal = target ? *target : std::min(0.0, p1.delta_total_pct);
            const PolicyOutcome p2 = cf_manipulate_payoff(cases, estimates, goal, cf);
            const PolicyOutcome p3 = cf_redistribute(cases, cf, &estimates);
            config["target_delta_total_pct"] = goal;
            if (*counterfactual) {
                json report = {{"policies", {to_json(p1), to_json(p2), to_json(p3)}}};
                write_json_file(out_path, report);
                write_run_metadata(out_path, command, cfg.seed, config);
                out << "counterfactual: provide_type " << fmt_pct(p1.delta_total_pct) << "%, manipulate_payoff "
                    << fmt_pct(p2.delta_total_pct) << "% (kappa " << *p2.kappa << "), redistribute "
                    << fmt_pct(p3.delta_total_pct) << "% total prescribing -> " << out_path << '\n';
                return kExitOk;
            }
            const std::vector<std::vector<double>> decisions{p1.decisions, p2.decisions, p3.decisions};
            const WelfareCurve curve = welfare_curve(cases, decisions, cfg.welfare_step);
            write_welfare_csv(out_path, curve);
            write_run_metadata(out_path, command, cfg.seed, config);
            double min_w3 = INFINITY;
            for (double w : curve.w_values[2])
                if (!std::isnan(w)) min_w3 = std::min(min_w3, w);
            const auto cross = crossing_point(curve, 0, 2);
            out << "welfare: " << curve.grid.size() << " grid points, min W(redistribute) " << min_w3
                << ", provide_type overtakes redistribute at "
                << (cross ? std::to_string(*cross) : std::string("none")) << " -> " << out_path << '\n';
            return kExitOk;
        }

        if (*sensitivity) {
            const auto cases = load_patients(patients_path, err);
            PhysicianParams base;
            base.beta = base_beta;
            base.sigma_eta = base_sigma_eta;
            SensitivityConfig sc;
            sc.seed = cfg.seed;
            sc.smoothing = cfg.smoothing();
            const auto points = sensitivity_sweep(base, cases, sens_step, sc);
            {
                std::ofstream f(out_path);
                if (!f) throw ValidationError("cannot write " + out_path);
                f << "sigma_xi,pct_change\n";
                f.precision(17);
                for (const auto& p : points) f << p.sigma_xi << ',' << p.pct_change << '\n';
            }
            config["beta"] = base_beta;
            config["sigma_eta"] = base_sigma_eta;
            config["step"] = sens_step;
            write_run_metadata(out_path, command, cfg.seed, config);
            out << "sensitivity: " << points.size() << " grid points, change at sigma_xi=0 " << fmt_pct(points.front().pct_change)
                << "% -> " << out_path << '\n';
            return kExitOk;
        }

        if (*moments) {
            const auto cases = load_patients(patients_path, err);
            const EstimateMap estimates = load_estimates(estimates_path, cases);
            FitMomentsConfig fc;
            fc.realized = realized;
            fc.seed = cfg.seed;
            fc.quadrature_order = cfg.quadrature_order;
            const auto rows = fit_moments(cases, estimates, fc);
            write_fit_moments_csv(out_path, rows);
            config["realized"] = realized;
            write_run_metadata(out_path, command, cfg.seed, config);
            std::vector<double> obs[3];
            std::vector<double> sim[3];
            for (const auto& r : rows) {
                obs[0].push_back(r.observed.prescribe_rate);
                obs[1].push_back(r.observed.overprescribe_rate);
                obs[2].push_back(r.observed.underprescribe_rate);
                sim[0].push_back(r.simulated.prescribe_rate);
                sim[1].push_back(r.simulated.overprescribe_rate);
                sim[2].push_back(r.simulated.underprescribe_rate);
            }
            out << "fit-moments: " << rows.size() << " physicians, KS p-values prescribe "
                << ks_two_sample(obs[0], sim[0]).p_value << ", over " << ks_two_sample(obs[1], sim[1]).p_value
                << ", under " << ks_two_sample(obs[2], sim[2]).p_value << " -> " << out_path << '\n';
            return kExitOk;
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::domain_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    err << app.help();
    return kExitValidation;
}

}  // namespace dxchoice
