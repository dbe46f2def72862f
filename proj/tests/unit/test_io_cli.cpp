#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dxchoice/cli.hpp"
#include "dxchoice/errors.hpp"
#include "dxchoice/io.hpp"

using namespace dxchoice;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("dxchoice_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::vector<std::string>& args, std::string* out_text = nullptr) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli_dispatch(args, out, err);
    if (out_text) *out_text = out.str();
    return code;
}

}  // namespace

TEST_CASE("patients CSV parsing") {
    const std::string text =
        "physician_id,patient_id,risk,y,d\n"
        "A,1,0.2,0,0\n"
        "A,2,0.7,1,1\n"
        "A,3,1.0,1,1\n"
        "B,1,0.4,0,1\n"
        "B,2,0,0,0\n";
    CsvReport report;
    const auto cases = parse_patients_text(text, &report);
    REQUIRE(cases.size() == 5);
    CHECK(report.rows == 5);
    CHECK(report.clamped == 2);
    CHECK(cases[2].risk == kRiskCeiling);
    CHECK(cases[4].risk == kRiskFloor);
    CHECK(cases[3].physician_id == "B");
    CHECK(std::abs(cases[0].tau - normal_quantile(0.2)) < 1e-15);

    const std::string bad_y = "physician_id,patient_id,risk,y,d\nA,1,0.2,0,0\nA,2,0.3,2,0\n";
    try {
        parse_patients_text(bad_y);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_patients_text("physician_id,patient_id,risk,y,d\nA,1,0.2,0,0\nA,1,0.3,1,0\n"),
                    ValidationError);
    CHECK_THROWS_AS(parse_patients_text("physician_id,patient_id,risk,y,d\nA,1,1.2,0,0\n"), ValidationError);
    CHECK_THROWS_AS(parse_patients_text("physician_id,patient_id,risk,y\nA,1,0.2,0\n"), ValidationError);
    CHECK_THROWS_AS(parse_patients_text("physician_id,patient_id,risk,y,d\nA,1,abc,0,0\n"), ValidationError);
}

TEST_CASE("patients CSV round trip is exact") {
    const auto dir = scratch_dir("patients");
    PopulationSpec spec;
    spec.n_physicians = 2;
    spec.patients_per_physician = 40;
    const auto cases = simulate_population(spec).cases;
    write_patients_csv(dir / "p.csv", cases);
    const auto back = parse_patients_csv(dir / "p.csv");
    REQUIRE(back.size() == cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        CHECK(back[i].risk == cases[i].risk);
        CHECK(back[i].y == cases[i].y);
        CHECK(back[i].d == cases[i].d);
        CHECK(back[i].patient_id == cases[i].patient_id);
    }
    CHECK_THROWS_AS(parse_patients_csv(dir / "missing.csv"), ValidationError);
}

TEST_CASE("estimates CSV round trip") {
    const auto dir = scratch_dir("estimates");
    EstimationResult a;
    a.physician_id = "A";
    a.params = {0.512345678901234, 3.25, 1.125};
    a.loglik = -123.456;
    a.converged = true;
    a.n_obs = 300;
    EstimationResult b = a;
    b.physician_id = "B";
    b.converged = false;
    b.bootstrap_ci = BootstrapIntervals{{0.4, 0.6}, {1.0, 6.0}, {0.5, 2.0}, 200, 0, false};
    const std::vector<EstimationResult> rows{a, b};
    write_estimates_csv(dir / "e.csv", rows);
    const auto back = read_estimates_csv(dir / "e.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].params.beta == a.params.beta);
    CHECK(back[0].params.sigma_xi == a.params.sigma_xi);
    CHECK(back[0].loglik == a.loglik);
    CHECK(back[0].converged);
    CHECK(back[0].n_obs == 300);
    CHECK_FALSE(back[0].bootstrap_ci);
    REQUIRE(back[1].bootstrap_ci);
    CHECK(back[1].bootstrap_ci->sigma_xi.upper == 6.0);
    CHECK_FALSE(back[1].converged);
    const auto map = to_estimate_map(back);
    CHECK(map.at("B").sigma_eta == 1.125);
}

TEST_CASE("configuration JSON") {
    RunConfig cfg;
    cfg.seed = 99;
    cfg.r_count = 250;
    cfg.decision_mode = DecisionMode::realized;
    const auto back = run_config_from_json(to_json(cfg));
    CHECK(back.seed == 99);
    CHECK(back.r_count == 250);
    CHECK(back.decision_mode == DecisionMode::realized);
    CHECK(back.restarts == cfg.restarts);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"sede", 3}}), ValidationError);
    CHECK(config_hash(to_json(cfg)) == config_hash(to_json(back)));
    CHECK(config_hash(to_json(cfg)).size() == 16);

    PopulationSpec spec;
    spec.n_physicians = 7;
    spec.risk_law.kind = RiskLaw::Kind::uniform;
    spec.risk_law.a = 0.1;
    spec.risk_law.b = 0.9;
    spec.param_law.sigma_xi.sd = 2.0;
    const auto spec_back = population_spec_from_json(to_json(spec));
    CHECK(spec_back.n_physicians == 7);
    CHECK(spec_back.risk_law.kind == RiskLaw::Kind::uniform);
    CHECK(spec_back.param_law.sigma_xi.sd == 2.0);
    CHECK_FALSE(spec_back.param_law.fixed);
    spec.param_law.fixed = PhysicianParams{0.5, 1.0, 2.0};
    CHECK(population_spec_from_json(to_json(spec)).param_law.fixed->sigma_eta == 2.0);
}

TEST_CASE("command line workflow") {
    const auto dir = scratch_dir("cli");
    nlohmann::json spec = {{"n_physicians", 2},
                           {"patients_per_physician", 150},
                           {"seed", 5},
                           {"params", {{"fixed", {{"beta", 0.56}, {"sigma_xi", 6.38}, {"sigma_eta", 2.18}}}}}};
    write_json_file(dir / "spec.json", spec);
    nlohmann::json cfg = {{"r_count", 100}, {"restarts", 0}, {"min_observations", 50}, {"welfare_step", 0.05}};
    write_json_file(dir / "run.json", cfg);
    const std::string patients = (dir / "patients.csv").string();
    const std::string truth = (dir / "truth.csv").string();

    REQUIRE(run({"simulate", "--config", (dir / "spec.json").string(), "--out", patients, "--truth", truth}) == kExitOk);
    CHECK(parse_patients_csv(patients).size() == 300);
    CHECK(fs::exists(patients + ".meta.json"));
    CHECK(read_json_file(patients + ".meta.json").at("command").get<std::string>().rfind("simulate", 0) == 0);

    const std::string e1 = (dir / "e1.csv").string();
    const std::string e2 = (dir / "e2.csv").string();
    const std::string conf = (dir / "run.json").string();
    REQUIRE(run({"estimate", "--patients", patients, "--out", e1, "--config", conf}) == kExitOk);
    REQUIRE(run({"estimate", "--patients", patients, "--out", e2, "--config", conf, "--threads", "2"}) == kExitOk);
    CHECK(slurp(e1) == slurp(e2));
    CHECK(read_estimates_csv(e1).size() == 2);

    const std::string welfare = (dir / "welfare.csv").string();
    REQUIRE(run({"welfare", "--patients", patients, "--estimates", truth, "--out", welfare, "--config", conf}) ==
            kExitOk);
    std::ifstream in(welfare);
    std::string line;
    std::getline(in, line);
    CHECK(line == "beta_s,w_policy1,w_policy2,w_policy3");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        const double w3 = std::stod(line.substr(line.rfind(',') + 1));
        CHECK(w3 >= 0.0);
    }
    CHECK(rows == 21);

    std::string summary;
    const std::string cf = (dir / "cf.json").string();
    REQUIRE(run({"counterfactual", "--patients", patients, "--estimates", truth, "--out", cf}, &summary) == kExitOk);
    CHECK_FALSE(summary.empty());
    CHECK(read_json_file(cf).is_object());

    const std::string diag = (dir / "diag.json").string();
    CHECK(run({"diagnose", "--patients", patients, "--out", diag}) == kExitOk);
    CHECK(run({"fit-moments", "--patients", patients, "--estimates", truth, "--out", (dir / "fm.csv").string()}) ==
          kExitOk);
    CHECK(run({"sensitivity", "--patients", patients, "--out", (dir / "sens.csv").string()}) == kExitOk);

    CHECK(run({"estimate", "--patients", patients, "--out", e1, "--bogus"}) == kExitValidation);
    CHECK(run({"frobnicate"}) == kExitValidation);
    CHECK(run({"estimate", "--patients", (dir / "missing.csv").string(), "--out", e1}) == kExitValidation);
    std::ofstream(dir / "broken.csv") << "physician_id,patient_id,risk,y,d\nA,1,0.5,3,0\n";
    CHECK(run({"diagnose", "--patients", (dir / "broken.csv").string(), "--out", diag}) == kExitValidation);
    CHECK(run({"counterfactual", "--patients", patients, "--estimates", truth, "--out", cf, "--target", "50"}) ==
          kExitValidation);
}
