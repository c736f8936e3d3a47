#include "safeopt/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace safeopt;
using exp::json;

namespace {

json quad_doc() {
    return json::parse(R"({
      "benchmark": "quad", "seed": 3, "beta": 2.0, "j_min": 0.0,
      "kernels": [{"lengthscales": [1.0, 1.0], "signal_variance": 4.0, "noise_variance": 1e-6}],
      "initial_safe_set": [[0.0, 0.0], [0.3, -0.3]],
      "reform": {"max_iterations": 4, "initial_mesh": 0.25, "mesh_tolerance": 1e-3, "multistart_count": 2},
      "grid": {"counts": [9, 9], "max_iterations": 3}
    })");
}

std::string error_of(const json& doc, const std::vector<std::string>& needs = {}) {
    try {
        exp::parse_config(doc, needs);
    } catch (const exp::ConfigError& e) {
        return e.what();
    }
    return "";
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);) rows.push_back(split_csv_line(line));
    return rows;
}

std::string trace_text(const exp::RunConfig& cfg, const exp::RunOutcome& o) {
    std::ostringstream os;
    write_trace_csv(os, o.trace, cfg.dim(), cfg.gp_count());
    return os.str();
}

}  // namespace

TEST(Config, ParsesQuadDocument) {
    const auto cfg = exp::parse_config(quad_doc());
    EXPECT_EQ(cfg.benchmark, exp::Benchmark::Quadratic);
    EXPECT_EQ(cfg.seed, 3u);
    ASSERT_EQ(cfg.model.kernels.size(), 3u);  // shared entry expanded
    EXPECT_EQ(cfg.model.noise_variances, (std::vector<double>{1e-6, 1e-6, 1e-6}));
    EXPECT_EQ(cfg.initial_safe_set.size(), 2u);
    EXPECT_EQ(cfg.reform.max_iterations, 4u);
    EXPECT_EQ(cfg.reform.subproblem.multistart_count, 2u);
    EXPECT_EQ(cfg.grid_counts, (std::vector<std::size_t>{9, 9}));
}

TEST(Config, PidDefaultsToTableOneStarts) {
    auto doc = quad_doc();
    doc["benchmark"] = "pid";
    doc.erase("initial_safe_set");
    doc.erase("grid");
    doc["kernels"][0]["lengthscales"] = {40.0, 10.0, 10.0};
    const auto cfg = exp::parse_config(doc);
    ASSERT_EQ(cfg.initial_safe_set.size(), 4u);
    EXPECT_EQ(cfg.initial_safe_set[0], make_point({10.0, 0.0, 5.0}));
    EXPECT_EQ(cfg.model.kernels.size(), 2u);
}

TEST(Config, MissingFieldsNamed) {
    auto doc = quad_doc();
    doc.erase("seed");
    EXPECT_EQ(error_of(doc), "missing field 'seed'");
    doc = quad_doc();
    doc["kernels"][0].erase("noise_variance");
    EXPECT_EQ(error_of(doc), "missing field 'kernels[0].noise_variance'");
    doc = quad_doc();
    doc.erase("initial_safe_set");
    EXPECT_EQ(error_of(doc), "missing field 'initial_safe_set'");
    doc = quad_doc();
    EXPECT_EQ(error_of(doc, {"sweep"}), "missing field 'sweep'");
    doc.erase("grid");
    EXPECT_EQ(error_of(doc, {"grid"}), "missing field 'grid'");
}

TEST(Config, UnknownFieldsRejected) {
    auto doc = quad_doc();
    doc["betta"] = 2.0;
    EXPECT_EQ(error_of(doc), "unknown field 'betta'");
    doc = quad_doc();
    doc["reform"]["mesh_tol"] = 1e-3;
    EXPECT_EQ(error_of(doc), "unknown field 'reform.mesh_tol'");
}

TEST(Config, WrongTypesAndValues) {
    auto doc = quad_doc();
    doc["seed"] = "one";
    EXPECT_EQ(error_of(doc), "field 'seed': expected a nonnegative integer");
    doc = quad_doc();
    doc["seed"] = -1;
    EXPECT_EQ(error_of(doc), "field 'seed': expected a nonnegative integer");
    doc = quad_doc();
    doc["seed"] = 1.5;
    EXPECT_EQ(error_of(doc), "field 'seed': expected a nonnegative integer");
    doc = quad_doc();
    doc["kernels"][0]["lengthscales"] = {1.0, 1.0, 1.0};
    EXPECT_EQ(error_of(doc), "field 'kernels[0].lengthscales': expected 2 components");
    doc = quad_doc();
    doc["kernels"] = json::array({doc["kernels"][0], doc["kernels"][0]});
    EXPECT_NE(error_of(doc).find("field 'kernels'"), std::string::npos);
    doc = quad_doc();
    doc["beta"] = 0.0;
    EXPECT_NE(error_of(doc).find("field 'beta'"), std::string::npos);
    doc = quad_doc();
    doc["pid"] = json::object();
    EXPECT_EQ(error_of(doc), "field 'pid': only valid for the pid benchmark");
    doc = quad_doc();
    doc["reform"]["mesh_tolerance"] = 1.0;  // above the initial mesh
    EXPECT_FALSE(error_of(doc).empty());
}

TEST(Config, PositiveConstraintFloorRejected) {
    auto doc = quad_doc();
    doc["benchmark"] = "pid";
    doc.erase("initial_safe_set");
    doc.erase("grid");
    doc["kernels"][0]["lengthscales"] = {40.0, 10.0, 10.0};
    doc["pid"] = {{"constraint_floor", 0.5}};
    EXPECT_NE(error_of(doc).find("pid.constraint_floor"), std::string::npos);
}

TEST(Config, SyntaxErrorCarriesLineAndColumn) {
    try {
        exp::parse_json_text("{\n  \"seed\": ,\n}", "c.json");
        FAIL();
    } catch (const exp::ConfigError& e) {
        EXPECT_EQ(std::string(e.what()), "c.json:2:11: JSON syntax error");
    }
}

TEST(Config, SeedOverrideUpdatesEcho) {
    auto cfg = exp::parse_config(quad_doc());
    exp::set_seed(cfg, 42);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.echo["seed"], 42);
}

TEST(Runs, RerunIsIdenticalApartFromTimings) {
    const auto cfg = exp::parse_config(quad_doc());
    const auto a = csv_rows(trace_text(cfg, exp::run_config(cfg)));
    const auto b = csv_rows(trace_text(cfg, exp::run_config(cfg)));
    ASSERT_EQ(a.size(), b.size());
    ASSERT_GT(a.size(), 1u);
    const auto& header = a.front();
    for (std::size_t r = 0; r < a.size(); ++r) {
        ASSERT_EQ(a[r].size(), header.size());
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c].size() > 3 && header[c].ends_with("_ms")) continue;
            EXPECT_EQ(a[r][c], b[r][c]) << "row " << r << " column " << header[c];
        }
    }
}

TEST(Runs, TraceCsvRoundTrip) {
    const auto cfg = exp::parse_config(quad_doc());
    const auto o = exp::run_config(cfg);
    const auto rows = csv_rows(trace_text(cfg, o));
    ASSERT_EQ(rows.front(), trace_columns(2, 3));
    ASSERT_EQ(rows.size(), o.trace.records.size() + 1);
    for (std::size_t i = 0; i < o.trace.records.size(); ++i) {
        const auto& rec = o.trace.records[i];
        const auto& row = rows[i + 1];
        EXPECT_EQ(parse_number(row[0]), double(rec.n));
        EXPECT_EQ(parse_number(row[1]), rec.recommendation.point[0]);
        EXPECT_EQ(parse_number(row[2]), rec.recommendation.point[1]);
        EXPECT_EQ(row[3], to_string(rec.recommendation.source));
        EXPECT_EQ(parse_number(row[5]), rec.recommendation.width);
        EXPECT_EQ(parse_number(row[9]), rec.observation[0]);
    }
    EXPECT_TRUE(o.model_safe);
}

TEST(Runs, SummaryCsvRoundTrip) {
    const auto cfg = exp::parse_config(quad_doc());
    const auto runs = exp::compare(cfg);
    ASSERT_EQ(runs.size(), 2u);
    EXPECT_EQ(runs[0].algorithm, "grid");
    EXPECT_EQ(runs[1].algorithm, "reform");
    std::vector<exp::SummaryRow> rows;
    for (const auto& r : runs) rows.push_back(exp::summary_row(cfg, r));
    std::ostringstream os;
    exp::write_summary_csv(os, rows, 2);
    const auto parsed = csv_rows(os.str());
    ASSERT_EQ(parsed.front(), exp::summary_columns(2));
    ASSERT_EQ(parsed.size(), 3u);
    EXPECT_EQ(parsed[1][5], "81");  // grid points
    EXPECT_EQ(parsed[1][3], "nan");
    EXPECT_EQ(parse_number(parsed[2][3]), 1e-3);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(parse_number(parsed[i + 1][6]), rows[i].solution[0]);
        EXPECT_EQ(parse_number(parsed[i + 1][8]), rows[i].objective);
        EXPECT_EQ(parsed[i + 1].back(), rows[i].stop_reason);
    }
}

TEST(Runs, CompareSharesInitialData) {
    auto doc = quad_doc();
    doc["quad"] = {{"noise_std", {0.01, 0.01, 0.01}}};
    const auto cfg = exp::parse_config(doc);
    const auto a = exp::initial_observations(cfg, exp::benchmark_oracle(cfg));
    const auto b = exp::initial_observations(cfg, exp::benchmark_oracle(cfg));
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values(0, 0), bench::quad_objective(make_point({0.0, 0.0})));  // noise present
    const auto runs = exp::compare(cfg);
    EXPECT_EQ(runs[0].best_initial_true_objective, runs[1].best_initial_true_objective);
}

TEST(Runs, SweepCellOrderHasMeshToleranceFastest) {
    auto doc = quad_doc();
    doc["sweep"] = {{"mesh_tolerance", {1e-4, 1e-2}}, {"initial_mesh", {0.25, 0.5}}, {"eps", {{0.0, 0.0}, {0.01, 0.01}}}};
    const auto cfg = exp::parse_config(doc, {"sweep"});
    const auto cells = exp::sweep_cells(cfg);
    ASSERT_EQ(cells.size(), 8u);
    EXPECT_EQ(cells[0].reform.subproblem.mesh_tolerance, 1e-4);
    EXPECT_EQ(cells[1].reform.subproblem.mesh_tolerance, 1e-2);
    EXPECT_EQ(cells[1].reform.eps_x, 0.0);
    EXPECT_EQ(cells[2].reform.eps_x, 0.01);
    EXPECT_EQ(cells[3].reform.subproblem.initial_mesh, 0.25);
    EXPECT_EQ(cells[4].reform.subproblem.initial_mesh, 0.5);
}

TEST(Runs, SweepParallelMatchesSerial) {
    auto doc = quad_doc();
    doc["sweep"] = {{"mesh_tolerance", {1e-3, 1e-2}}};
    const auto cfg = exp::parse_config(doc, {"sweep"});
    const auto serial = exp::sweep(cfg, 1);
    const auto parallel = exp::sweep(cfg, 2);
    ASSERT_EQ(serial.size(), parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(serial[i].trace.best_point, parallel[i].trace.best_point);
        EXPECT_EQ(serial[i].trace.iterations(), parallel[i].trace.iterations());
    }
}

TEST(Outputs, PidRunWritesAllFiles) {
    auto doc = quad_doc();
    doc["benchmark"] = "pid";
    doc.erase("initial_safe_set");
    doc.erase("grid");
    doc["kernels"] = json::parse(R"([
      {"lengthscales": [40, 10, 10], "signal_variance": 2500, "noise_variance": 1e-2},
      {"lengthscales": [40, 10, 10], "signal_variance": 4, "noise_variance": 1e-4}])");
    doc["reform"] = {{"max_iterations", 2}, {"initial_mesh", 8.0}, {"mesh_tolerance", 0.5}};
    doc["pid"] = {{"objective_offset", -100.0}};
    const auto cfg = exp::parse_config(doc);
    const auto o = exp::run_config(cfg);
    EXPECT_TRUE(o.trace.error.empty());
    const auto dir = std::filesystem::temp_directory_path() / "safeopt_experiment_test";
    std::filesystem::remove_all(dir);
    exp::write_run_outputs(dir, cfg, o);
    for (const char* f : {"trace.csv", "summary.json", "trajectory_initial.csv", "trajectory_final.csv"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    std::ifstream in(dir / "summary.json");
    const auto s = json::parse(in);
    EXPECT_EQ(s["iterations"], 2);
    EXPECT_EQ(s["benchmark"], "pid");
    EXPECT_EQ(s["penalty_sign"], "subtracted");
    EXPECT_EQ(s["config"]["seed"], 3);
    std::ifstream traj(dir / "trajectory_final.csv");
    std::string header;
    std::getline(traj, header);
    EXPECT_EQ(header, "t,speed,position,speed_setpoint,position_setpoint");
    std::filesystem::remove_all(dir);
}

TEST(GpCheck, PassesOnSmallBatch) {
    const auto rep = exp::gp_check(5, 20);
    EXPECT_EQ(rep.instances, 20u);
    EXPECT_TRUE(rep.pass());
}
