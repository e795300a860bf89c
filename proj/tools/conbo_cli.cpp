// Command-line front end: run experiments, precompute oracle tables, and
// aggregate run CSVs into medians with interquartile bands.

#include <conbo/harness.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace {

int cmd_run(const std::string& config_path, const std::string& out_override, int jobs)
{
    conbo::ExperimentConfig cfg = conbo::parse_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    auto t0 = std::chrono::steady_clock::now();
    conbo::RunSummary summary = conbo::run_experiment(cfg, jobs);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    int suggestions = std::max(1, cfg.budget * cfg.replications);
    std::cout << "wrote " << summary.records.size() << " records to " << summary.csv_path << " ("
              << secs << " s, ~" << 1000.0 * secs / suggestions << " ms per evaluation)\n";
    if (summary.failed_replications > 0) {
        std::cerr << summary.failed_replications << " replication(s) failed\n";
        return 3;
    }
    return 0;
}

int cmd_oracle(const std::string& problem, double width, int grid, int reps,
               const std::string& out)
{
    conbo::ConditionalProblem prob = conbo::make_problem(problem, width);
    Eigen::MatrixXd states = prob.density.quantile_grid(grid);
    conbo::OracleTable table;
    if (prob.true_mean) {
        table = conbo::synthetic_oracle(problem, width, states);
    } else {
        table = conbo::simulator_oracle(prob, states, reps, 40, 20240);
    }
    conbo::write_oracle(table, out);
    std::cout << "wrote " << table.size() << " oracle rows to " << out << "\n";
    return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out)
{
    auto rows = conbo::report_directory(in_dir, out);
    std::cout << "wrote " << rows.size() << " summary rows to " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"conditional Bayesian optimization experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    int jobs = 1;
    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("--config", config_path, "key = value config file")->required();
    run->add_option("--out", out_dir, "override the output directory");
    run->add_option("--jobs", jobs, "parallel replications");

    std::string problem, oracle_out;
    double width = 1.0;
    int grid = 11, reps = 1000;
    auto* oracle = app.add_subcommand("oracle", "precompute a per-state oracle table");
    oracle->add_option("--problem", problem, "problem id")->required();
    oracle->add_option("--width", width, "state-space width (synthetics)");
    oracle->add_option("--grid", grid, "quantile grid points per state dimension")->required();
    oracle->add_option("--reps", reps, "replications per evaluation (simulators)");
    oracle->add_option("--out", oracle_out, "output CSV path")->required();

    std::string report_in, report_out;
    auto* report = app.add_subcommand("report", "summarize run CSVs");
    report->add_option("--in", report_in, "directory of run CSVs")->required();
    report->add_option("--out", report_out, "summary CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, jobs);
        if (oracle->parsed()) return cmd_oracle(problem, width, grid, reps, oracle_out);
        if (report->parsed()) return cmd_report(report_in, report_out);
    } catch (const conbo::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
