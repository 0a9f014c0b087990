// dbranch: command-line front end (solve, sample, eval, mechanism).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dbranch/code_algebra.hpp"
#include "dbranch/harness.hpp"

namespace {

using dbranch::RunConfig;
using nlohmann::json;

std::string slurp(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Run flags, collected as JSON so a config file can be overlaid by whatever was given on the command line.
struct RunFlags {
    std::string config_file;
    std::string problem, preset, activation, policy;
    std::size_t d = 0, N = 0, M = 0, P = 0, l = 0, m = 0, runs = 0, budget = 0, batch = 0;
    double T = 0, eta = 0, rate = 0;
    std::uint64_t seed = 0;
    int threads = 0;
    std::vector<std::pair<const char*, CLI::Option*>> given;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config_file, "JSON config file (flags win)")->check(CLI::ExistingFile);
        given = {
            {"problem", app->add_option("--problem", problem, "allen-cahn|exponential|burgers|merton|log-gradient-3|cosine-gradient-4")},
            {"preset", app->add_option("--preset", preset, "paper|desk")},
            {"d", app->add_option("--d", d, "space dimension")},
            {"T", app->add_option("--T", T, "terminal time")},
            {"N", app->add_option("--N", N, "training points")},
            {"M", app->add_option("--M", M, "trees per point")},
            {"P", app->add_option("--P", P, "training steps")},
            {"eta", app->add_option("--eta", eta, "learning rate")},
            {"l", app->add_option("--l", l, "network depth")},
            {"m", app->add_option("--m", m, "network width")},
            {"seed", app->add_option("--seed", seed, "random seed")},
            {"runs", app->add_option("--runs", runs, "independent repetitions")},
            {"activation", app->add_option("--activation", activation, "tanh|relu|identity")},
            {"lifetime_rate", app->add_option("--lifetime-rate", rate, "exponential branching rate")},
            {"nonfinite_policy", app->add_option("--nonfinite", policy, "propagate|discard")},
            {"tree_node_budget", app->add_option("--budget", budget, "max nodes per tree")},
            {"batch_size", app->add_option("--batch-size", batch, "mini-batch size (0 = full batch)")},
        };
        app->add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
    }

    json flag_json() const
    {
        json j = json::object();
        auto put = [&](const char* key, const auto& v) {
            for (const auto& [k, opt] : given)
                if (std::string(k) == key && opt->count() > 0) j[key] = v;
        };
        put("problem", problem);
        put("preset", preset);
        put("d", d);
        put("T", T);
        put("N", N);
        put("M", M);
        put("P", P);
        put("eta", eta);
        put("l", l);
        put("m", m);
        put("seed", seed);
        put("runs", runs);
        put("activation", activation);
        put("lifetime_rate", rate);
        put("nonfinite_policy", policy);
        put("tree_node_budget", budget);
        put("batch_size", batch);
        return j;
    }

    RunConfig config() const
    {
        RunConfig cfg;
        if (!config_file.empty()) {
            json file = json::parse(slurp(config_file));
            // report.json and samples.json carry the config under "config"
            if (file.contains("config") && file["config"].is_object()) file = file["config"];
            dbranch::apply_json(cfg, file);
        }
        dbranch::apply_json(cfg, flag_json());
        return cfg;
    }

    void apply_threads() const
    {
#ifdef _OPENMP
        if (threads > 0) omp_set_num_threads(threads);
#endif
    }
};

void print_report(const dbranch::EvaluationReport& report)
{
    const auto& c = report.config;
    std::printf("problem %s  d=%zu  T=%g  N=%zu  M=%zu  P=%zu  runs=%zu  seed=%llu\n", c.problem.c_str(), c.dim,
                c.horizon, c.N, c.M, c.P, c.runs, static_cast<unsigned long long>(c.seed));
    for (std::size_t k = 0; k < report.runs.size(); ++k) {
        const auto& r = report.runs[k];
        std::printf("run %zu: L1 %.6e  L2 %.6e  loss %.3e  sample %.2fs  train %.2fs  max tree %zu  discarded %zu\n",
                    k, r.l1, r.l2, r.final_loss, r.times.sample, r.times.train, r.diagnostics.max_tree_size,
                    r.diagnostics.discarded);
    }
    const auto l1 = report.l1();
    const auto l2 = report.l2();
    std::printf("L1 mean %.6e stdev %.3e | L2 mean %.6e stdev %.3e\n", l1.mean, l1.stdev, l2.mean, l2.stdev);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Deep branching solver for fully nonlinear PDEs"};
    app.require_subcommand(1);

    RunFlags solve_flags;
    std::string solve_outdir = "out";
    std::string solve_samples;
    auto* solve = app.add_subcommand("solve", "sample, train and evaluate on the grid");
    solve_flags.attach(solve);
    solve->add_option("--outdir", solve_outdir, "output directory");
    solve->add_option("--samples", solve_samples, "reuse a cached samples.csv")->check(CLI::ExistingFile);

    RunFlags sample_flags;
    std::string sample_outdir = "out";
    auto* sample = app.add_subcommand("sample", "generate and cache tree samples only");
    sample_flags.attach(sample);
    sample->add_option("--outdir", sample_outdir, "output directory");

    std::string model_path, eval_grid, eval_samples;
    auto* eval = app.add_subcommand("eval", "evaluate a saved model on the grid");
    eval->add_option("--model", model_path, "model.json")->required()->check(CLI::ExistingFile);
    eval->add_option("--grid", eval_grid, "write grid.csv here");
    eval->add_option("--samples", eval_samples, "samples.csv for the mc columns")->check(CLI::ExistingFile);

    std::string mech_problem, mech_code = "Id";
    std::size_t mech_d = 1;
    auto* mechanism = app.add_subcommand("mechanism", "print the mechanism M(c) of a code");
    mechanism->add_option("--problem", mech_problem, "problem name")->required();
    mechanism->add_option("--code", mech_code, "Id | f | f:(..) | f:a/b:(..) | phi:(..)");
    mechanism->add_option("--d", mech_d, "space dimension");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*solve) {
            solve_flags.apply_threads();
            dbranch::RunOptions opts;
            opts.outdir = solve_outdir;
            opts.samples_cache = solve_samples;
            const auto report = dbranch::run(solve_flags.config(), opts);
            print_report(report);
            std::printf("wrote %s\n", solve_outdir.c_str());
        } else if (*sample) {
            sample_flags.apply_threads();
            const auto rc = dbranch::resolve(sample_flags.config());
            const auto problem = dbranch::make_problem(rc.problem, rc.problem_options());
            const auto batch = dbranch::generate_samples(*problem, rc, rc.seed);
            dbranch::write_sample_cache(sample_outdir, batch, rc);
            const auto& d = batch.diagnostics;
            std::printf("%zu points x %zu trees  max tree %zu  non-finite %zu  discarded %zu\n", batch.size(),
                        batch.draws, d.max_tree_size, d.nonfinite_count, d.discarded);
            std::printf("wrote %s/samples.csv\n", sample_outdir.c_str());
            if (d.failed) {
                std::fprintf(stderr, "error: non-finite draws under the propagate policy\n");
                return 1;
            }
        } else if (*eval) {
            const std::string text = slurp(model_path);
            const auto model = dbranch::load_network(text);
            const json j = json::parse(text);
            if (!j.contains("provenance") || !j["provenance"].contains("config"))
                throw std::runtime_error("model file has no embedded config; cannot tell which problem it solves");
            const auto rc = dbranch::resolve(dbranch::config_from_json(j["provenance"]["config"]));
            if (!(model.arch == rc.arch())) throw std::runtime_error("model architecture does not match its config");
            const auto problem = dbranch::make_problem(rc.problem, rc.problem_options());
            std::optional<dbranch::SampleBatch> batch;
            if (!eval_samples.empty()) batch = dbranch::read_sample_cache(eval_samples);
            const auto grid = dbranch::evaluate_grid(*problem, model, batch ? &*batch : nullptr);
            std::vector<double> truth, predicted;
            for (const auto& g : grid) {
                truth.push_back(g.truth);
                predicted.push_back(g.predicted);
            }
            std::printf("problem %s  L1 %.6e  L2 %.6e\n", rc.problem.c_str(), dbranch::lp_error(truth, predicted, 1),
                        dbranch::lp_error(truth, predicted, 2));
            if (!eval_grid.empty()) {
                std::ofstream os(eval_grid, std::ios::binary);
                if (!os) throw std::runtime_error("cannot write " + eval_grid);
                dbranch::write_grid_csv(grid, os, j["provenance"].dump());
            }
        } else if (*mechanism) {
            const auto problem = dbranch::make_problem(mech_problem, {mech_d, std::nullopt});
            const auto code = dbranch::parse_code(mech_code, problem->signature());
            dbranch::MechanismTable table(problem->signature(), problem->diffusivity());
            std::fputs(dbranch::dump_mechanism(table.get(code)).c_str(), stdout);
        }
    } catch (const dbranch::StageError& e) {
        std::fprintf(stderr, "error in stage %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
