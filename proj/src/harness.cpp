#include "dbranch/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace dbranch {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string policy_name(NonfinitePolicy p) { return p == NonfinitePolicy::Propagate ? "propagate" : "discard"; }

NonfinitePolicy parse_policy(const std::string& s)
{
    if (s == "propagate") return NonfinitePolicy::Propagate;
    if (s == "discard" || s == "discard-and-report") return NonfinitePolicy::DiscardAndReport;
    throw std::invalid_argument("unknown nonfinite policy '" + s + "'");
}

// desk preset: small enough for a laptop core in minutes
constexpr std::size_t kDeskN = 200;
constexpr std::size_t kDeskM = 2000;
constexpr std::size_t kDeskP = 600;

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void apply_json(RunConfig& cfg, const json& j)
{
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "problem") cfg.problem = v.get<std::string>();
        else if (key == "preset") cfg.preset = v.get<std::string>();
        else if (key == "d") cfg.dim = v.get<std::size_t>();
        else if (key == "T") cfg.horizon = v.get<double>();
        else if (key == "N") cfg.N = v.get<std::size_t>();
        else if (key == "M") cfg.M = v.get<std::size_t>();
        else if (key == "P") cfg.P = v.get<std::size_t>();
        else if (key == "eta") cfg.eta = v.get<double>();
        else if (key == "l") cfg.layers = v.get<std::size_t>();
        else if (key == "m") cfg.width = v.get<std::size_t>();
        else if (key == "activation") cfg.activation = v.get<std::string>();
        else if (key == "lifetime_rate") cfg.lifetime_rate = v.get<double>();
        else if (key == "batch_size") cfg.batch_size = v.get<std::size_t>();
        else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
        else if (key == "runs") cfg.runs = v.get<std::size_t>();
        else if (key == "nonfinite_policy") cfg.nonfinite_policy = parse_policy(v.get<std::string>());
        else if (key == "tree_node_budget") cfg.tree_node_budget = v.get<std::size_t>();
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

RunConfig config_from_json(const json& j)
{
    RunConfig cfg;
    apply_json(cfg, j);
    return cfg;
}

json ResolvedConfig::to_json() const
{
    return json{{"problem", problem},
                {"preset", preset},
                {"d", dim},
                {"T", horizon},
                {"N", N},
                {"M", M},
                {"P", P},
                {"eta", eta},
                {"l", layers},
                {"m", width},
                {"activation", activation},
                {"lifetime_rate", lifetime_rate},
                {"batch_size", batch_size},
                {"seed", seed},
                {"runs", runs},
                {"nonfinite_policy", policy_name(nonfinite_policy)},
                {"tree_node_budget", tree_node_budget}};
}

SamplerConfig ResolvedConfig::sampler_config(std::uint64_t run_seed) const
{
    return {run_seed, tree_node_budget, nonfinite_policy, lifetime_rate};
}

NetworkArch ResolvedConfig::arch() const { return {dim + 1, layers, width, parse_activation(activation)}; }

TrainConfig ResolvedConfig::train_config(std::uint64_t run_seed) const
{
    TrainConfig t;
    t.steps = P;
    t.learning_rate = eta;
    t.batch_size = batch_size;
    t.seed = run_seed;
    return t;
}

ResolvedConfig resolve(const RunConfig& cfg)
{
    if (cfg.preset != "paper" && cfg.preset != "desk")
        throw std::invalid_argument("unknown preset '" + cfg.preset + "' (paper|desk)");
    const auto problem = make_problem(cfg.problem, {cfg.dim, cfg.horizon});
    const bool desk = cfg.preset == "desk";
    ResolvedConfig r;
    r.problem = cfg.problem;
    r.preset = cfg.preset;
    r.dim = problem->dim();
    r.horizon = problem->horizon();
    const std::size_t full_m = problem->defaults().samples_per_point;
    r.N = cfg.N.value_or(desk ? kDeskN : 1000);
    r.M = cfg.M.value_or(desk ? std::min(full_m, kDeskM) : full_m);
    r.P = cfg.P.value_or(desk ? kDeskP : 3000);
    r.eta = cfg.eta.value_or(0.01);
    r.layers = cfg.layers.value_or(6);
    r.width = cfg.width.value_or(20);
    r.activation = activation_name(parse_activation(cfg.activation.value_or(problem->defaults().activation)));
    r.lifetime_rate = cfg.lifetime_rate.value_or(LifetimeDistribution::for_horizon(r.horizon).rate);
    r.batch_size = cfg.batch_size.value_or(0);
    r.seed = cfg.seed;
    r.runs = cfg.runs;
    r.nonfinite_policy = cfg.nonfinite_policy;
    r.tree_node_budget = cfg.tree_node_budget;
    if (r.N < 1 || r.M < 1) throw std::invalid_argument("N and M must be >= 1");
    if (r.runs < 1) throw std::invalid_argument("runs must be >= 1");
    if (!(r.eta > 0.0)) throw std::invalid_argument("eta must be positive");
    if (r.layers < 1 || r.width < 1) throw std::invalid_argument("l and m must be >= 1");
    if (!(r.lifetime_rate > 0.0)) throw std::invalid_argument("lifetime rate must be positive");
    return r;
}

std::uint64_t repetition_seed(std::uint64_t seed, std::size_t k)
{
    return k == 0 ? seed : mix_seed(mix_seed(seed, seed_purpose::kRepetition), k);
}

std::vector<SamplePoint> evaluation_grid(const Problem& problem)
{
    std::vector<SamplePoint> grid(101);
    const double dx = (problem.x_max() - problem.x_min()) / 100.0;
    for (std::size_t i = 0; i <= 100; ++i) {
        grid[i].tau = 0.0;
        grid[i].x.assign(problem.dim(), problem.x_mid());
        grid[i].x[0] = i == 100 ? problem.x_max() : problem.x_min() + static_cast<double>(i) * dx;
    }
    return grid;
}

double lp_error(std::span<const double> truth, std::span<const double> predicted, int p)
{
    if (truth.size() != predicted.size()) throw std::invalid_argument("lp_error: length mismatch");
    if (p < 1) throw std::invalid_argument("lp_error: p must be >= 1");
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) sum += std::pow(std::abs(truth[i] - predicted[i]), p);
    return sum / 100.0;
}

Summary summarize(const std::vector<double>& v)
{
    Summary s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

Summary EvaluationReport::l1() const
{
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.l1);
    return summarize(v);
}

Summary EvaluationReport::l2() const
{
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.l2);
    return summarize(v);
}

namespace {

json summary_json(const Summary& s) { return {{"mean", s.mean}, {"stdev", s.stdev}}; }

// `max_failures` bounds the listed failures (reports list a few; the sample sidecar keeps all)
json diagnostics_json(const SampleDiagnostics& d, std::size_t max_failures = 10)
{
    json failures = json::array();
    for (std::size_t k = 0; k < std::min(d.failures.size(), max_failures); ++k)
        failures.push_back({{"i", d.failures[k].i}, {"j", d.failures[k].j}, {"what", d.failures[k].what}});
    return {{"nonfinite", d.nonfinite_count},
            {"discarded", d.discarded},
            {"domain_failures", d.failures.size()},
            {"first_failures", failures},
            {"max_tree_size", d.max_tree_size},
            {"tree_size_histogram_log2", d.tree_size_histogram}};
}

SampleDiagnostics diagnostics_from_json(const json& j, NonfinitePolicy policy)
{
    SampleDiagnostics d;
    d.nonfinite_count = j.at("nonfinite").get<std::size_t>();
    d.discarded = j.at("discarded").get<std::size_t>();
    d.max_tree_size = j.at("max_tree_size").get<std::size_t>();
    d.tree_size_histogram = j.at("tree_size_histogram_log2").get<std::vector<std::uint64_t>>();
    for (const auto& f : j.at("first_failures"))
        d.failures.push_back({f.at("i").get<std::size_t>(), f.at("j").get<std::size_t>(), f.at("what").get<std::string>()});
    if (d.failures.size() != j.at("domain_failures").get<std::size_t>())
        throw std::runtime_error("sample sidecar lists an incomplete failure set");
    d.failed = policy == NonfinitePolicy::Propagate && d.nonfinite_count > 0;
    return d;
}

}  // namespace

json EvaluationReport::to_json() const
{
    json runs_json = json::array();
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto& r = runs[k];
        json grid = json::array();
        for (const auto& g : r.grid) grid.push_back({g.x1, g.truth, g.predicted, g.mc_mean, g.mc_stderr});
        runs_json.push_back({{"run", k},
                             {"seed", r.seed},
                             {"l1", r.l1},
                             {"l2", r.l2},
                             {"final_loss", r.final_loss},
                             {"training_points", r.training_points},
                             {"sampling", diagnostics_json(r.diagnostics)},
                             {"grid_columns", {"x_1", "true", "predicted", "mc_mean", "mc_stderr"}},
                             {"grid", std::move(grid)}});
    }
    return {{"status", "ok"},
            {"config", config.to_json()},
            {"aggregate", {{"l1", summary_json(l1())}, {"l2", summary_json(l2())}}},
            {"runs", std::move(runs_json)}};
}

json EvaluationReport::timing_json() const
{
    json per_run = json::array();
    std::vector<double> sample, train, total;
    for (const auto& r : runs) {
        per_run.push_back({{"sample", r.times.sample}, {"train", r.times.train}, {"evaluate", r.times.evaluate}});
        sample.push_back(r.times.sample);
        train.push_back(r.times.train);
        total.push_back(r.times.sample + r.times.train);
    }
    return {{"config", config.to_json()},
            {"unit", "seconds"},
            {"runs", per_run},
            {"aggregate",
             {{"sample", summary_json(summarize(sample))},
              {"train", summary_json(summarize(train))},
              {"sample_plus_train", summary_json(summarize(total))}}}};
}

SampleBatch generate_samples(const Problem& problem, const ResolvedConfig& cfg, std::uint64_t run_seed)
{
    const auto points = sample_points(problem, cfg.N, run_seed);
    return batch_estimate(problem, points, cfg.M, cfg.sampler_config(run_seed));
}

void training_data(const SampleBatch& batch, Eigen::MatrixXd& inputs, Eigen::RowVectorXd& targets)
{
    std::vector<std::size_t> keep;
    std::vector<double> means(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        means[i] = batch.mean(i);
        if (std::isfinite(means[i])) keep.push_back(i);
    }
    const std::size_t d = batch.points.empty() ? 0 : batch.points[0].x.size();
    inputs.resize(static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(keep.size()));
    targets.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
        const auto& p = batch.points[keep[c]];
        const auto col = static_cast<Eigen::Index>(c);
        inputs(0, col) = p.tau;
        for (std::size_t k = 0; k < d; ++k) inputs(static_cast<Eigen::Index>(k + 1), col) = p.x[k];
        targets(col) = means[keep[c]];
    }
}

std::vector<GridRow> evaluate_grid(const Problem& problem, const NetworkParams& model, const SampleBatch* batch)
{
    const auto grid = evaluation_grid(problem);
    std::vector<GridRow> rows(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        auto& row = rows[g];
        row.x1 = grid[g].x[0];
        row.truth = problem.exact_solution(grid[g].tau, grid[g].x);
        row.predicted = forward_eval(model, grid[g].tau, grid[g].x);
        row.mc_mean = row.mc_stderr = std::numeric_limits<double>::quiet_NaN();
        if (batch && batch->size() > 0) {
            std::size_t best = 0;
            double best_dist = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < batch->size(); ++i) {
                double dist = 0.0;
                for (std::size_t k = 0; k < grid[g].x.size(); ++k) {
                    const double delta = batch->points[i].x[k] - grid[g].x[k];
                    dist += delta * delta;
                }
                if (dist < best_dist) {
                    best_dist = dist;
                    best = i;
                }
            }
            row.mc_mean = batch->mean(best);
            row.mc_stderr = batch->standard_error(best);
        }
    }
    return rows;
}

void write_grid_csv(const std::vector<GridRow>& grid, std::ostream& os, const std::string& comment)
{
    if (!comment.empty()) os << "# " << comment << '\n';
    os << "x_1,true,predicted,mc_mean,mc_stderr\n";
    char buf[160];
    for (const auto& r : grid) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.x1, r.truth, r.predicted, r.mc_mean,
                      r.mc_stderr);
        os << buf;
    }
}

namespace {

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

void write_sample_cache(const fs::path& dir, const SampleBatch& batch, const ResolvedConfig& cfg)
{
    fs::create_directories(dir);
    const std::string provenance = json{{"config", cfg.to_json()}}.dump();
    {
        std::ofstream os(dir / "samples.csv", std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (dir / "samples.csv").string());
        write_samples_csv(batch, os, provenance);
    }
    const json sidecar = {{"config", cfg.to_json()},
                          {"N", batch.size()},
                          {"M", batch.draws},
                          {"nonfinite_policy", policy_name(batch.policy)},
                          {"diagnostics", diagnostics_json(batch.diagnostics, batch.diagnostics.failures.size())}};
    write_text(dir / "samples.json", sidecar.dump(1) + "\n");
}

SampleBatch read_sample_cache(const fs::path& csv)
{
    std::ifstream is(csv, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + csv.string());
    SampleBatch batch = read_samples_csv(is);
    fs::path sidecar = csv;
    sidecar.replace_extension(".json");
    if (fs::exists(sidecar)) {
        const json j = json::parse(read_text(sidecar));
        batch.policy = parse_policy(j.value("nonfinite_policy", "propagate"));
        if (j.contains("diagnostics")) batch.diagnostics = diagnostics_from_json(j["diagnostics"], batch.policy);
    } else {
        // bare CSV: only what the values themselves say
        for (double v : batch.values) batch.diagnostics.nonfinite_count += std::isfinite(v) ? 0 : 1;
        batch.diagnostics.failed = batch.diagnostics.nonfinite_count > 0;
    }
    return batch;
}

EvaluationReport run(const RunConfig& cfg, const RunOptions& opts)
{
    EvaluationReport report;
    try {
        report.config = resolve(cfg);
    } catch (const std::exception& e) {
        throw StageError("resolve", e.what());
    }
    const ResolvedConfig& rc = report.config;
    if (!opts.samples_cache.empty() && rc.runs != 1)
        throw StageError("resolve", "a sample cache can only feed a single run");

    auto fail = [&](const std::string& stage, const std::string& what) {
        if (!opts.outdir.empty()) {
            try {
                fs::create_directories(opts.outdir);
                json j = {{"status", "failed"}, {"stage", stage}, {"error", what}, {"config", rc.to_json()}};
                write_text(opts.outdir / "report.json", j.dump(1) + "\n");
            } catch (...) {
            }
        }
        throw StageError(stage, what);
    };

    const auto problem = make_problem(rc.problem, rc.problem_options());
    for (std::size_t k = 0; k < rc.runs; ++k) {
        RunResult result;
        result.seed = repetition_seed(rc.seed, k);
        const fs::path dir = opts.outdir.empty() ? fs::path{}
                             : rc.runs == 1      ? opts.outdir
                                                 : opts.outdir / ("run-" + std::to_string(k));
        const std::string run_provenance =
            json{{"config", rc.to_json()}, {"run", k}, {"run_seed", result.seed}}.dump();

        SampleBatch batch;
        auto t0 = std::chrono::steady_clock::now();
        try {
            if (!opts.samples_cache.empty()) {
                batch = read_sample_cache(opts.samples_cache);
                if (batch.size() != rc.N || batch.draws != rc.M)
                    throw std::runtime_error("cached samples have N=" + std::to_string(batch.size()) +
                                             ", M=" + std::to_string(batch.draws) + " but the config asks for N=" +
                                             std::to_string(rc.N) + ", M=" + std::to_string(rc.M));
                if (batch.points[0].x.size() != rc.dim) throw std::runtime_error("cached samples have the wrong d");
            } else {
                batch = generate_samples(*problem, rc, result.seed);
            }
            if (batch.diagnostics.failed)
                throw std::runtime_error(std::to_string(batch.diagnostics.nonfinite_count) +
                                         " non-finite tree draw(s) under the propagate policy");
        } catch (const std::exception& e) {
            fail("sample", e.what());
        }
        result.times.sample = seconds_since(t0);
        result.diagnostics = batch.diagnostics;

        t0 = std::chrono::steady_clock::now();
        try {
            Eigen::MatrixXd inputs;
            Eigen::RowVectorXd targets;
            training_data(batch, inputs, targets);
            result.training_points = static_cast<std::size_t>(targets.size());
            if (targets.size() == 0) throw std::runtime_error("no point has a finite Monte Carlo mean");
            auto trained = train(init_network(rc.arch(), result.seed), inputs, targets, rc.train_config(result.seed));
            result.model = std::move(trained.params);
            result.train_log = std::move(trained.log);
            result.final_loss = result.train_log.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                         : result.train_log.back().loss;
        } catch (const std::exception& e) {
            fail("train", e.what());
        }
        result.times.train = seconds_since(t0);

        t0 = std::chrono::steady_clock::now();
        try {
            result.grid = evaluate_grid(*problem, result.model, &batch);
            std::vector<double> truth, predicted;
            for (const auto& g : result.grid) {
                truth.push_back(g.truth);
                predicted.push_back(g.predicted);
            }
            result.l1 = lp_error(truth, predicted, 1);
            result.l2 = lp_error(truth, predicted, 2);
        } catch (const std::exception& e) {
            fail("evaluate", e.what());
        }
        result.times.evaluate = seconds_since(t0);

        if (!dir.empty()) {
            try {
                if (opts.samples_cache.empty()) write_sample_cache(dir, batch, rc);
                fs::create_directories(dir);
                write_text(dir / "model.json", save_network(result.model, run_provenance));
                std::ostringstream grid, log;
                write_grid_csv(result.grid, grid, run_provenance);
                write_text(dir / "grid.csv", grid.str());
                log << "# " << run_provenance << '\n';
                write_train_log_csv(result.train_log, log);
                write_text(dir / "train_log.csv", log.str());
            } catch (const std::exception& e) {
                fail("write", e.what());
            }
        }
        report.runs.push_back(std::move(result));
    }

    if (!opts.outdir.empty()) {
        try {
            fs::create_directories(opts.outdir);
            write_text(opts.outdir / "report.json", report.to_json().dump(1) + "\n");
            write_text(opts.outdir / "timing.json", report.timing_json().dump(1) + "\n");
        } catch (const std::exception& e) {
            fail("write", e.what());
        }
    }
    return report;
}

}  // namespace dbranch
