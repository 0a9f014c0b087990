#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbranch/network.hpp"
#include "dbranch/problem.hpp"
#include "dbranch/sampler.hpp"

namespace dbranch {

/// User-facing run settings. Unset fields resolve against the preset and
/// the problem defaults.
struct RunConfig {
    std::string problem = "allen-cahn";
    std::string preset = "paper";  ///< "paper" (full scale) or "desk"
    std::optional<std::size_t> dim;
    std::optional<double> horizon;
    std::optional<std::size_t> N, M, P;
    std::optional<double> eta;
    std::optional<std::size_t> layers, width;
    std::optional<std::string> activation;
    std::optional<double> lifetime_rate;
    std::optional<std::size_t> batch_size;
    std::uint64_t seed = 0;
    std::size_t runs = 1;
    NonfinitePolicy nonfinite_policy = NonfinitePolicy::Propagate;
    std::size_t tree_node_budget = 1'000'000;
};

/// Keys as in ResolvedConfig::to_json; unknown keys are rejected.
void apply_json(RunConfig& cfg, const nlohmann::json& j);

/// Every setting made concrete. to_json() is what gets embedded in outputs;
/// from_json(to_json()) resolves to the same run.
struct ResolvedConfig {
    std::string problem, preset;
    std::size_t dim = 1;
    double horizon = 0.0;
    std::size_t N = 0, M = 0, P = 0;
    double eta = 0.01;
    std::size_t layers = 6, width = 20;
    std::string activation;
    double lifetime_rate = 0.0;
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    std::size_t runs = 1;
    NonfinitePolicy nonfinite_policy = NonfinitePolicy::Propagate;
    std::size_t tree_node_budget = 0;

    nlohmann::json to_json() const;
    ProblemOptions problem_options() const { return {dim, horizon}; }
    SamplerConfig sampler_config(std::uint64_t run_seed) const;
    NetworkArch arch() const;
    TrainConfig train_config(std::uint64_t run_seed) const;
};

ResolvedConfig resolve(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

/// Seed of repetition k (k = 0 is the user seed itself).
std::uint64_t repetition_seed(std::uint64_t seed, std::size_t k);

/// (t = 0, x_1 = x_min + i (x_max - x_min)/100, x_mid, ..., x_mid), i = 0..100.
std::vector<SamplePoint> evaluation_grid(const Problem& problem);

/// 100^{-1} sum |true - predicted|^p over the grid (normalized by 100, not 101).
double lp_error(std::span<const double> truth, std::span<const double> predicted, int p);

struct GridRow {
    double x1 = 0.0, truth = 0.0, predicted = 0.0, mc_mean = 0.0, mc_stderr = 0.0;
};

struct StageTimes {
    double sample = 0.0, train = 0.0, evaluate = 0.0;
};

struct RunResult {
    std::uint64_t seed = 0;
    std::vector<GridRow> grid;
    double l1 = 0.0, l2 = 0.0;
    double final_loss = 0.0;
    std::size_t training_points = 0;
    SampleDiagnostics diagnostics;
    StageTimes times;
    NetworkParams model;
    std::vector<TrainLogEntry> train_log;
};

struct Summary {
    double mean = 0.0, stdev = 0.0;
};
Summary summarize(const std::vector<double>& v);

struct EvaluationReport {
    ResolvedConfig config;
    std::vector<RunResult> runs;

    Summary l1() const;
    Summary l2() const;
    /// Deterministic content: config, per-run errors, diagnostics, aggregates.
    nlohmann::json to_json() const;
    /// Wall-clock per stage, per run and aggregated.
    nlohmann::json timing_json() const;
};

/// A pipeline stage failed; `stage` is one of resolve, sample, train, evaluate, write.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage))
    {
    }
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct RunOptions {
    std::filesystem::path outdir;        ///< empty: nothing is written
    std::filesystem::path samples_cache;  ///< reuse this samples.csv (single run only)
};

/// sample -> train -> evaluate for each repetition; writes artifacts when
/// outdir is set (a failing run leaves report.json with the failed stage).
EvaluationReport run(const RunConfig& cfg, const RunOptions& opts = {});

/// sample_points + batch_estimate for repetition `k` of a resolved config.
SampleBatch generate_samples(const Problem& problem, const ResolvedConfig& cfg, std::uint64_t run_seed);

/// Training inputs (tau, x) and targets (row means) of a batch. Rows whose
/// mean is not finite (everything discarded) are dropped.
void training_data(const SampleBatch& batch, Eigen::MatrixXd& inputs, Eigen::RowVectorXd& targets);

/// Grid evaluation of `model` (optionally with the MC means nearest to each grid point).
std::vector<GridRow> evaluate_grid(const Problem& problem, const NetworkParams& model, const SampleBatch* batch);

void write_grid_csv(const std::vector<GridRow>& grid, std::ostream& os, const std::string& comment = "");

/// Samples plus JSON sidecar (config, policy, full diagnostics) in `dir`.
void write_sample_cache(const std::filesystem::path& dir, const SampleBatch& batch, const ResolvedConfig& cfg);
/// Reads samples.csv and restores policy and diagnostics from the sibling
/// samples.json; without one, the policy is propagate and only the
/// non-finite count is known.
SampleBatch read_sample_cache(const std::filesystem::path& csv);

}  // namespace dbranch
