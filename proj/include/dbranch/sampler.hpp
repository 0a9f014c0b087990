#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbranch/code_algebra.hpp"
#include "dbranch/problem.hpp"
#include "dbranch/rng.hpp"

namespace dbranch {

/// Exponential branching-time law with density rate * exp(-rate * s).
struct LifetimeDistribution {
    double rate = 1.0;

    /// Default rate -log(0.95) / T: a root node survives to T with probability 0.95.
    static LifetimeDistribution for_horizon(double horizon) { return {-std::log(0.95) / horizon}; }

    double density(double s) const { return rate * std::exp(-rate * s); }
    double tail(double s) const { return std::exp(-rate * s); }
};

enum class NonfinitePolicy { Propagate, DiscardAndReport };

struct SamplerConfig {
    std::uint64_t seed = 0;
    std::size_t tree_node_budget = 1'000'000;
    NonfinitePolicy nonfinite_policy = NonfinitePolicy::Propagate;
    std::optional<double> lifetime_rate;  ///< defaults to LifetimeDistribution::for_horizon(T)
};

/// Shared, read-only state for drawing trees of one problem.
class TreeSampler {
public:
    TreeSampler(const Problem& problem, std::size_t node_budget = 1'000'000,
                std::optional<double> lifetime_rate = std::nullopt);

    const Problem& problem() const { return problem_; }
    const MechanismTable& mechanisms() const { return table_; }
    const LifetimeDistribution& lifetime() const { return lifetime_; }
    std::size_t node_budget() const { return budget_; }

    /// c(u)(T, y) from the terminal condition: phi, a * d_nu f(d_lambda phi), or d_mu phi.
    double terminal_value(const Code& c, std::span<const double> y) const;

private:
    const Problem& problem_;
    MechanismTable table_;
    LifetimeDistribution lifetime_;
    std::size_t budget_;
    Ridge terminal_;
    unsigned max_lambda_order_ = 0;
};

/// One node of a realized coding tree, as seen by the sampler.
struct TreeNodeRecord {
    double t = 0.0;
    double lifetime = 0.0;  ///< drawn tau
    Code code;
    bool leaf = false;
    std::size_t q = 0;          ///< mechanism size (internal nodes)
    double terminal = 0.0;      ///< c(u)(T, x + W) (leaves), coefficient included
};

struct TreeRecorder {
    std::vector<TreeNodeRecord> nodes;
};

/// One draw of H(t, x, c). Throws BudgetExceeded when the tree has more than
/// node_budget nodes, DomainError from the oracles, and OrderTooHigh or
/// std::overflow_error when a deep tree needs derivative orders beyond the
/// exact arithmetic.
double tree_sample(const TreeSampler& sampler, double t, std::span<const double> x, const Code& c, Philox& rng,
                   TreeRecorder* recorder = nullptr, std::size_t* node_count = nullptr);

struct SamplePoint {
    double tau = 0.0;
    std::vector<double> x;

    friend bool operator==(const SamplePoint&, const SamplePoint&) = default;
};

/// tau = 0; x_1 uniform on [x_min, x_max]; remaining coordinates x_mid.
std::vector<SamplePoint> sample_points(const Problem& problem, std::size_t count, std::uint64_t seed);

struct SampleFailure {
    std::size_t i = 0;
    std::size_t j = 0;
    std::string what;
};

struct SampleDiagnostics {
    std::vector<std::uint64_t> tree_size_histogram;  ///< bucket b counts sizes in [2^b, 2^{b+1})
    std::size_t max_tree_size = 0;
    std::size_t nonfinite_count = 0;
    std::size_t discarded = 0;
    std::vector<SampleFailure> failures;  ///< domain/arithmetic failures, reported as non-finite draws
    bool failed = false;                   ///< non-finite draw under the propagate policy

    double discarded_fraction(std::size_t total) const
    {
        return total ? static_cast<double>(discarded) / static_cast<double>(total) : 0.0;
    }
};

/// Tree draws H_{i,j} for N points and M draws per point.
struct SampleBatch {
    std::vector<SamplePoint> points;
    std::size_t draws = 0;       ///< M
    std::vector<double> values;  ///< row-major N x M
    SampleDiagnostics diagnostics;
    NonfinitePolicy policy = NonfinitePolicy::Propagate;

    std::size_t size() const { return points.size(); }
    double value(std::size_t i, std::size_t j) const { return values[i * draws + j]; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * draws, draws}; }

    /// M^{-1} sum_j H_{i,j}; under discard-and-report non-finite draws are skipped.
    double mean(std::size_t i) const;
    /// Standard error of mean(i); NaN with fewer than two usable draws.
    double standard_error(std::size_t i) const;
    std::vector<double> means() const;
};

/// Raised when trees exceed their node budget; lists every failing (i, j).
class SamplingError : public std::runtime_error {
public:
    SamplingError(const std::string& what, std::vector<SampleFailure> failures)
        : std::runtime_error(what), failures_(std::move(failures))
    {
    }
    const std::vector<SampleFailure>& failures() const { return failures_; }

private:
    std::vector<SampleFailure> failures_;
};

/// OpenMP-parallel over (i, j). Each draw uses its own Philox stream keyed by
/// (seed, i, j), so the result is bit-identical for any thread count and
/// equal to batch_estimate_serial.
SampleBatch batch_estimate(const Problem& problem, std::span<const SamplePoint> points, std::size_t draws,
                           const SamplerConfig& cfg);

/// Single-threaded reference of batch_estimate.
SampleBatch batch_estimate_serial(const Problem& problem, std::span<const SamplePoint> points, std::size_t draws,
                                  const SamplerConfig& cfg);

/// Stream for draw (i, j) under `seed`.
Philox tree_stream(std::uint64_t seed, std::size_t i, std::size_t j);

/// CSV "i,j,tau,x_1..x_d,H" with round-trip precision, optionally preceded
/// by one "# comment" line (skipped by the reader).
void write_samples_csv(const SampleBatch& batch, std::ostream& os, const std::string& comment = "");
SampleBatch read_samples_csv(std::istream& is);

}  // namespace dbranch
