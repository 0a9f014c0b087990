#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbranch/code_algebra.hpp"
#include "dbranch/jet.hpp"
#include "dbranch/multiindex.hpp"
#include "dbranch/rational.hpp"

namespace dbranch {

/// x -> profile(weights . x + offset). Every benchmark solution u(t, .) has
/// this form, with the offset and profile depending on t.
struct Ridge {
    std::vector<double> weights;
    double offset = 0.0;
    Profile profile;

    double partial(const MultiIndex& mu, std::span<const double> x) const
    {
        return ridge_partial(mu, weights, offset, profile, x);
    }
};

/// Experiment constants attached to a problem.
struct ProblemDefaults {
    std::size_t samples_per_point = 1000;  ///< M
    std::string activation = "tanh";
    std::map<std::string, double> constants;
};

/// A PDE  d_t u + (diffusivity/2) Lap u + f(d_lambda1 u, ..., d_lambdan u) = 0,
/// u(T, x) = phi(x), together with its closed-form solution.
///
/// Immutable after construction; safe to share across threads.
class Problem {
public:
    virtual ~Problem() = default;

    const std::string& name() const { return name_; }
    std::size_t dim() const { return sig_.dim; }
    const Signature& signature() const { return sig_; }
    const Rational& diffusivity() const { return diffusivity_; }
    double diffusivity_value() const { return diffusivity_.to_double(); }
    double horizon() const { return horizon_; }
    double x_min() const { return x_min_; }
    double x_max() const { return x_max_; }
    double x_mid() const { return 0.5 * (x_min_ + x_max_); }
    const ProblemDefaults& defaults() const { return defaults_; }

    /// d_nu f(z). Throws DomainError when z is outside the domain of f.
    virtual double f_partial(const MultiIndex& nu, std::span<const double> z) const = 0;

    /// d_mu phi(x).
    double phi_partial(const MultiIndex& mu, std::span<const double> x) const;

    /// Closed-form u(t, x).
    double exact_solution(double t, std::span<const double> x) const;

    /// Closed-form u(t, .) as a ridge function.
    virtual Ridge ridge(double t) const = 0;

protected:
    Problem(std::string name, Signature sig, Rational diffusivity, double horizon, double x_min, double x_max,
            ProblemDefaults defaults);

    void check_arity(const MultiIndex& nu, std::span<const double> z) const;

private:
    std::string name_;
    Signature sig_;
    Rational diffusivity_;
    double horizon_;
    double x_min_;
    double x_max_;
    ProblemDefaults defaults_;
};

struct ProblemOptions {
    std::optional<std::size_t> dim;
    std::optional<double> horizon;
};

/// Registry: "allen-cahn", "exponential", "burgers", "merton",
/// "log-gradient-3", "cosine-gradient-4". Throws std::invalid_argument for
/// unknown names or unsupported options.
std::shared_ptr<const Problem> make_problem(std::string_view name, const ProblemOptions& options = {});

std::vector<std::string> problem_names();

/// Same signature as `sig` but f = 0, with terminal condition `terminal`
/// (a polynomial ridge). The exact solution is the Gaussian convolution.
std::shared_ptr<const Problem> make_heat_problem(Signature sig, Rational diffusivity, double horizon,
                                                 Ridge terminal, double x_min = -1.0, double x_max = 1.0);

}  // namespace dbranch
