#include "dbranch/problem.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dbranch/errors.hpp"
#include "dbranch/series.hpp"

namespace dbranch {

Problem::Problem(std::string name, Signature sig, Rational diffusivity, double horizon, double x_min, double x_max,
                 ProblemDefaults defaults)
    : name_(std::move(name)),
      sig_(std::move(sig)),
      diffusivity_(diffusivity),
      horizon_(horizon),
      x_min_(x_min),
      x_max_(x_max),
      defaults_(std::move(defaults))
{
    if (!(horizon_ > 0.0)) throw std::invalid_argument("horizon must be positive");
    if (!(x_min_ < x_max_)) throw std::invalid_argument("x_min must be below x_max");
    if (!(diffusivity_ > Rational{0})) throw std::invalid_argument("diffusivity must be positive");
    for (std::size_t i = 0; i < sig_.lambdas.size(); ++i)
        for (std::size_t j = i + 1; j < sig_.lambdas.size(); ++j)
            if (sig_.lambdas[i] == sig_.lambdas[j]) throw std::invalid_argument("signature indices must be distinct");
}

void Problem::check_arity(const MultiIndex& nu, std::span<const double> z) const
{
    if (nu.size() != sig_.arity() || z.size() != sig_.arity())
        throw std::invalid_argument("f_partial: expected " + std::to_string(sig_.arity()) + " arguments");
}

double Problem::phi_partial(const MultiIndex& mu, std::span<const double> x) const
{
    return ridge(horizon_).partial(mu, x);
}

double Problem::exact_solution(double t, std::span<const double> x) const
{
    return ridge(t).partial(MultiIndex(dim()), x);
}

namespace {

using std::cos;
using std::exp;
using std::log;

double log_checked(double v)
{
    if (!(v > 0.0)) throw DomainError("log of non-positive argument " + std::to_string(v));
    return std::log(v);
}
Series log_checked(const Series& v) { return log(v); }

double pow_checked(double base, double exponent)
{
    if (base < 0.0 && exponent != std::floor(exponent))
        throw DomainError("non-integer power of negative base " + std::to_string(base));
    return std::pow(base, exponent);
}
Series pow_checked(const Series& base, double exponent) { return pow(base, exponent); }

template <class S>
S square(const S& v)
{
    return v * v;
}

// Derived supplies  template <class S> S nonlinearity(std::span<const S>) const
// and optionally check_domain(z).
template <class Derived>
class ProblemBase : public Problem {
public:
    using Problem::Problem;

    double f_partial(const MultiIndex& nu, std::span<const double> z) const override
    {
        check_arity(nu, z);
        const auto& self = static_cast<const Derived&>(*this);
        self.check_domain(z);
        return mixed_partial([&self](auto args) { return self.nonlinearity(args); }, nu, z);
    }

    void check_domain(std::span<const double>) const {}
};

Signature zero_signature(std::size_t d) { return Signature{d, {MultiIndex(d)}}; }

// lambda = 0 followed by the given multiples of each unit vector, grouped by multiple
Signature axis_signature(std::size_t d, bool with_zero, std::initializer_list<std::uint32_t> orders)
{
    Signature sig{d, {}};
    if (with_zero) sig.lambdas.push_back(MultiIndex(d));
    for (auto k : orders)
        for (std::size_t i = 1; i <= d; ++i) sig.lambdas.push_back(MultiIndex::unit(i, d).scaled(k));
    return sig;
}

std::vector<double> constant_weights(std::size_t d, double w) { return std::vector<double>(d, w); }

// u_t + Lap u / 2 + u - u^3 = 0
class AllenCahn final : public ProblemBase<AllenCahn> {
public:
    AllenCahn(std::size_t d, double T)
        : ProblemBase("allen-cahn", zero_signature(d), Rational{1}, T, -8.0, 8.0, {100000, "tanh", {}})
    {
    }

    template <class S>
    S nonlinearity(std::span<const S> z) const
    {
        return z[0] - z[0] * z[0] * z[0];
    }

    Ridge ridge(double t) const override
    {
        const double d = static_cast<double>(dim());
        return {constant_weights(dim(), -1.0 / (2.0 * std::sqrt(d))), 0.75 * (horizon() - t),
                Profile::tanh(-0.5, -0.5)};
    }
};

// u_t + (alpha/d) sum d_i u + Lap u / 2 + d e^{-u}(1 - 2 e^{-u}) = 0
class Exponential final : public ProblemBase<Exponential> {
public:
    Exponential(std::size_t d, double T)
        : ProblemBase("exponential", axis_signature(d, true, {1}), Rational{1}, T, -4.0, 4.0,
                      {d == 1 ? 30000u : 3000u, "tanh", {{"alpha", 10.0}}}),
          alpha_(10.0)
    {
    }

    template <class S>
    S nonlinearity(std::span<const S> z) const
    {
        const double d = static_cast<double>(dim());
        S drift = z[1];
        for (std::size_t i = 2; i <= dim(); ++i) drift += z[i];
        const S e = exp(-z[0]);
        return drift * (alpha_ / d) + d * (e - 2.0 * e * e);
    }

    Ridge ridge(double t) const override
    {
        return {constant_weights(dim(), 1.0), alpha_ * (horizon() - t), Profile::log1p_square()};
    }

private:
    double alpha_;
};

// u_t + (d^2/2) Lap u + (u - (2+d)/(2d)) d sum_k d_k u = 0
class Burgers final : public ProblemBase<Burgers> {
public:
    Burgers(std::size_t d, double T)
        : ProblemBase("burgers", axis_signature(d, true, {1}), Rational{static_cast<std::int64_t>(d * d)}, T, -4.0,
                      4.0, {10000, "tanh", {}})
    {
    }

    template <class S>
    S nonlinearity(std::span<const S> z) const
    {
        const double d = static_cast<double>(dim());
        S grad = z[1];
        for (std::size_t i = 2; i <= dim(); ++i) grad += z[i];
        return (z[0] - (2.0 + d) / (2.0 * d)) * grad * d;
    }

    // logistic(t + sum x / d) = 1/2 + tanh((t + sum x / d) / 2) / 2
    Ridge ridge(double t) const override
    {
        const double d = static_cast<double>(dim());
        return {constant_weights(dim(), 0.5 / d), 0.5 * t, Profile::tanh(0.5, 0.5)};
    }
};

// HJB of the Merton problem normalized to the template:
// u_t + u_xx / 2 + f(u, u_x, u_xx) = 0 with
// f = -z2/2 - mu^2 z1^2 / (2 sigma^2 z2) + gamma/(1-gamma) z1^(1 - 1/gamma) - rho z0
class Merton final : public ProblemBase<Merton> {
public:
    explicit Merton(double T)
        : ProblemBase("merton", axis_signature(1, true, {1, 2}), Rational{1}, T, 100.0, 200.0,
                      {10000,
                       "relu",
                       {{"mu", 0.03}, {"sigma", 0.1}, {"gamma", 0.5}, {"discount_rate", 0.01}}})
    {
        alpha_ = (2.0 * sigma_ * sigma_ * gamma_ * discount_rate_ - (1.0 - gamma_) * mu_ * mu_) /
                 (2.0 * sigma_ * sigma_ * gamma_ * gamma_);
    }

    void check_domain(std::span<const double> z) const
    {
        if (std::abs(z[2]) < 1e-10)
            throw DomainError("merton: second derivative argument " + std::to_string(z[2]) + " too close to 0");
    }

    template <class S>
    S nonlinearity(std::span<const S> z) const
    {
        const double exponent = 1.0 - 1.0 / gamma_;
        return -0.5 * z[2] - (mu_ * mu_ / (2.0 * sigma_ * sigma_)) * z[1] * z[1] / z[2] +
               (gamma_ / (1.0 - gamma_)) * pow_checked(z[1], exponent) - discount_rate_ * z[0];
    }

    Ridge ridge(double t) const override
    {
        // ((1 + (alpha-1) e^{-alpha(T-t)}) / alpha)^gamma stays real for alpha < 0
        const double ratio = (1.0 + (alpha_ - 1.0) * std::exp(-alpha_ * (horizon() - t))) / alpha_;
        const double scale = std::pow(ratio, gamma_) / (1.0 - gamma_);
        return {{1.0}, 0.0, Profile::power(1.0 - gamma_, scale)};
    }

    double alpha() const { return alpha_; }

private:
    double mu_ = 0.03;
    double sigma_ = 0.1;
    double gamma_ = 0.5;
    double discount_rate_ = 0.01;
    double alpha_ = 0.0;
};

// u_t + (alpha/d) sum d_i u + log((1/d) sum (d_ii u)^2 + (d_iii u)^2) = 0, no
// Laplacian, so f carries -Lap u / 2.
// Arguments: d_i u (i = 1..d), d_ii u, d_iii u.
class LogGradient3 final : public ProblemBase<LogGradient3> {
public:
    LogGradient3(std::size_t d, double T)
        : ProblemBase("log-gradient-3", axis_signature(d, false, {1, 2, 3}), Rational{1}, T, -3.0, 3.0,
                      {d == 1 ? 6000u : 200u, "tanh", {{"alpha", 10.0}}}),
          alpha_(10.0)
    {
    }

    template <class S>
    S nonlinearity(std::span<const S> z) const
    {
        const std::size_t n = dim();
        const double d = static_cast<double>(n);
        S drift = z[0];
        S lap = z[n];
        S inner = square(z[n]) + square(z[2 * n]);
        for (std::size_t i = 1; i < n; ++i) {
            drift += z[i];
            lap += z[n + i];
            inner += square(z[n + i]) + square(z[2 * n + i]);
        }
        return drift * (alpha_ / d) - 0.5 * lap + log_checked(inner / d);
    }

    Ridge ridge(double t) const override
    {
        return {constant_weights(dim(), 1.0), alpha_ * (horizon() - t), Profile::cos()};
    }

private:
    double alpha_;
};

// u_t + (alpha/d) sum d_i u + u - (Lap u / (12 d))^2 + (1/d) sum cos(pi d_iiii u / 4!) = 0,
// no Laplacian, so f carries -Lap u / 2.
// Arguments: u, d_i u, d_ii u, d_iiii u.
class CosineGradient4 final : public ProblemBase<CosineGradient4> {
public:
    CosineGradient4(std::size_t d, double T)
        : ProblemBase("cosine-gradient-4", axis_signature(d, true, {1, 2, 4}), Rational{1}, T, -5.0, 5.0,
                      {d == 1 ? 2500u : 50u, "tanh", {{"alpha", 10.0}, {"b", kB}, {"c", 24.0 * kB}, {"d", 4.0 * kB * kB}}}),
          alpha_(10.0)
    {
    }

    template <class S>
    S nonlinearity(std::span<const S> z) const
    {
        const std::size_t n = dim();
        const double d = static_cast<double>(n);
        S drift = z[1];
        S lap = z[1 + n];
        S cosines = cos(z[1 + 2 * n] * (std::numbers::pi / 24.0));
        for (std::size_t i = 1; i < n; ++i) {
            drift += z[1 + i];
            lap += z[1 + n + i];
            cosines += cos(z[1 + 2 * n + i] * (std::numbers::pi / 24.0));
        }
        return z[0] + drift * (alpha_ / d) - 0.5 * lap - square(lap / (12.0 * d)) + cosines / d;
    }

    Ridge ridge(double t) const override
    {
        // y^4 + y^3 + b y^2 + c y + d with c = 24 b, d = 4 b^2
        return {constant_weights(dim(), 1.0), alpha_ * (horizon() - t),
                Profile::polynomial({4.0 * kB * kB, 24.0 * kB, kB, 1.0, 1.0})};
    }

private:
    static constexpr double kB = -36.0 / 47.0;
    double alpha_;
};

class Heat final : public ProblemBase<Heat> {
public:
    Heat(Signature sig, Rational diffusivity, double T, Ridge terminal, double x_min, double x_max)
        : ProblemBase("heat", std::move(sig), diffusivity, T, x_min, x_max, {10000, "tanh", {}}),
          terminal_(std::move(terminal))
    {
        if (terminal_.profile.kind != Profile::Kind::Polynomial)
            throw std::invalid_argument("heat problem needs a polynomial terminal profile");
        if (terminal_.weights.size() != dim()) throw std::invalid_argument("terminal ridge dimension mismatch");
    }

    template <class S>
    S nonlinearity(std::span<const S> z) const
    {
        return z[0] * 0.0;
    }

    // E[h(y + Z)] with Z ~ N(0, s^2), s^2 = diffusivity |a|^2 (T - t)
    Ridge ridge(double t) const override
    {
        double a2 = 0.0;
        for (double w : terminal_.weights) a2 += w * w;
        const double var = diffusivity_value() * a2 * (horizon() - t);
        const auto& c = terminal_.profile.coefficients;
        std::vector<double> out(c.size(), 0.0);
        for (std::size_t k = 0; k < c.size(); ++k) {
            double binom = 1.0;
            double moment = 1.0;  // E[Z^j], zero for odd j
            for (std::size_t j = 0; j <= k; ++j) {
                if (j > 0) binom = binom * static_cast<double>(k - j + 1) / static_cast<double>(j);
                if (j % 2 == 0) {
                    if (j > 0) moment *= var * static_cast<double>(j - 1);
                    out[k - j] += c[k] * binom * moment;
                }
            }
        }
        Ridge r = terminal_;
        r.profile.coefficients = std::move(out);
        return r;
    }

private:
    Ridge terminal_;
};

std::size_t require_dim(const ProblemOptions& o, std::size_t fallback)
{
    const std::size_t d = o.dim.value_or(fallback);
    if (d < 1) throw std::invalid_argument("dimension must be >= 1");
    return d;
}

}  // namespace

std::vector<std::string> problem_names()
{
    return {"allen-cahn", "exponential", "burgers", "merton", "log-gradient-3", "cosine-gradient-4"};
}

std::shared_ptr<const Problem> make_problem(std::string_view name, const ProblemOptions& options)
{
    const std::size_t d = require_dim(options, 1);
    if (name == "allen-cahn") return std::make_shared<AllenCahn>(d, options.horizon.value_or(0.5));
    if (name == "exponential") return std::make_shared<Exponential>(d, options.horizon.value_or(0.05));
    if (name == "burgers") return std::make_shared<Burgers>(d, options.horizon.value_or(d == 1 ? 0.5 : 0.1));
    if (name == "merton") {
        if (d != 1) throw std::invalid_argument("merton is one-dimensional");
        return std::make_shared<Merton>(options.horizon.value_or(0.1));
    }
    if (name == "log-gradient-3") return std::make_shared<LogGradient3>(d, options.horizon.value_or(0.02));
    if (name == "cosine-gradient-4") return std::make_shared<CosineGradient4>(d, options.horizon.value_or(0.04));
    throw std::invalid_argument("unknown problem '" + std::string(name) + "'");
}

std::shared_ptr<const Problem> make_heat_problem(Signature sig, Rational diffusivity, double horizon, Ridge terminal,
                                                 double x_min, double x_max)
{
    return std::make_shared<Heat>(std::move(sig), diffusivity, horizon, std::move(terminal), x_min, x_max);
}

}  // namespace dbranch
