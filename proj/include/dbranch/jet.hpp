#pragma once

#include <span>
#include <string>
#include <vector>

#include "dbranch/multiindex.hpp"

namespace dbranch {

/// Highest derivative order the jet arithmetic will produce.
inline constexpr unsigned kMaxJetOrder = 32;

/// Derivative values h(x0), h'(x0), ..., h^(K)(x0) of a univariate function.
///
/// Entries are derivatives, not Taylor coefficients.
class Jet {
public:
    explicit Jet(std::vector<double> derivatives);

    unsigned order() const { return static_cast<unsigned>(d_.size() - 1); }
    double value() const { return d_.front(); }
    double operator[](std::size_t j) const { return d_[j]; }
    std::span<const double> derivatives() const { return d_; }

private:
    std::vector<double> d_;
};

/// Univariate elementary functions with exact arbitrary-order derivatives.
enum class Elementary { Exp, Log, Tanh, Sin, Cos, Pow, Log1pSquare };

/// Jet of an elementary function. `parameter` is the exponent for Pow and
/// ignored otherwise. Throws DomainError outside the function's domain and
/// OrderTooHigh beyond kMaxJetOrder.
Jet elementary_jet(Elementary fn, double point, unsigned order, double parameter = 0.0);

/// A named univariate profile h(y) = shift + scale * base(y).
///
/// Every benchmark terminal condition and exact solution is a ridge function
/// h(a.x + b) of one of these.
struct Profile {
    enum class Kind { Tanh, Exp, Log1pSquare, Cos, Power, Polynomial };

    Kind kind = Kind::Tanh;
    double exponent = 1.0;             ///< Power only
    std::vector<double> coefficients;  ///< Polynomial only, ascending powers
    double scale = 1.0;
    double shift = 0.0;

    static Profile tanh(double scale = 1.0, double shift = 0.0);
    static Profile exp(double scale = 1.0, double shift = 0.0);
    static Profile log1p_square(double scale = 1.0, double shift = 0.0);
    static Profile cos(double scale = 1.0, double shift = 0.0);
    static Profile power(double exponent, double scale = 1.0, double shift = 0.0);
    static Profile polynomial(std::vector<double> ascending_coefficients);

    std::string name() const;
};

/// Derivatives of a profile up to `order` at `point`.
Jet jet(const Profile& profile, double point, unsigned order);

/// Partial derivative d_mu of x -> h(a.x + b):
/// (prod_i a_i^mu_i) * h^(|mu|)(a.x + b).
double ridge_partial(const MultiIndex& mu, std::span<const double> weights, double offset, const Profile& profile,
                     std::span<const double> x);

}  // namespace dbranch
