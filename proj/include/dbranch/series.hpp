#pragma once

#include <memory>
#include <span>
#include <vector>

#include "dbranch/jet.hpp"
#include "dbranch/multiindex.hpp"

namespace dbranch {

/// Multivariate Taylor polynomial truncated to the box {e : e <= bound}.
///
/// The coefficient of z^bound in any product or composition depends only on
/// coefficients inside the box, so evaluating a smooth function on seeded
/// variables yields the mixed partial d_bound exactly (bound! * coefficient).
class Series {
public:
    struct Layout;

    /// Constant series over the box of `bound`.
    Series(std::shared_ptr<const Layout> layout, double constant);

    static std::shared_ptr<const Layout> make_layout(const MultiIndex& bound);
    /// The series value + z_var for the 0-based variable `var`.
    static Series variable(std::shared_ptr<const Layout> layout, std::size_t var, double value);

    double constant() const { return c_[0]; }
    /// Coefficient of the highest monomial z^bound.
    double top_coefficient() const { return c_.back(); }
    /// Total order of the truncation box.
    unsigned order() const;

    Series operator-() const;
    Series& operator+=(const Series& o);
    Series& operator-=(const Series& o);
    Series& operator*=(const Series& o);
    Series& operator/=(const Series& o);
    Series& operator+=(double v);
    Series& operator-=(double v);
    Series& operator*=(double v);
    Series& operator/=(double v);

    friend Series operator+(Series a, const Series& b) { return a += b; }
    friend Series operator-(Series a, const Series& b) { return a -= b; }
    friend Series operator*(Series a, const Series& b) { return a *= b; }
    friend Series operator/(Series a, const Series& b) { return a /= b; }
    friend Series operator+(Series a, double b) { return a += b; }
    friend Series operator-(Series a, double b) { return a -= b; }
    friend Series operator*(Series a, double b) { return a *= b; }
    friend Series operator/(Series a, double b) { return a /= b; }
    friend Series operator+(double a, Series b) { return b += a; }
    friend Series operator-(double a, const Series& b) { return (-b) += a; }
    friend Series operator*(double a, Series b) { return b *= a; }
    friend Series operator/(double a, const Series& b);

    /// h(self) given the jet of h at the constant term, order >= box order.
    Series compose(const Jet& outer) const;

private:
    std::shared_ptr<const Layout> layout_;
    std::vector<double> c_;
};

Series exp(const Series& s);
Series log(const Series& s);
Series cos(const Series& s);
Series sin(const Series& s);
Series tanh(const Series& s);
Series pow(const Series& s, double exponent);

/// d_nu F(z) for F written generically over its scalar type: F must be
/// callable with std::span<const double> and with std::span<const Series>.
template <class F>
double mixed_partial(F&& fn, const MultiIndex& nu, std::span<const double> z)
{
    if (nu.is_zero()) return fn(z);
    auto layout = Series::make_layout(nu);
    std::vector<Series> args;
    args.reserve(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (nu[i] > 0)
            args.push_back(Series::variable(layout, i, z[i]));
        else
            args.emplace_back(layout, z[i]);
    }
    const Series r = fn(std::span<const Series>(args));
    return r.top_coefficient() * static_cast<double>(nu.factorial_product());
}

}  // namespace dbranch
