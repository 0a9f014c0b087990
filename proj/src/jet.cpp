#include "dbranch/jet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dbranch/errors.hpp"

namespace dbranch {

namespace {

void check_order(unsigned order)
{
    if (order > kMaxJetOrder)
        throw OrderTooHigh("derivative order " + std::to_string(order) + " exceeds supported maximum " +
                           std::to_string(kMaxJetOrder));
}

bool is_integer(double r) { return std::isfinite(r) && r == std::floor(r); }

// Taylor coefficients of log(s(x0 + h)) given those of s, all of the same length.
std::vector<double> log_series(const std::vector<double>& s)
{
    const std::size_t n = s.size();
    std::vector<double> l(n, 0.0);
    l[0] = std::log(s[0]);
    for (std::size_t k = 1; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t j = 1; j < k; ++j) acc += static_cast<double>(j) * l[j] * s[k - j];
        l[k] = (s[k] - acc / static_cast<double>(k)) / s[0];
    }
    return l;
}

std::vector<double> to_derivatives(std::vector<double> taylor)
{
    double fact = 1.0;
    for (std::size_t k = 1; k < taylor.size(); ++k) {
        fact *= static_cast<double>(k);
        taylor[k] *= fact;
    }
    return taylor;
}

}  // namespace

Jet::Jet(std::vector<double> derivatives) : d_(std::move(derivatives))
{
    if (d_.empty()) throw std::invalid_argument("Jet needs at least the function value");
}

Jet elementary_jet(Elementary fn, double point, unsigned order, double parameter)
{
    check_order(order);
    std::vector<double> d(order + 1, 0.0);
    switch (fn) {
    case Elementary::Exp: {
        const double e = std::exp(point);
        for (auto& v : d) v = e;
        break;
    }
    case Elementary::Log: {
        if (!(point > 0.0)) throw DomainError("log of non-positive argument " + std::to_string(point));
        d[0] = std::log(point);
        // (-1)^(j-1) (j-1)! / x^j
        double term = 1.0 / point;
        for (unsigned j = 1; j <= order; ++j) {
            d[j] = term;
            term *= -static_cast<double>(j) / point;
        }
        break;
    }
    case Elementary::Sin:
    case Elementary::Cos: {
        const double s = std::sin(point);
        const double c = std::cos(point);
        const double cycle_cos[4] = {c, -s, -c, s};
        const double cycle_sin[4] = {s, c, -s, -c};
        for (unsigned j = 0; j <= order; ++j) d[j] = (fn == Elementary::Cos) ? cycle_cos[j % 4] : cycle_sin[j % 4];
        break;
    }
    case Elementary::Pow: {
        const double r = parameter;
        if (point < 0.0 && !is_integer(r))
            throw DomainError("non-integer power of negative base " + std::to_string(point));
        if (point == 0.0 && r < static_cast<double>(order) && !is_integer(r))
            throw DomainError("non-integer power differentiated at zero");
        if (point == 0.0 && r < 0.0) throw DomainError("negative power at zero");
        double falling = 1.0;
        for (unsigned j = 0; j <= order; ++j) {
            const double e = r - static_cast<double>(j);
            if (falling == 0.0) {
                d[j] = 0.0;
            } else {
                d[j] = falling * std::pow(point, e);
            }
            falling *= e;
        }
        break;
    }
    case Elementary::Tanh: {
        // t' = 1 - t^2 on the series of x0 + h, whose only non-constant
        // Taylor coefficient is 1 at h^1: t_k = w_{k-1} / k with w = 1 - t^2.
        std::vector<double> t(order + 1, 0.0);
        std::vector<double> w(order + 1, 0.0);
        t[0] = std::tanh(point);
        for (unsigned k = 0; k <= order; ++k) {
            if (k > 0) t[k] = w[k - 1] / static_cast<double>(k);
            double sq = 0.0;
            for (unsigned i = 0; i <= k; ++i) sq += t[i] * t[k - i];
            w[k] = (k == 0 ? 1.0 : 0.0) - sq;
        }
        d = to_derivatives(std::move(t));
        break;
    }
    case Elementary::Log1pSquare: {
        // log(s) with s(x0 + h) = 1 + x0^2 + 2 x0 h + h^2
        std::vector<double> s(order + 1, 0.0);
        s[0] = 1.0 + point * point;
        if (order >= 1) s[1] = 2.0 * point;
        if (order >= 2) s[2] = 1.0;
        d = to_derivatives(log_series(s));
        break;
    }
    }
    return Jet(std::move(d));
}

Profile Profile::tanh(double scale, double shift) { return {Kind::Tanh, 1.0, {}, scale, shift}; }
Profile Profile::exp(double scale, double shift) { return {Kind::Exp, 1.0, {}, scale, shift}; }
Profile Profile::log1p_square(double scale, double shift) { return {Kind::Log1pSquare, 1.0, {}, scale, shift}; }
Profile Profile::cos(double scale, double shift) { return {Kind::Cos, 1.0, {}, scale, shift}; }
Profile Profile::power(double exponent, double scale, double shift)
{
    return {Kind::Power, exponent, {}, scale, shift};
}
Profile Profile::polynomial(std::vector<double> ascending_coefficients)
{
    return {Kind::Polynomial, 1.0, std::move(ascending_coefficients), 1.0, 0.0};
}

std::string Profile::name() const
{
    switch (kind) {
    case Kind::Tanh: return "tanh";
    case Kind::Exp: return "exp";
    case Kind::Log1pSquare: return "log1p_square";
    case Kind::Cos: return "cos";
    case Kind::Power: return "power";
    case Kind::Polynomial: return "polynomial";
    }
    return "?";
}

Jet jet(const Profile& profile, double point, unsigned order)
{
    check_order(order);
    std::vector<double> d;
    auto from_elementary = [&](Elementary fn, double parameter = 0.0) {
        auto j = elementary_jet(fn, point, order, parameter);
        d.assign(j.derivatives().begin(), j.derivatives().end());
    };
    switch (profile.kind) {
    case Profile::Kind::Tanh: from_elementary(Elementary::Tanh); break;
    case Profile::Kind::Exp: from_elementary(Elementary::Exp); break;
    case Profile::Kind::Log1pSquare: from_elementary(Elementary::Log1pSquare); break;
    case Profile::Kind::Cos: from_elementary(Elementary::Cos); break;
    case Profile::Kind::Power:
        if (!(point > 0.0) && !is_integer(profile.exponent))
            throw DomainError("power profile evaluated at non-positive point " + std::to_string(point));
        from_elementary(Elementary::Pow, profile.exponent);
        break;
    case Profile::Kind::Polynomial: {
        // derivative j: sum_k c_k k!/(k-j)! x^(k-j), Horner in x
        d.assign(order + 1, 0.0);
        std::vector<double> c = profile.coefficients;
        for (unsigned j = 0; j <= order && !c.empty(); ++j) {
            double v = 0.0;
            for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * point + *it;
            d[j] = v;
            std::vector<double> next(c.size() > 1 ? c.size() - 1 : 0);
            for (std::size_t k = 1; k < c.size(); ++k) next[k - 1] = c[k] * static_cast<double>(k);
            c = std::move(next);
        }
        break;
    }
    }
    for (auto& v : d) v *= profile.scale;
    d[0] += profile.shift;
    return Jet(std::move(d));
}

double ridge_partial(const MultiIndex& mu, std::span<const double> weights, double offset, const Profile& profile,
                     std::span<const double> x)
{
    if (weights.size() != x.size() || mu.size() != x.size())
        throw std::invalid_argument("ridge_partial: dimension mismatch");
    double y = offset;
    for (std::size_t i = 0; i < x.size(); ++i) y += weights[i] * x[i];
    const auto order = mu.total_order();
    check_order(static_cast<unsigned>(std::min<std::uint64_t>(order, kMaxJetOrder + 1)));
    double factor = 1.0;
    for (std::size_t i = 0; i < mu.size(); ++i)
        for (std::uint32_t k = 0; k < mu[i]; ++k) factor *= weights[i];
    return factor * jet(profile, y, static_cast<unsigned>(order))[order];
}

}  // namespace dbranch
