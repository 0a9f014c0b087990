#pragma once

// Dense-free multivariate polynomial with exact derivatives, used as an
// independent oracle in tests.

#include <map>
#include <random>
#include <vector>

#include "dbranch/multiindex.hpp"

namespace testing_support {

class Polynomial {
public:
    explicit Polynomial(std::size_t vars) : vars_(vars) {}

    static Polynomial random(std::size_t vars, unsigned degree, std::mt19937& rng)
    {
        Polynomial p(vars);
        std::uniform_real_distribution<double> c(-1.0, 1.0);
        for (unsigned order = 0; order <= degree; ++order)
            for (const auto& m : dbranch::indices_of_order(vars, order)) p.terms_[key(m)] = c(rng);
        return p;
    }

    std::size_t vars() const { return vars_; }

    Polynomial derivative(const dbranch::MultiIndex& mu) const
    {
        Polynomial out(vars_);
        for (const auto& [e, c] : terms_) {
            long double coeff = c;
            std::vector<unsigned> ne = e;
            bool zero = false;
            for (std::size_t i = 0; i < vars_ && !zero; ++i) {
                if (mu[i] > e[i]) {
                    zero = true;
                    break;
                }
                for (unsigned k = 0; k < mu[i]; ++k) coeff *= static_cast<long double>(e[i] - k);
                ne[i] = e[i] - mu[i];
            }
            if (!zero) out.terms_[ne] += coeff;
        }
        return out;
    }

    template <class T>
    long double operator()(const std::vector<T>& x) const
    {
        long double s = 0;
        for (const auto& [e, c] : terms_) {
            long double t = c;
            for (std::size_t i = 0; i < vars_; ++i)
                for (unsigned k = 0; k < e[i]; ++k) t *= static_cast<long double>(x[i]);
            s += t;
        }
        return s;
    }

private:
    static std::vector<unsigned> key(const dbranch::MultiIndex& m) { return {m.entries().begin(), m.entries().end()}; }

    std::size_t vars_;
    std::map<std::vector<unsigned>, long double> terms_;
};

// Mixed central difference d_mu F(x) in long double, Richardson-extrapolated.
template <class F>
long double mixed_difference(F&& fn, const dbranch::MultiIndex& mu, std::vector<long double> x, long double h)
{
    auto stencil = [&](long double step) {
        // recursive tensor product of 1-d central stencils
        std::vector<long double> point = x;
        auto rec = [&](auto&& self, std::size_t dim) -> long double {
            if (dim == x.size()) return fn(point);
            const unsigned m = mu[dim];
            if (m == 0) return self(self, dim + 1);
            long double sum = 0, binom = 1;
            for (unsigned i = 0; i <= m; ++i) {
                point[dim] = x[dim] + (static_cast<long double>(m) / 2 - i) * step;
                sum += ((i % 2) ? -binom : binom) * self(self, dim + 1);
                binom = binom * (m - i) / (i + 1);
            }
            point[dim] = x[dim];
            long double denom = 1;
            for (unsigned i = 0; i < m; ++i) denom *= step;
            return sum / denom;
        };
        return rec(rec, 0);
    };
    return (4 * stencil(h / 2) - stencil(h)) / 3;
}

}  // namespace testing_support
