#include "dbranch/series.hpp"

#include <cmath>
#include <stdexcept>

#include "dbranch/errors.hpp"

namespace dbranch {

struct Series::Layout {
    std::vector<std::uint32_t> bound;   // per active dimension
    std::vector<std::size_t> active;    // original variable positions with bound > 0
    std::vector<std::size_t> stride;    // per active dimension
    std::vector<std::uint32_t> digits;  // size * active.size(), row-major
    std::size_t size = 1;
    unsigned order = 0;

    bool fits(std::size_t a, std::size_t b) const
    {
        const std::size_t k = active.size();
        for (std::size_t i = 0; i < k; ++i)
            if (digits[a * k + i] + digits[b * k + i] > bound[i]) return false;
        return true;
    }
};

std::shared_ptr<const Series::Layout> Series::make_layout(const MultiIndex& bound)
{
    auto layout = std::make_shared<Layout>();
    for (std::size_t i = 0; i < bound.size(); ++i) {
        if (bound[i] == 0) continue;
        layout->active.push_back(i);
        layout->bound.push_back(bound[i]);
    }
    const std::size_t k = layout->active.size();
    layout->stride.assign(k, 1);
    for (std::size_t i = 0; i < k; ++i) {
        layout->stride[i] = layout->size;
        layout->size *= layout->bound[i] + 1;
    }
    layout->order = static_cast<unsigned>(bound.total_order());
    layout->digits.resize(layout->size * k);
    for (std::size_t f = 0; f < layout->size; ++f)
        for (std::size_t i = 0; i < k; ++i)
            layout->digits[f * k + i] = static_cast<std::uint32_t>((f / layout->stride[i]) % (layout->bound[i] + 1));
    return layout;
}

Series::Series(std::shared_ptr<const Layout> layout, double constant)
    : layout_(std::move(layout)), c_(layout_->size, 0.0)
{
    c_[0] = constant;
}

Series Series::variable(std::shared_ptr<const Layout> layout, std::size_t var, double value)
{
    Series s(layout, value);
    for (std::size_t i = 0; i < layout->active.size(); ++i)
        if (layout->active[i] == var) {
            s.c_[layout->stride[i]] = 1.0;
            return s;
        }
    throw std::invalid_argument("Series::variable: variable is not active in the layout");
}

Series Series::operator-() const
{
    Series r = *this;
    for (auto& v : r.c_) v = -v;
    return r;
}

Series& Series::operator+=(const Series& o)
{
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += o.c_[i];
    return *this;
}

Series& Series::operator-=(const Series& o)
{
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] -= o.c_[i];
    return *this;
}

Series& Series::operator*=(const Series& o)
{
    std::vector<double> out(c_.size(), 0.0);
    for (std::size_t a = 0; a < c_.size(); ++a) {
        if (c_[a] == 0.0) continue;
        for (std::size_t b = 0; a + b < c_.size(); ++b) {
            if (o.c_[b] == 0.0 || !layout_->fits(a, b)) continue;
            out[a + b] += c_[a] * o.c_[b];
        }
    }
    c_ = std::move(out);
    return *this;
}

Series& Series::operator/=(const Series& o) { return *this *= pow(o, -1.0); }

Series& Series::operator+=(double v)
{
    c_[0] += v;
    return *this;
}
Series& Series::operator-=(double v)
{
    c_[0] -= v;
    return *this;
}
Series& Series::operator*=(double v)
{
    for (auto& x : c_) x *= v;
    return *this;
}
Series& Series::operator/=(double v)
{
    for (auto& x : c_) x /= v;
    return *this;
}

Series operator/(double a, const Series& b) { return pow(b, -1.0) *= a; }

Series Series::compose(const Jet& outer) const
{
    const unsigned order = layout_->order;
    if (outer.order() < order) throw std::invalid_argument("Series::compose: jet order too low");
    Series delta = *this;
    delta.c_[0] = 0.0;
    Series result(layout_, outer[0]);
    Series power(layout_, 1.0);
    double inv_fact = 1.0;
    for (unsigned j = 1; j <= order; ++j) {
        power *= delta;
        inv_fact /= static_cast<double>(j);
        const double coeff = outer[j] * inv_fact;
        for (std::size_t i = 0; i < c_.size(); ++i) result.c_[i] += coeff * power.c_[i];
    }
    return result;
}

unsigned Series::order() const { return layout_->order; }

Series exp(const Series& s) { return s.compose(elementary_jet(Elementary::Exp, s.constant(), s.order())); }
Series log(const Series& s) { return s.compose(elementary_jet(Elementary::Log, s.constant(), s.order())); }
Series cos(const Series& s) { return s.compose(elementary_jet(Elementary::Cos, s.constant(), s.order())); }
Series sin(const Series& s) { return s.compose(elementary_jet(Elementary::Sin, s.constant(), s.order())); }
Series tanh(const Series& s) { return s.compose(elementary_jet(Elementary::Tanh, s.constant(), s.order())); }
Series pow(const Series& s, double exponent)
{
    return s.compose(elementary_jet(Elementary::Pow, s.constant(), s.order(), exponent));
}

}  // namespace dbranch
