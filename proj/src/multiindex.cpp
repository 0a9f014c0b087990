#include "dbranch/multiindex.hpp"

#include <limits>
#include <ostream>
#include <stdexcept>

namespace dbranch {

namespace {

void require_same_length(const MultiIndex& a, const MultiIndex& b)
{
    if (a.size() != b.size())
        throw std::invalid_argument("MultiIndex length mismatch: " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out)) throw std::overflow_error("factorial overflow");
    return out;
}

}  // namespace

MultiIndex MultiIndex::unit(std::size_t position, std::size_t dim)
{
    if (position < 1 || position > dim)
        throw std::invalid_argument("unit position " + std::to_string(position) + " outside 1.." +
                                    std::to_string(dim));
    MultiIndex m(dim);
    m.e_[position - 1] = 1;
    return m;
}

std::uint64_t MultiIndex::total_order() const
{
    std::uint64_t s = 0;
    for (auto v : e_) s += v;
    return s;
}

bool MultiIndex::is_zero() const
{
    for (auto v : e_)
        if (v != 0) return false;
    return true;
}

std::uint64_t checked_factorial(std::uint64_t n)
{
    std::uint64_t f = 1;
    for (std::uint64_t i = 2; i <= n; ++i) f = checked_mul(f, i);
    return f;
}

std::uint64_t MultiIndex::factorial_product() const
{
    std::uint64_t p = 1;
    for (auto v : e_) p = checked_mul(p, checked_factorial(v));
    return p;
}

bool MultiIndex::dominated_by(const MultiIndex& other) const
{
    require_same_length(*this, other);
    for (std::size_t i = 0; i < e_.size(); ++i)
        if (e_[i] > other.e_[i]) return false;
    return true;
}

MultiIndex& MultiIndex::operator+=(const MultiIndex& other)
{
    require_same_length(*this, other);
    for (std::size_t i = 0; i < e_.size(); ++i)
        if (__builtin_add_overflow(e_[i], other.e_[i], &e_[i])) throw std::overflow_error("MultiIndex overflow");
    return *this;
}

MultiIndex& MultiIndex::operator-=(const MultiIndex& other)
{
    require_same_length(*this, other);
    for (std::size_t i = 0; i < e_.size(); ++i) {
        if (other.e_[i] > e_[i]) throw std::underflow_error("MultiIndex subtraction below zero");
        e_[i] -= other.e_[i];
    }
    return *this;
}

MultiIndex MultiIndex::scaled(std::uint32_t k) const
{
    MultiIndex out = *this;
    for (auto& v : out.e_)
        if (__builtin_mul_overflow(v, k, &v)) throw std::overflow_error("MultiIndex overflow");
    return out;
}

std::string MultiIndex::str() const
{
    std::string s = "(";
    for (std::size_t i = 0; i < e_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(e_[i]);
    }
    return s + ")";
}

bool precedes(const MultiIndex& k, const MultiIndex& l)
{
    require_same_length(k, l);
    auto ok = k.total_order();
    auto ol = l.total_order();
    if (ok != ol) return ok < ol;
    for (std::size_t i = 0; i < k.size(); ++i)
        if (k[i] != l[i]) return k[i] < l[i];
    return false;
}

namespace {

void fill_order(std::size_t pos, std::uint32_t remaining, std::vector<MultiIndex::value_type>& cur,
                std::vector<MultiIndex>& out)
{
    if (pos + 1 == cur.size()) {
        cur[pos] = remaining;
        out.emplace_back(cur);
        return;
    }
    // ascending in the leading entry matches precedes() within one order
    for (std::uint32_t v = 0; v <= remaining; ++v) {
        cur[pos] = v;
        fill_order(pos + 1, remaining - v, cur, out);
    }
}

}  // namespace

std::vector<MultiIndex> indices_of_order(std::size_t dim, std::uint32_t order)
{
    std::vector<MultiIndex> out;
    if (dim == 0) return out;
    std::vector<MultiIndex::value_type> cur(dim, 0);
    fill_order(0, order, cur, out);
    return out;
}

std::ostream& operator<<(std::ostream& os, const MultiIndex& m) { return os << m.str(); }

}  // namespace dbranch
