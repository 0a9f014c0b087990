#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dbranch {

/// Exponent vector in N^dim: a derivative order per coordinate (space
/// indices) or per nonlinearity argument.
///
/// The length is fixed at construction. Arithmetic is checked and throws
/// std::overflow_error instead of wrapping.
class MultiIndex {
public:
    using value_type = std::uint32_t;

    MultiIndex() = default;
    explicit MultiIndex(std::size_t dim) : e_(dim, 0) {}
    MultiIndex(std::initializer_list<value_type> entries) : e_(entries) {}
    explicit MultiIndex(std::vector<value_type> entries) : e_(std::move(entries)) {}

    /// The vector with a single 1 at 1-based `position`.
    static MultiIndex unit(std::size_t position, std::size_t dim);

    std::size_t size() const { return e_.size(); }
    value_type operator[](std::size_t i) const { return e_[i]; }
    std::span<const value_type> entries() const { return e_; }

    /// Sum of entries.
    std::uint64_t total_order() const;
    bool is_zero() const;

    /// Product of the factorials of the entries, exact.
    std::uint64_t factorial_product() const;

    /// Componentwise a <= b.
    bool dominated_by(const MultiIndex& other) const;

    MultiIndex& operator+=(const MultiIndex& other);
    MultiIndex& operator-=(const MultiIndex& other);
    friend MultiIndex operator+(MultiIndex a, const MultiIndex& b) { return a += b; }
    friend MultiIndex operator-(MultiIndex a, const MultiIndex& b) { return a -= b; }
    /// Every entry multiplied by `k`.
    MultiIndex scaled(std::uint32_t k) const;

    friend bool operator==(const MultiIndex&, const MultiIndex&) = default;

    std::string str() const;

private:
    std::vector<value_type> e_;
};

/// Total order on indices of equal length: lower total order first, ties
/// broken by the first differing entry.
bool precedes(const MultiIndex& k, const MultiIndex& l);

inline std::uint64_t total_order(const MultiIndex& m) { return m.total_order(); }
inline MultiIndex unit(std::size_t position, std::size_t dim) { return MultiIndex::unit(position, dim); }
inline std::uint64_t factorial_product(const MultiIndex& m) { return m.factorial_product(); }

/// Checked n! in 64 bits.
std::uint64_t checked_factorial(std::uint64_t n);

/// Every index of length `dim` with total order exactly `order`, in
/// increasing precedes() order.
std::vector<MultiIndex> indices_of_order(std::size_t dim, std::uint32_t order);

/// Strict weak order adaptor for std containers.
struct PrecedesLess {
    bool operator()(const MultiIndex& a, const MultiIndex& b) const { return precedes(a, b); }
};

std::ostream& operator<<(std::ostream& os, const MultiIndex& m);

}  // namespace dbranch

template <>
struct std::hash<dbranch::MultiIndex> {
    std::size_t operator()(const dbranch::MultiIndex& m) const noexcept
    {
        std::size_t h = 0xcbf29ce484222325ULL ^ m.size();
        for (auto v : m.entries()) {
            h ^= v;
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};
