#pragma once

#include <iosfwd>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dbranch/multiindex.hpp"
#include "dbranch/rational.hpp"

namespace dbranch {

/// Gradient signature of a PDE: the space dimension d and the derivative
/// indices lambda^1..lambda^n (each in N^d) fed to the nonlinearity.
struct Signature {
    std::size_t dim = 1;
    std::vector<MultiIndex> lambdas;

    std::size_t arity() const { return lambdas.size(); }
};

/// Label of a coding-tree node.
///
/// Identity evaluates to u itself; FDeriv(a, nu) to a * (d_nu f)(d_lambda u...);
/// PhiDeriv(mu) to d_mu u. PhiDeriv with mu = 0 is stored as Identity.
class Code {
public:
    enum class Kind { Identity, FDeriv, PhiDeriv };

    Code() = default;  // Identity
    static Code identity() { return {}; }
    static Code f_deriv(Rational coeff, MultiIndex nu);
    static Code phi_deriv(MultiIndex mu);

    Kind kind() const { return kind_; }
    bool is_identity() const { return kind_ == Kind::Identity; }
    bool is_f_deriv() const { return kind_ == Kind::FDeriv; }
    bool is_phi_deriv() const { return kind_ == Kind::PhiDeriv; }

    /// FDeriv coefficient; 1 for the other kinds.
    const Rational& coeff() const { return coeff_; }
    /// nu for FDeriv, mu for PhiDeriv, empty for Identity.
    const MultiIndex& index() const { return index_; }

    /// Same code with coefficient 1 (FDeriv only; others unchanged).
    Code unit() const;
    Code with_coeff(Rational c) const;

    friend bool operator==(const Code&, const Code&) = default;

    std::string str() const;

private:
    Kind kind_ = Kind::Identity;
    Rational coeff_{1};
    MultiIndex index_;
};

/// Canonical order of children: Identity, then FDeriv by nu, then PhiDeriv
/// by mu (indices compared with precedes()).
bool code_less(const Code& a, const Code& b);

/// Parse "Id", "f", "f:(0,1)", "f:-1/2:(2)" or "phi:(1,0)".
Code parse_code(std::string_view text, const Signature& sig);

/// One branching outcome: the tuple of child codes.
struct MechanismElement {
    std::vector<Code> codes;

    friend bool operator==(const MechanismElement&, const MechanismElement&) = default;
    /// Product of all FDeriv coefficients.
    Rational coefficient() const;
    std::string str() const;
};

/// Move every FDeriv coefficient onto the first FDeriv child (others get 1)
/// and sort children with code_less. Idempotent.
MechanismElement canonicalize(MechanismElement e);

/// The mechanism set M(c) with its size q.
struct Mechanism {
    Code code;
    std::vector<MechanismElement> elements;

    std::size_t size() const { return elements.size(); }
};

/// One factor of a Faa di Bruno term: (d_l of argument q)^multiplicity,
/// i.e. `multiplicity` children d_{l + lambda^q}. `argument` is 0-based.
struct PartitionFactor {
    MultiIndex l;
    std::size_t argument = 0;
    std::uint32_t multiplicity = 0;

    friend bool operator==(const PartitionFactor&, const PartitionFactor&) = default;
};

/// coeff * (d_nu g)(...) * prod factors, one term of d_target g(d_lambda1 u, ...).
struct PartitionTerm {
    Rational coeff;
    MultiIndex nu;
    std::vector<PartitionFactor> factors;

    friend bool operator==(const PartitionTerm&, const PartitionTerm&) = default;
};

/// All terms of the multivariate Faa di Bruno expansion of d_target g*(u),
/// where g takes sig.arity() arguments. Distinct blocks l^1 < ... < l^s
/// (strict in precedes()), each with a nonzero k_r in N^n; coefficient
/// target! / prod_{r,q} k_r^q! (l^r!)^{k_r^q}. Throws for |target| = 0.
std::vector<PartitionTerm> enumerate_partitions(const MultiIndex& target, const Signature& sig);

/// M(c) computed from scratch (no memoization).
///
/// The diffusion term contributes -diffusivity/2 * (d_{1_i + 1_j} g)* for
/// every ordered pair (i, j). Elements that coincide after canonicalization
/// are merged by summing their coefficients, so q counts distinct
/// structures and the expansion is unchanged.
Mechanism build_mechanism(const Code& c, const Signature& sig, const Rational& diffusivity);

/// Thread-safe memoized M(c) for one (signature, diffusivity).
///
/// References returned by get() stay valid for the lifetime of the table.
class MechanismTable {
public:
    MechanismTable(Signature sig, Rational diffusivity);

    const Mechanism& get(const Code& c) const;

    const Signature& signature() const { return sig_; }
    const Rational& diffusivity() const { return diffusivity_; }
    std::size_t cached() const;

private:
    struct CodeHash {
        std::size_t operator()(const Code& c) const noexcept;
    };

    Signature sig_;
    Rational diffusivity_;
    mutable std::shared_mutex mutex_;
    mutable std::unordered_map<Code, std::unique_ptr<const Mechanism>, CodeHash> cache_;
};

/// Text table of M(c): the code, q, and one row per element.
std::string dump_mechanism(const Mechanism& m);

std::ostream& operator<<(std::ostream& os, const Code& c);

}  // namespace dbranch
