#include "dbranch/code_algebra.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace dbranch {

// --- Code ----------------------------------------------------------------

Code Code::f_deriv(Rational coeff, MultiIndex nu)
{
    Code c;
    c.kind_ = Kind::FDeriv;
    c.coeff_ = coeff;
    c.index_ = std::move(nu);
    return c;
}

Code Code::phi_deriv(MultiIndex mu)
{
    if (mu.is_zero()) return identity();
    Code c;
    c.kind_ = Kind::PhiDeriv;
    c.index_ = std::move(mu);
    return c;
}

Code Code::unit() const { return with_coeff(Rational{1}); }

Code Code::with_coeff(Rational c) const
{
    Code out = *this;
    if (kind_ == Kind::FDeriv) out.coeff_ = c;
    return out;
}

std::string Code::str() const
{
    switch (kind_) {
    case Kind::Identity: return "Id";
    case Kind::FDeriv: {
        std::string s = "(";
        if (coeff_ != Rational{1}) s += coeff_.str() + "*";
        return s + "d" + index_.str() + "f)*";
    }
    case Kind::PhiDeriv: return "d" + index_.str();
    }
    return "?";
}

std::ostream& operator<<(std::ostream& os, const Code& c) { return os << c.str(); }

bool code_less(const Code& a, const Code& b)
{
    if (a.kind() != b.kind()) return static_cast<int>(a.kind()) < static_cast<int>(b.kind());
    if (a.is_identity()) return false;
    if (a.index() != b.index()) return precedes(a.index(), b.index());
    return a.coeff() < b.coeff();
}

namespace {

MultiIndex parse_index(std::string_view text)
{
    std::string s(text);
    s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char ch) { return std::isspace(ch); }), s.end());
    if (s.size() < 2 || s.front() != '(' || s.back() != ')')
        throw std::invalid_argument("malformed multi-index '" + std::string(text) + "'");
    std::vector<MultiIndex::value_type> v;
    std::stringstream ss(s.substr(1, s.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
            throw std::invalid_argument("malformed multi-index '" + std::string(text) + "'");
        v.push_back(static_cast<MultiIndex::value_type>(std::stoul(item)));
    }
    return MultiIndex(std::move(v));
}

Rational parse_rational(std::string_view text)
{
    std::string s(text);
    auto slash = s.find('/');
    try {
        if (slash == std::string::npos) return Rational(std::stoll(s));
        return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
    } catch (const std::logic_error&) {
        throw std::invalid_argument("malformed coefficient '" + s + "'");
    }
}

}  // namespace

Code parse_code(std::string_view text, const Signature& sig)
{
    if (text == "Id" || text == "id") return Code::identity();
    if (text == "f") return Code::f_deriv(Rational{1}, MultiIndex(sig.arity()));
    auto colon = text.find(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("unrecognized code '" + std::string(text) + "'");
    auto head = text.substr(0, colon);
    auto rest = text.substr(colon + 1);
    if (head == "phi") {
        auto mu = parse_index(rest);
        if (mu.size() != sig.dim) throw std::invalid_argument("phi index length must equal the dimension");
        return Code::phi_deriv(std::move(mu));
    }
    if (head == "f") {
        Rational coeff{1};
        auto second = rest.find(':');
        if (second != std::string_view::npos) {
            coeff = parse_rational(rest.substr(0, second));
            rest = rest.substr(second + 1);
        }
        auto nu = parse_index(rest);
        if (nu.size() != sig.arity()) throw std::invalid_argument("f index length must equal the arity");
        return Code::f_deriv(coeff, std::move(nu));
    }
    throw std::invalid_argument("unrecognized code '" + std::string(text) + "'");
}

// --- MechanismElement ----------------------------------------------------

Rational MechanismElement::coefficient() const
{
    Rational r{1};
    for (const auto& c : codes)
        if (c.is_f_deriv()) r *= c.coeff();
    return r;
}

std::string MechanismElement::str() const
{
    std::string s = "(";
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (i) s += ", ";
        s += codes[i].str();
    }
    return s + ")";
}

MechanismElement canonicalize(MechanismElement e)
{
    const Rational total = e.coefficient();
    bool has_f = false;
    for (auto& c : e.codes)
        if (c.is_f_deriv()) {
            c = c.unit();
            has_f = true;
        }
    std::sort(e.codes.begin(), e.codes.end(), code_less);
    if (has_f) {
        for (auto& c : e.codes)
            if (c.is_f_deriv()) {
                c = c.with_coeff(total);
                break;
            }
    }
    return e;
}

// --- Faa di Bruno partitions ----------------------------------------------

namespace {

struct PartitionSearch {
    const MultiIndex& target;
    std::size_t arity;
    std::vector<MultiIndex> blocks;  // nonzero l <= target in precedes() order
    std::vector<PartitionTerm>& out;

    struct Chosen {
        std::size_t block;
        std::vector<std::uint32_t> k;  // per argument
    };
    std::vector<Chosen> chosen;

    void emit()
    {
        PartitionTerm term;
        term.nu = MultiIndex(arity);
        Rational denom{1};
        std::vector<MultiIndex::value_type> nu(arity, 0);
        for (const auto& ch : chosen) {
            const MultiIndex& l = blocks[ch.block];
            const auto lfact = static_cast<std::int64_t>(l.factorial_product());
            for (std::size_t q = 0; q < arity; ++q) {
                const auto kq = ch.k[q];
                if (kq == 0) continue;
                nu[q] += kq;
                term.factors.push_back({l, q, kq});
                Rational block_denom{static_cast<std::int64_t>(checked_factorial(kq))};
                for (std::uint32_t i = 0; i < kq; ++i) block_denom *= Rational{lfact};
                denom *= block_denom;
            }
        }
        term.nu = MultiIndex(std::move(nu));
        term.coeff = Rational{static_cast<std::int64_t>(target.factorial_product())} / denom;
        out.push_back(std::move(term));
    }

    // all k in N^arity with |k| = m, lexicographic
    void distribute(std::size_t q, std::uint32_t left, std::vector<std::uint32_t>& k, std::size_t block,
                    const MultiIndex& remaining_after)
    {
        if (q + 1 == arity) {
            k[q] = left;
            chosen.push_back({block, k});
            search(block + 1, remaining_after);
            chosen.pop_back();
            return;
        }
        for (std::uint32_t v = 0; v <= left; ++v) {
            k[q] = v;
            distribute(q + 1, left - v, k, block, remaining_after);
        }
    }

    void search(std::size_t first_block, const MultiIndex& remaining)
    {
        if (remaining.is_zero()) {
            emit();
            return;
        }
        for (std::size_t b = first_block; b < blocks.size(); ++b) {
            const MultiIndex& l = blocks[b];
            MultiIndex used = l;
            for (std::uint32_t m = 1; used.dominated_by(remaining); ++m, used += l) {
                std::vector<std::uint32_t> k(arity, 0);
                distribute(0, m, k, b, remaining - used);
            }
        }
    }
};

void collect_blocks(std::size_t pos, const MultiIndex& target, std::vector<MultiIndex::value_type>& cur,
                    std::vector<MultiIndex>& out)
{
    if (pos == target.size()) {
        MultiIndex m(cur);
        if (!m.is_zero()) out.push_back(std::move(m));
        return;
    }
    for (std::uint32_t v = 0; v <= target[pos]; ++v) {
        cur[pos] = v;
        collect_blocks(pos + 1, target, cur, out);
    }
}

}  // namespace

std::vector<PartitionTerm> enumerate_partitions(const MultiIndex& target, const Signature& sig)
{
    if (target.total_order() == 0) throw std::invalid_argument("enumerate_partitions: |target| must be >= 1");
    if (sig.arity() == 0) throw std::invalid_argument("enumerate_partitions: empty signature");
    std::vector<PartitionTerm> out;
    std::vector<MultiIndex> blocks;
    std::vector<MultiIndex::value_type> cur(target.size(), 0);
    collect_blocks(0, target, cur, blocks);
    std::sort(blocks.begin(), blocks.end(), PrecedesLess{});
    PartitionSearch search{target, sig.arity(), std::move(blocks), out, {}};
    search.search(0, target);
    return out;
}

// --- Mechanism -------------------------------------------------------------

namespace {

void append_partition_children(MechanismElement& e, const PartitionTerm& term, const Signature& sig)
{
    for (const auto& f : term.factors) {
        const MultiIndex child = f.l + sig.lambdas[f.argument];
        for (std::uint32_t i = 0; i < f.multiplicity; ++i) e.codes.push_back(Code::phi_deriv(child));
    }
}

std::vector<MechanismElement> merge_elements(std::vector<MechanismElement> raw)
{
    std::vector<MechanismElement> out;
    std::vector<MechanismElement> keys;
    std::vector<Rational> totals;
    for (auto& e : raw) {
        e = canonicalize(std::move(e));
        MechanismElement key = e;
        for (auto& c : key.codes) c = c.unit();
        auto it = std::find(keys.begin(), keys.end(), key);
        if (it == keys.end()) {
            keys.push_back(std::move(key));
            totals.push_back(e.coefficient());
        } else {
            totals[static_cast<std::size_t>(it - keys.begin())] += e.coefficient();
        }
    }
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (totals[i].is_zero()) continue;
        MechanismElement e = std::move(keys[i]);
        for (auto& c : e.codes)
            if (c.is_f_deriv()) {
                c = c.with_coeff(totals[i]);
                break;
            }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

Mechanism build_mechanism(const Code& c, const Signature& sig, const Rational& diffusivity)
{
    const std::size_t n = sig.arity();
    const std::size_t d = sig.dim;
    for (const auto& l : sig.lambdas)
        if (l.size() != d) throw std::invalid_argument("signature index length differs from dimension");

    const Code f_star = Code::f_deriv(Rational{1}, MultiIndex(n));
    std::vector<MechanismElement> raw;

    switch (c.kind()) {
    case Code::Kind::Identity: raw.push_back({{f_star}}); break;
    case Code::Kind::FDeriv: {
        if (c.index().size() != n) throw std::invalid_argument("FDeriv index length differs from arity");
        for (std::size_t p = 0; p < n; ++p) {
            const Code g_p = Code::f_deriv(c.coeff(), c.index() + MultiIndex::unit(p + 1, n));
            const MultiIndex& lam = sig.lambdas[p];
            if (lam.is_zero()) {
                raw.push_back({{f_star, g_p}});
                continue;
            }
            for (const auto& term : enumerate_partitions(lam, sig)) {
                MechanismElement e{{g_p, Code::f_deriv(term.coeff, term.nu)}};
                append_partition_children(e, term, sig);
                raw.push_back(std::move(e));
            }
        }
        const Rational half_diff = -diffusivity / Rational{2} * c.coeff();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < d; ++k) {
                    const MultiIndex nu = c.index() + MultiIndex::unit(i + 1, n) + MultiIndex::unit(j + 1, n);
                    raw.push_back({{Code::f_deriv(half_diff, nu),
                                    Code::phi_deriv(sig.lambdas[i] + MultiIndex::unit(k + 1, d)),
                                    Code::phi_deriv(sig.lambdas[j] + MultiIndex::unit(k + 1, d))}});
                }
        break;
    }
    case Code::Kind::PhiDeriv: {
        if (c.index().size() != d) throw std::invalid_argument("PhiDeriv index length differs from dimension");
        for (const auto& term : enumerate_partitions(c.index(), sig)) {
            MechanismElement e{{Code::f_deriv(term.coeff, term.nu)}};
            append_partition_children(e, term, sig);
            raw.push_back(std::move(e));
        }
        break;
    }
    }
    return Mechanism{c, merge_elements(std::move(raw))};
}

MechanismTable::MechanismTable(Signature sig, Rational diffusivity)
    : sig_(std::move(sig)), diffusivity_(diffusivity)
{
}

std::size_t MechanismTable::CodeHash::operator()(const Code& c) const noexcept
{
    std::size_t h = std::hash<MultiIndex>{}(c.index());
    h ^= std::hash<Rational>{}(c.coeff()) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h ^ static_cast<std::size_t>(c.kind());
}

const Mechanism& MechanismTable::get(const Code& c) const
{
    {
        std::shared_lock lock(mutex_);
        auto it = cache_.find(c);
        if (it != cache_.end()) return *it->second;
    }
    auto built = std::make_unique<const Mechanism>(build_mechanism(c, sig_, diffusivity_));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = cache_.try_emplace(c, std::move(built));
    return *it->second;
}

std::size_t MechanismTable::cached() const
{
    std::shared_lock lock(mutex_);
    return cache_.size();
}

std::string dump_mechanism(const Mechanism& m)
{
    std::ostringstream os;
    os << "code: " << m.code.str() << "\n";
    os << "q: " << m.size() << "\n";
    os << "element\tcoefficient\tchildren\n";
    for (std::size_t i = 0; i < m.elements.size(); ++i) {
        const auto& e = m.elements[i];
        os << i << "\t" << e.coefficient() << "\t" << e.str() << "\n";
    }
    return os.str();
}

}  // namespace dbranch
