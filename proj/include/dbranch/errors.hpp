#pragma once

#include <stdexcept>
#include <string>

namespace dbranch {

/// An oracle was evaluated outside the domain of its function (log of a
/// non-positive number, division by a vanishing second derivative, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A coding tree grew past the configured node budget.
class BudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Requested derivative order exceeds what the jet arithmetic supports.
class OrderTooHigh : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

}  // namespace dbranch
