#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace execkit {

/// Invalid market or solver description (dimensions, stochasticity, PSD, ...).
class SpecError : public std::runtime_error {
public:
    explicit SpecError(const std::string& what) : std::runtime_error(what) {}
    SpecError(const std::string& what, std::vector<std::string> issues)
        : std::runtime_error(what), issues_(std::move(issues)) {}

    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    std::vector<std::string> issues_;
};

/// A caller broke an operation's precondition (e.g. selling more than is held).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// A trade so large that an impact factor (1 - cost) is no longer positive.
class ImpactOverflow : public std::runtime_error {
public:
    explicit ImpactOverflow(const std::string& what) : std::runtime_error(what) {}
};

/// Utility evaluated outside its domain, or terminal wealth collapsed to <= 0.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// The DP cash grid cannot cover the normalized cash the problem can reach.
class GridCoverageError : public std::runtime_error {
public:
    GridCoverageError(const std::string& what, double required_upper)
        : std::runtime_error(what), required_upper_(required_upper) {}

    double required_upper() const noexcept { return required_upper_; }

private:
    double required_upper_;
};

}  // namespace execkit
