#pragma once

#include <stdexcept>
#include <string>

namespace cla {

/// Shape or width mismatch between operands.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& m) : std::invalid_argument(m) {}
};

/// A strategy asked for information the scenario hides (e.g. task
/// boundaries on a boundaries-hidden stream).
struct ProtocolError : std::logic_error {
    explicit ProtocolError(const std::string& m) : std::logic_error(m) {}
};

/// Corrupt, truncated, or mismatched binary artifact.
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& m) : std::runtime_error(m) {}
};

/// Runtime backward-pass count exceeded the declared budget.
struct BudgetBreach : std::runtime_error {
    explicit BudgetBreach(const std::string& m) : std::runtime_error(m) {}
};

/// Bad CLI flags or config file contents.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace cla
