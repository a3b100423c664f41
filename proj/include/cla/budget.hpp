#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cla/errors.hpp"

namespace cla::budget {

enum class Composition { stream_only, replay_only, stream_plus_replay };

/// Input to the CBP arithmetic (Eq. 4/5 quantities). All exact integers.
struct BudgetSpec {
    std::uint64_t n_v = 2;  // views per sample
    std::uint64_t b = 0;    // total training minibatch size
    std::uint64_t b_s = 0;  // stream minibatch size
    std::uint64_t b_r = 0;  // replay minibatch size
    std::uint64_t n_p = 1;  // passes per stream minibatch
    std::uint64_t N = 0;    // training-split size
    Composition composition = Composition::stream_only;

    void validate() const;
};

/// CBP = n_v * (n_p * N / b_s) * b, with floor division when b_s does not
/// divide N. Exact integer arithmetic.
std::uint64_t cbp(const BudgetSpec& spec);

/// Epochs needed by an i.i.d. run for equivalent CBP: ceil(n_p * b / b_s).
std::uint64_t iid_epochs(const BudgetSpec& spec);

struct ParityReport {
    bool ok = true;
    struct Entry {
        std::string name;
        std::uint64_t cbp;
        Composition composition;
    };
    std::vector<Entry> entries;
    std::string message;
};

/// Passes iff every spec declares the same CBP.
ParityReport assert_parity(const std::vector<std::pair<std::string, BudgetSpec>>& specs);

/// Runtime count of examples entering backward passes (n_v * b per step).
class BudgetLedger {
public:
    BudgetLedger() = default;
    explicit BudgetLedger(std::uint64_t target) : target_(target) {}

    void count_backward(std::uint64_t n_v, std::uint64_t batch_examples) {
        counted_ += n_v * batch_examples;
    }

    std::uint64_t counted() const { return counted_; }
    std::uint64_t target() const { return target_; }
    void set_target(std::uint64_t t) { target_ = t; }
    void restore_count(std::uint64_t c) { counted_ = c; }

private:
    std::uint64_t counted_ = 0;
    std::uint64_t target_ = 0;
};

struct LedgerCheck {
    bool pass = false;
    bool breach = false;  // counted work exceeded the declared budget
    std::uint64_t counted = 0;
    std::uint64_t declared = 0;
    std::uint64_t tolerance = 0;
    std::string message;
};

/// Counted examples must equal cbp(spec) exactly when b_s divides N;
/// otherwise the kept final short minibatch is absorbed by a tolerance of
/// n_p * n_v * b. Exceeding the allowance is a budget breach.
LedgerCheck ledger_check(const BudgetLedger& ledger, const BudgetSpec& spec);

}  // namespace cla::budget
