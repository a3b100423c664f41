#include "cla/budget.hpp"

namespace cla::budget {

void BudgetSpec::validate() const {
    if (n_v == 0 || b == 0 || b_s == 0 || n_p == 0 || N == 0)
        throw DimensionError("BudgetSpec: all quantities must be positive");
    std::uint64_t expect = 0;
    switch (composition) {
        case Composition::stream_only: expect = b_s; break;
        case Composition::replay_only: expect = b_r; break;
        case Composition::stream_plus_replay: expect = b_s + b_r; break;
    }
    if (b != expect)
        throw DimensionError("BudgetSpec: b=" + std::to_string(b) +
                             " does not match the declared composition (expected " +
                             std::to_string(expect) + ")");
}

std::uint64_t cbp(const BudgetSpec& spec) {
    spec.validate();
    const std::uint64_t n_steps = spec.n_p * (spec.N / spec.b_s);
    return spec.n_v * n_steps * spec.b;
}

std::uint64_t iid_epochs(const BudgetSpec& spec) {
    spec.validate();
    return (spec.n_p * spec.b + spec.b_s - 1) / spec.b_s;
}

ParityReport assert_parity(const std::vector<std::pair<std::string, BudgetSpec>>& specs) {
    if (specs.size() < 2) {
        ParityReport r;
        if (specs.size() == 1) {
            r.entries.push_back({specs[0].first, cbp(specs[0].second), specs[0].second.composition});
            r.message = "single spec, parity trivially holds";
        } else {
            r.ok = false;
            r.message = "parity needs at least one spec";
        }
        return r;
    }
    ParityReport r;
    for (const auto& [name, spec] : specs)
        r.entries.push_back({name, cbp(spec), spec.composition});
    const std::uint64_t ref = r.entries.front().cbp;
    for (const auto& e : r.entries) {
        if (e.cbp != ref) {
            r.ok = false;
            r.message += (r.message.empty() ? "" : "; ") + e.name + " declares CBP " +
                         std::to_string(e.cbp) + " != " + std::to_string(ref);
        }
    }
    if (r.ok) r.message = "parity holds at CBP " + std::to_string(ref);
    return r;
}

LedgerCheck ledger_check(const BudgetLedger& ledger, const BudgetSpec& spec) {
    LedgerCheck c;
    c.counted = ledger.counted();
    c.declared = cbp(spec);
    const bool divisible = spec.N % spec.b_s == 0;
    c.tolerance = divisible ? 0 : spec.n_p * spec.n_v * spec.b;
    if (c.counted > c.declared + c.tolerance) {
        c.breach = true;
        c.pass = false;
        c.message = "budget breach: counted " + std::to_string(c.counted) + " > declared " +
                    std::to_string(c.declared) + " (+tolerance " + std::to_string(c.tolerance) + ")";
        return c;
    }
    c.pass = c.counted + c.tolerance >= c.declared;
    c.message = c.pass ? "ledger within budget (counted " + std::to_string(c.counted) + " of " +
                             std::to_string(c.declared) + ")"
                       : "ledger undershoot: counted " + std::to_string(c.counted) + " of " +
                             std::to_string(c.declared);
    return c;
}

}  // namespace cla::budget
