#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cla/alignment.hpp"
#include "cla/budget.hpp"
#include "cla/evaluation.hpp"
#include "cla/networks.hpp"
#include "cla/replay.hpp"
#include "cla/ssl_objectives.hpp"
#include "cla/stream.hpp"

namespace cla::strat {

enum class Kind { finetuning, er, lump, cla_b, cla_e, cla_r, cassle, cassle_r, iid };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& s);

struct StrategyConfig {
    Kind kind = Kind::finetuning;
    ssl::Objective objective = ssl::Objective::simsiam;
    double omega = 0.0;     // alignment strength (CaSSLe variants fix 1)
    double tau = 0.999;     // EMA update parameter
    replay::Policy buffer_policy = replay::Policy::fifo;
    std::size_t buffer_capacity = 2000;
    std::size_t b_r = 0;    // replay batch size (extending strategies)
    std::size_t n_p = 1;    // passes per stream minibatch
    std::size_t iid_b = 0;  // minibatch size for the iid baseline (0 = preset)
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double temperature = 0.5;  // NT-Xent
    double lump_alpha = 0.4;   // Beta(alpha, alpha) interpolation
    std::string label;         // CSV strategy name (defaults to kind name)

    std::string name() const { return label.empty() ? kind_name(kind) : label; }
    bool uses_buffer() const;
    bool extends_batch() const;  // b = b_s + b_r
    bool needs_ema() const;
    bool needs_boundaries() const;
    bool stores_features() const;
    align::Variant variant() const;
    budget::Composition composition() const;

    void validate(std::size_t b_s) const;
    budget::BudgetSpec budget_spec(std::size_t b_s, std::size_t N) const;
};

struct StepTrace {
    std::size_t step = 0;        // optimizer-step index across the run
    std::size_t experience = 0;  // logging only (epoch index for iid runs)
    double loss_total = 0.0;
    double loss_ssl = 0.0;
    double loss_reg = 0.0;  // omega-weighted regularization term
    std::uint64_t cbp_so_far = 0;
    double probe_acc = -1.0;  // filled only at experience ends
    double wall_ms = 0.0;
};

/// Per-minibatch training loop for every online strategy: composes the
/// batch (stream + replay), builds views, runs n_p passes with loss,
/// backward, and SGD, then updates the buffer. Strategies never see
/// experience identity; boundary events arrive only through
/// on_experience_boundary() on boundary-visible streams.
class OnlineTrainer {
public:
    OnlineTrainer(const nets::NetworkArch& arch, StrategyConfig cfg,
                  stream::AugmentationPolicy aug, std::size_t b_s, bool boundaries_visible,
                  std::uint64_t seed, std::uint64_t target_cbp);

    /// Runs the n_p passes on one stream minibatch plus the post-loop
    /// buffer update; returns one trace per optimizer step.
    std::vector<StepTrace> process(const Tensor& x, std::size_t experience_for_log);

    /// CaSSLe variants snapshot the frozen teacher here. Protocol error
    /// on hidden-boundary streams.
    void on_experience_boundary();

    nets::NetworkSet& nets() { return nets_; }
    const nets::NetworkSet& nets() const { return nets_; }
    nets::SgdState& optimizer() { return opt_; }
    budget::BudgetLedger& ledger() { return ledger_; }
    const budget::BudgetLedger& ledger() const { return ledger_; }
    const replay::Buffer& buffer() const { return buffer_; }
    const StrategyConfig& config() const { return cfg_; }
    std::size_t global_step() const { return global_step_; }

    void set_record_wall_time(bool on) { record_wall_time_ = on; }

    /// Test instrumentation: runs after every optimizer step.
    std::function<void(const OnlineTrainer&)> after_pass_hook;

    void export_state(struct RunState& st) const;
    void import_state(const struct RunState& st);

private:
    struct PassResult {
        double total = 0.0, ssl = 0.0, reg_weighted = 0.0;
    };
    PassResult run_pass(const Tensor& x, bool last_pass);
    std::vector<Tensor*> trainables();

    StrategyConfig cfg_;
    stream::AugmentationPolicy aug_;
    std::size_t b_s_ = 0;
    bool boundaries_visible_ = false;
    bool record_wall_time_ = false;

    nets::NetworkSet nets_;
    nets::SgdState opt_;
    replay::Buffer buffer_;
    Rng aug_rng_;
    Rng strat_rng_;
    budget::BudgetLedger ledger_;
    std::size_t global_step_ = 0;

    // last-pass byproducts consumed by the post-loop buffer update
    std::vector<replay::Buffer::Handle> last_handles_;
    std::vector<std::vector<double>> last_zr1_, last_zr2_;
    std::vector<std::vector<double>> last_stream_feat_;
    bool aphi_in_graph_ = false;
};

struct RunOptions {
    bool probe_each_experience = true;
    bool record_wall_time = false;
    std::string run_id;
    std::string csv_path;         // empty: no CSV written
    std::string checkpoint_path;  // empty: no final checkpoint
    std::string resume_from;      // run-state file to continue from
    std::size_t stop_after_batches = 0;  // 0 = full stream
    eval::ProbeConfig probe;
};

struct RunResult {
    std::vector<StepTrace> traces;
    eval::AccuracyRecord record;
    double final_acc = 0.0;
    double avg_acc = 0.0;
    std::uint64_t cbp_declared = 0;
    std::uint64_t cbp_counted = 0;
    budget::LedgerCheck ledger_result;
    std::size_t batches_consumed = 0;
};

/// Full persisted state of a (possibly partial) run.
struct RunState {
    nets::NetworkArch arch;
    nets::NetworkSet nets;
    nets::SgdState opt;
    bool has_buffer = false;
    replay::Buffer buffer;
    std::string aug_rng, strat_rng;
    std::uint64_t ledger_counted = 0, ledger_target = 0;
    std::uint64_t global_step = 0;
    std::uint64_t batches_consumed = 0;
    eval::AccuracyRecord record;
    double final_acc = -1.0;
    std::uint64_t final_probe_seed = 0;
    std::uint64_t dataset_fingerprint = 0;
    std::uint64_t plan_T = 0;      // split reconstruction inputs
    std::uint64_t plan_seed = 0;

    void save_file(const std::string& path) const;
    static RunState load_file(const std::string& path);
};

std::uint64_t dataset_fingerprint(const stream::Dataset& d);

/// Executes the full stream for one (strategy, seed) cell: probes after
/// each experience, emits the step-trace CSV, enforces the ledger, and
/// optionally writes a resumable checkpoint.
RunResult run_experiment(const stream::Dataset& data, const stream::StreamPlan& plan,
                         const stream::AugmentationPolicy& aug, const nets::NetworkArch& arch,
                         const StrategyConfig& cfg, std::uint64_t seed, const RunOptions& opt);

/// Budget-capped i.i.d. SSL training: reshuffled epochs of size-b
/// minibatches consumed until the target CBP is met within one granule.
/// Starting networks may be supplied (continue-iid); otherwise fresh.
struct IidOptions {
    std::size_t b = 0;
    std::uint64_t target_cbp = 0;
    std::size_t probe_points = 0;  // extra evenly spaced probes (besides the final one)
    eval::ProbeConfig probe;
    std::string run_id;
    std::string csv_path;
    bool record_wall_time = false;
    bool probe_at_start = false;       // probe before any training (continue-iid curve)
    std::uint64_t first_probe_seed = 0;  // reuse a recorded probe seed for reproducibility
};

struct IidRunResult {
    std::vector<StepTrace> traces;
    std::vector<std::pair<std::uint64_t, double>> probe_curve;  // (cbp, accuracy)
    double final_acc = 0.0;
    std::uint64_t cbp_counted = 0;
};

IidRunResult run_iid(const stream::Dataset& data, const std::vector<std::size_t>& train_idx,
                     const std::vector<std::size_t>& val_idx, const stream::AugmentationPolicy& aug,
                     const nets::NetworkArch& arch, const StrategyConfig& cfg, std::uint64_t seed,
                     const IidOptions& opt, nets::NetworkSet* warm_start = nullptr,
                     nets::SgdState* warm_opt = nullptr, std::uint64_t cbp_offset = 0);

/// Canonical CSV cell formatting (deterministic double round-trip; -0
/// canonicalized to 0).
std::string csv_double(double v);
void write_run_csv(const std::string& path, const std::string& run_id, std::uint64_t seed,
                   const std::string& strategy, const std::string& objective,
                   const std::vector<StepTrace>& traces);

}  // namespace cla::strat
