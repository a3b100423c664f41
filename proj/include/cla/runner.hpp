#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cla/budget.hpp"
#include "cla/strategies.hpp"

namespace cla::runner {

/// Resolved experiment description: dataset, stream shape, budget preset,
/// strategy cells, seeds, and output destination.
struct ExperimentManifest {
    std::string name = "experiment";
    std::string dataset;  // file path or "synthetic:classes=..,per_class=..,dim=..,sep=..,seed=.."
    std::size_t experiences = 10;
    std::size_t b_s = 10;
    std::string budget_preset = "low_cbp";  // low_cbp | high_cbp | custom
    bool boundaries_visible = false;
    std::vector<strat::StrategyConfig> strategies;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    eval::ProbeConfig probe;
    stream::AugmentationPolicy augment;
    std::string out_dir;  // joined under the output root when relative
    std::size_t workers = 1;
    bool record_wall_time = false;
    bool probe_each_experience = true;
    std::uint64_t additional_cbp = 0;  // continue-iid phase budget
    std::size_t probe_points = 3;      // continue-iid intermediate probes
};

/// Parses and fully validates a JSON config: defaults resolved, unknown
/// keys rejected, budget parity enforced against the materialized dataset.
ExperimentManifest parse_config(const std::string& path);
ExperimentManifest parse_config_text(const std::string& text, const std::string& source);

/// Canonical JSON echo of a resolved manifest (reparses to an equal manifest).
std::string manifest_to_json(const ExperimentManifest& m);

/// Loads a dataset file or generates the synthetic dataset a descriptor
/// describes.
stream::Dataset materialize_dataset(const std::string& descriptor);

/// Training-split size the stratified holdout leaves for a dataset.
std::size_t train_split_size(const stream::Dataset& d);

/// The manifest's common CBP: preset-derived, or taken from the (parity
/// checked) strategy list for custom budgets.
std::uint64_t reference_cbp(const ExperimentManifest& m, std::size_t N);

budget::ParityReport manifest_parity(const ExperimentManifest& m, std::size_t N);

struct CellResult {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string strategy;
    std::string objective;
    std::uint64_t cbp_declared = 0;
    std::uint64_t cbp_counted = 0;
    double final_acc = 0.0;
    double avg_acc = 0.0;
    bool failed = false;
    std::string error;
};

struct ManifestRunResult {
    std::vector<CellResult> cells;
    std::string out_path;
    int exit_code = 0;
};

/// Executes all (strategy x seed) cells with a bounded worker pool and
/// writes per-run CSVs, runs.csv, summary.csv, plot data, checkpoints,
/// and the manifest echo.
ManifestRunResult run_manifest(const ExperimentManifest& m, const std::string& out_root);

/// Loads a run checkpoint and continues pretraining on i.i.d. data for
/// manifest.additional_cbp more backward-pass budget, probing along the
/// way; emits the two-phase accuracy curve.
int continue_iid(const std::string& checkpoint_path, const ExperimentManifest& m,
                 const std::string& out_root);

std::string output_root_from_env();

}  // namespace cla::runner
