#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cla/rng.hpp"
#include "cla/tensor.hpp"

namespace cla::stream {

/// Labeled dataset. Labels are used only to split the stream and to
/// train/evaluate probes; the learner never sees them.
struct Dataset {
    std::size_t dim = 0;
    std::size_t class_count = 0;
    std::vector<double> inputs;  // N x dim row-major
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    const double* row(std::size_t i) const { return &inputs[i * dim]; }
    void validate() const;

    /// Materializes the given sample rows as a [k x dim] tensor.
    Tensor gather(const std::vector<std::size_t>& indices) const;
};

struct AugmentationPolicy {
    double noise_sigma = 0.1;
    double mask_fraction = 0.1;
    double scale_jitter = 0.1;

    static AugmentationPolicy none() { return AugmentationPolicy{0.0, 0.0, 0.0}; }
};

/// Class-incremental stream over a dataset: T experiences with disjoint
/// label sets, a stratified 10% validation holdout, and a one-pass
/// minibatch schedule of size b_s per experience.
struct StreamPlan {
    std::size_t T = 1;
    std::size_t b_s = 10;
    std::size_t n_p = 1;
    bool boundaries_visible = false;

    std::vector<std::vector<std::size_t>> experience_train;  // shuffled sample indices
    std::vector<std::size_t> val_indices;

    struct Batch {
        std::size_t experience;
        std::size_t offset;  // into experience_train[experience]
        std::size_t count;
    };
    std::vector<Batch> schedule;

    std::size_t train_size() const;
    std::vector<std::size_t> train_indices_sorted() const;
    std::vector<std::size_t> val_indices_sorted() const;

    /// Boundary information gate: hidden-boundary plans refuse to reveal
    /// experience structure to strategies.
    void require_boundaries() const {
        if (!boundaries_visible)
            throw ProtocolError("stream: task boundaries are hidden in this plan");
    }
};

struct StreamCursor {
    std::size_t next = 0;
};

struct Minibatch {
    Tensor x;
    std::size_t experience;  // logging/probing only
    std::size_t index;
    bool last_of_experience;
};

StreamPlan split_class_incremental(const Dataset& d, std::size_t T, std::size_t b_s,
                                   std::size_t n_p, bool boundaries_visible, std::uint64_t seed);

/// Advances the cursor; empty when the one-pass stream is exhausted.
std::optional<Minibatch> next_minibatch(const Dataset& d, const StreamPlan& plan, StreamCursor& cur);

/// Two independently augmented views of x (scale jitter per row, then
/// coordinate masking, then additive Gaussian noise).
std::pair<Tensor, Tensor> make_views(const Tensor& x, const AugmentationPolicy& policy, Rng& rng);

/// Per-epoch reshuffled full-size minibatches over the given sample set;
/// incomplete final batches are dropped so b stays constant.
class IidSchedule {
public:
    IidSchedule(const Dataset& d, std::vector<std::size_t> indices, std::size_t b,
                std::size_t n_epochs, std::uint64_t seed);
    std::optional<Tensor> next();
    std::size_t epoch() const { return epoch_; }
    std::size_t batches_per_epoch() const { return order_.size() / b_; }

private:
    const Dataset& data_;
    std::vector<std::size_t> order_;
    std::size_t b_;
    std::size_t n_epochs_;
    std::size_t epoch_ = 0;
    std::size_t pos_ = 0;
    Rng rng_;
};

/// Gaussian class clusters with exactly cluster_sep pairwise mean
/// distances on a random orthonormal frame; unit within-class variance.
Dataset make_synthetic(std::size_t class_count, std::size_t per_class, std::size_t dim,
                       double cluster_sep, std::uint64_t seed);

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace cla::stream
