#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cla/networks.hpp"
#include "cla/stream.hpp"

namespace cla::eval {

struct ProbeConfig {
    std::size_t batch = 256;
    double lr_init = 0.05;
    double lr_decay_factor = 3.0;
    std::size_t max_epochs = 100;
    double lr_min = 1e-4;
    std::size_t patience = 5;  // epochs without validation improvement
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

/// Trained linear classifier (best-validation snapshot).
struct Probe {
    Tensor w;  // [f x C]
    Tensor b;  // [C]
    double val_accuracy = 0.0;
    std::vector<double> lr_history;  // learning rate used at each epoch
    std::size_t epochs_run = 0;
};

/// Frozen eval-mode encoder representations (pre-projector) of the given
/// dataset rows.
Tensor extract_features(const nets::LearnerNet& theta, const stream::Dataset& d,
                        const std::vector<std::size_t>& indices);

/// Multinomial logistic probe trained by SGD with a
/// divide-by-3-on-plateau schedule; halts at lr < lr_min or max_epochs.
Probe train_probe(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& val_x,
                  const std::vector<int>& val_y, std::size_t class_count, const ProbeConfig& cfg,
                  std::uint64_t seed);

double probe_accuracy(const Probe& p, const Tensor& x, const std::vector<int>& y);

struct AccuracyRecord {
    std::vector<double> per_experience;  // a_1..a_T, probe after each experience
};

/// final = a_T; avg = mean of a_1..a_T.
std::pair<double, double> final_and_average_accuracy(const AccuracyRecord& rec);

}  // namespace cla::eval
