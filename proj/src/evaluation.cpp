#include "cla/evaluation.hpp"

#include <algorithm>
#include <set>

namespace cla::eval {

Tensor extract_features(const nets::LearnerNet& theta, const stream::Dataset& d,
                        const std::vector<std::size_t>& indices) {
    return theta.infer_features(d.gather(indices));
}

namespace {

double accuracy_of(const Tensor& w, const Tensor& b, const Tensor& x, const std::vector<int>& y) {
    const std::size_t n = x.rows(), f = x.cols(), c = b.count();
    std::size_t hits = 0;
    std::vector<double> logits(c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) logits[j] = b.data[j];
        const double* xi = &x.data[i * f];
        for (std::size_t p = 0; p < f; ++p) {
            const double v = xi[p];
            const double* wrow = &w.data[p * c];
            for (std::size_t j = 0; j < c; ++j) logits[j] += v * wrow[j];
        }
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits[j] > logits[best]) best = j;
        if (static_cast<int>(best) == y[i]) hits++;
    }
    return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

Probe train_probe(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& val_x,
                  const std::vector<int>& val_y, std::size_t class_count, const ProbeConfig& cfg,
                  std::uint64_t seed) {
    if (train_x.rows() != train_y.size() || val_x.rows() != val_y.size())
        throw DimensionError("train_probe: feature/label count mismatch");
    for (double v : train_x.data)
        if (!std::isfinite(v)) throw DimensionError("train_probe: non-finite features");
    {
        std::set<int> distinct(train_y.begin(), train_y.end());
        if (distinct.size() < 2) throw DimensionError("train_probe: single-class labels");
    }

    const std::size_t f = train_x.cols();
    Tensor w = Tensor::zeros({f, class_count});
    Tensor b = Tensor::zeros({class_count});
    w.requires_grad = true;
    b.requires_grad = true;

    nets::SgdState opt(cfg.lr_init, cfg.momentum, cfg.weight_decay);
    Rng rng(Rng::mix(seed, 0x9206E));

    Probe best;
    best.w = w;
    best.b = b;
    best.val_accuracy = -1.0;

    std::vector<std::size_t> order(train_x.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double lr = cfg.lr_init;
    std::size_t since_improve = 0;
    Probe out;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (lr < cfg.lr_min) break;
        out.lr_history.push_back(lr);
        opt.learning_rate = lr;
        rng.shuffle(order);
        for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch) {
            const std::size_t take = std::min(cfg.batch, order.size() - pos);
            Tensor bx = Tensor::zeros({take, f});
            std::vector<int> by(take);
            for (std::size_t i = 0; i < take; ++i) {
                const std::size_t src = order[pos + i];
                std::copy(&train_x.data[src * f], &train_x.data[(src + 1) * f], &bx.data[i * f]);
                by[i] = train_y[src];
            }
            ad::Graph g;
            ad::Var logits = ad::add_rowvec(ad::matmul(g.constant(std::move(bx)), g.leaf(w)), g.leaf(b));
            ad::Var loss = ad::softmax_cross_entropy_rows(logits, std::move(by));
            g.backward(loss);
            nets::sgd_step({&w, &b}, opt);
        }
        out.epochs_run = epoch + 1;
        const double acc = accuracy_of(w, b, val_x, val_y);
        if (acc > best.val_accuracy) {
            best.w = w;
            best.b = b;
            best.val_accuracy = acc;
            since_improve = 0;
        } else if (++since_improve >= cfg.patience) {
            lr /= cfg.lr_decay_factor;
            since_improve = 0;
        }
    }
    out.w = std::move(best.w);
    out.b = std::move(best.b);
    out.val_accuracy = best.val_accuracy;
    return out;
}

double probe_accuracy(const Probe& p, const Tensor& x, const std::vector<int>& y) {
    return accuracy_of(p.w, p.b, x, y);
}

std::pair<double, double> final_and_average_accuracy(const AccuracyRecord& rec) {
    if (rec.per_experience.empty())
        throw DimensionError("final_and_average_accuracy: need at least one record");
    double sum = 0.0;
    for (double a : rec.per_experience) sum += a;
    return {rec.per_experience.back(), sum / static_cast<double>(rec.per_experience.size())};
}

}  // namespace cla::eval
