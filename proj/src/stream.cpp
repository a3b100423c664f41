#include "cla/stream.hpp"

#include <algorithm>
#include <cmath>

#include "cla/binio.hpp"

namespace cla::stream {

void Dataset::validate() const {
    if (dim == 0 || class_count == 0) throw DimensionError("Dataset: empty dimensions");
    if (inputs.size() != size() * dim) throw DimensionError("Dataset: input payload does not match N x dim");
    if (size() < class_count) throw DimensionError("Dataset: fewer samples than classes");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= class_count)
            throw DimensionError("Dataset: label out of range");
}

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
    Tensor t = Tensor::zeros({indices.size(), dim});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = row(indices[i]);
        std::copy(src, src + dim, &t.data[i * dim]);
    }
    return t;
}

std::size_t StreamPlan::train_size() const {
    std::size_t n = 0;
    for (const auto& e : experience_train) n += e.size();
    return n;
}

std::vector<std::size_t> StreamPlan::train_indices_sorted() const {
    std::vector<std::size_t> out;
    out.reserve(train_size());
    for (const auto& e : experience_train) out.insert(out.end(), e.begin(), e.end());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::size_t> StreamPlan::val_indices_sorted() const {
    std::vector<std::size_t> out = val_indices;
    std::sort(out.begin(), out.end());
    return out;
}

StreamPlan split_class_incremental(const Dataset& d, std::size_t T, std::size_t b_s,
                                   std::size_t n_p, bool boundaries_visible, std::uint64_t seed) {
    d.validate();
    if (T == 0 || d.class_count < T)
        throw DimensionError("split_class_incremental: need at least one class per experience");
    if (b_s == 0 || n_p == 0) throw DimensionError("split_class_incremental: b_s and n_p must be positive");

    Rng rng(Rng::mix(seed, 0xC1A55E5));

    std::vector<std::vector<std::size_t>> by_class(d.class_count);
    for (std::size_t i = 0; i < d.size(); ++i) by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);

    StreamPlan plan;
    plan.T = T;
    plan.b_s = b_s;
    plan.n_p = n_p;
    plan.boundaries_visible = boundaries_visible;

    // stratified 10% validation holdout per class
    std::vector<std::vector<std::size_t>> train_by_class(d.class_count);
    for (std::size_t c = 0; c < d.class_count; ++c) {
        rng.shuffle(by_class[c]);
        const std::size_t val_take = by_class[c].size() / 10;
        for (std::size_t i = 0; i < by_class[c].size(); ++i) {
            if (i < val_take)
                plan.val_indices.push_back(by_class[c][i]);
            else
                train_by_class[c].push_back(by_class[c][i]);
        }
    }

    // classes shuffled, then partitioned into T near-equal disjoint groups
    std::vector<std::size_t> class_order(d.class_count);
    for (std::size_t c = 0; c < d.class_count; ++c) class_order[c] = c;
    rng.shuffle(class_order);

    plan.experience_train.resize(T);
    const std::size_t base = d.class_count / T, extra = d.class_count % T;
    std::size_t pos = 0;
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t group = base + (t < extra ? 1 : 0);
        for (std::size_t k = 0; k < group; ++k) {
            const auto& idx = train_by_class[class_order[pos++]];
            plan.experience_train[t].insert(plan.experience_train[t].end(), idx.begin(), idx.end());
        }
        rng.shuffle(plan.experience_train[t]);
    }

    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t n = plan.experience_train[t].size();
        for (std::size_t off = 0; off < n; off += b_s)
            plan.schedule.push_back({t, off, std::min(b_s, n - off)});
    }
    return plan;
}

std::optional<Minibatch> next_minibatch(const Dataset& d, const StreamPlan& plan, StreamCursor& cur) {
    if (cur.next >= plan.schedule.size()) return std::nullopt;
    const StreamPlan::Batch& b = plan.schedule[cur.next];
    std::vector<std::size_t> rows(plan.experience_train[b.experience].begin() + static_cast<std::ptrdiff_t>(b.offset),
                                  plan.experience_train[b.experience].begin() +
                                      static_cast<std::ptrdiff_t>(b.offset + b.count));
    Minibatch mb;
    mb.x = d.gather(rows);
    mb.experience = b.experience;
    mb.index = cur.next;
    mb.last_of_experience =
        cur.next + 1 == plan.schedule.size() || plan.schedule[cur.next + 1].experience != b.experience;
    cur.next++;
    return mb;
}

namespace {

Tensor augment_once(const Tensor& x, const AugmentationPolicy& p, Rng& rng) {
    Tensor v = x;
    const std::size_t r = x.rows(), c = x.cols();
    for (std::size_t i = 0; i < r; ++i) {
        const double s = rng.uniform(1.0 - p.scale_jitter, 1.0 + p.scale_jitter);
        for (std::size_t j = 0; j < c; ++j) {
            double& val = v.data[i * c + j];
            val *= s;
            if (rng.uniform() < p.mask_fraction) val = 0.0;
            val += p.noise_sigma * rng.gaussian();
        }
    }
    return v;
}

}  // namespace

std::pair<Tensor, Tensor> make_views(const Tensor& x, const AugmentationPolicy& policy, Rng& rng) {
    Tensor x1 = augment_once(x, policy, rng);
    Tensor x2 = augment_once(x, policy, rng);
    return {std::move(x1), std::move(x2)};
}

IidSchedule::IidSchedule(const Dataset& d, std::vector<std::size_t> indices, std::size_t b,
                         std::size_t n_epochs, std::uint64_t seed)
    : data_(d), order_(std::move(indices)), b_(b), n_epochs_(n_epochs), rng_(Rng::mix(seed, 0x11D)) {
    if (b_ == 0 || b_ > order_.size())
        throw DimensionError("IidSchedule: batch size must be in [1, N]");
    rng_.shuffle(order_);
}

std::optional<Tensor> IidSchedule::next() {
    if (pos_ + b_ > order_.size()) {  // drop incomplete final batch, start next epoch
        epoch_++;
        if (epoch_ >= n_epochs_) return std::nullopt;
        rng_.shuffle(order_);
        pos_ = 0;
    }
    std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  order_.begin() + static_cast<std::ptrdiff_t>(pos_ + b_));
    pos_ += b_;
    return data_.gather(rows);
}

Dataset make_synthetic(std::size_t class_count, std::size_t per_class, std::size_t dim,
                       double cluster_sep, std::uint64_t seed) {
    if (class_count == 0 || per_class == 0 || dim == 0)
        throw DimensionError("make_synthetic: counts must be positive");
    if (dim < class_count)
        throw DimensionError("make_synthetic: need dim >= class_count for an orthonormal frame");

    Rng rng(Rng::mix(seed, 0x5D17));

    // orthonormal frame via twice-applied Gram-Schmidt
    std::vector<std::vector<double>> frame(class_count, std::vector<double>(dim));
    for (std::size_t c = 0; c < class_count; ++c) {
        for (double& v : frame[c]) v = rng.gaussian();
        for (int round = 0; round < 2; ++round) {
            for (std::size_t k = 0; k < c; ++k) {
                double dot = 0.0;
                for (std::size_t j = 0; j < dim; ++j) dot += frame[c][j] * frame[k][j];
                for (std::size_t j = 0; j < dim; ++j) frame[c][j] -= dot * frame[k][j];
            }
        }
        double norm = 0.0;
        for (double v : frame[c]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-8) throw DimensionError("make_synthetic: degenerate random frame");
        for (double& v : frame[c]) v /= norm;
    }

    const double mean_scale = cluster_sep / std::sqrt(2.0);
    Dataset d;
    d.dim = dim;
    d.class_count = class_count;
    d.inputs.reserve(class_count * per_class * dim);
    d.labels.reserve(class_count * per_class);
    for (std::size_t c = 0; c < class_count; ++c)
        for (std::size_t s = 0; s < per_class; ++s) {
            for (std::size_t j = 0; j < dim; ++j)
                d.inputs.push_back(mean_scale * frame[c][j] + rng.gaussian());
            d.labels.push_back(static_cast<int>(c));
        }
    d.validate();
    return d;
}

namespace {
constexpr char kDatasetMagic[8] = {'C', 'L', 'A', 'D', 'S', 'E', 'T', '1'};
}

void save_dataset(const Dataset& d, const std::string& path) {
    d.validate();
    binio::Writer w;
    w.u64(d.size());
    w.u64(d.dim);
    w.u64(d.class_count);
    w.f64_vec(d.inputs);
    w.u64(d.labels.size());
    for (int l : d.labels) w.i64(l);
    binio::write_file(path, kDatasetMagic, 1, w);
}

Dataset load_dataset(const std::string& path) {
    const auto payload = binio::read_file(path, kDatasetMagic, 1);
    binio::Reader r(payload);
    Dataset d;
    const std::uint64_t n = r.u64();
    d.dim = r.u64();
    d.class_count = r.u64();
    d.inputs = r.f64_vec();
    const std::uint64_t nl = r.u64();
    if (nl != n) throw IntegrityError("dataset: label count does not match header");
    d.labels.resize(nl);
    for (std::uint64_t i = 0; i < nl; ++i) d.labels[i] = static_cast<int>(r.i64());
    if (!r.done()) throw IntegrityError("dataset: trailing bytes");
    d.validate();
    return d;
}

}  // namespace cla::stream
