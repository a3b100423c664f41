#include "cla/replay.hpp"

#include <cmath>

#include "cla/errors.hpp"

namespace cla::replay {

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::fifo: return "fifo";
        case Policy::reservoir: return "reservoir";
        case Policy::minred: return "minred";
    }
    return "fifo";
}

Policy policy_from_name(const std::string& s) {
    if (s == "fifo") return Policy::fifo;
    if (s == "reservoir") return Policy::reservoir;
    if (s == "minred") return Policy::minred;
    throw UsageError("unknown buffer policy: " + s);
}

Buffer::Buffer(Policy policy, std::size_t capacity, bool store_features, std::uint64_t seed)
    : policy_(policy), capacity_(capacity), store_features_(store_features || policy == Policy::minred),
      rng_(seed) {
    if (capacity == 0) throw DimensionError("Buffer: capacity must be positive");
}

void Buffer::insert(const std::vector<double>& sample, const std::vector<double>* feature) {
    if (store_features_ && feature == nullptr)
        throw DimensionError("Buffer::insert: this policy stores features, none supplied");
    if (!store_features_ && feature != nullptr)
        throw DimensionError("Buffer::insert: feature supplied to a sample-only buffer");

    BufferEntry e;
    e.sample = sample;
    if (feature != nullptr) {
        e.feature = *feature;
        e.has_feature = true;
    }
    e.insert_seq = next_seq_++;

    switch (policy_) {
        case Policy::fifo:
            entries_.push_back(std::move(e));
            if (entries_.size() > capacity_) entries_.erase(entries_.begin());
            break;
        case Policy::reservoir: {
            stream_count_++;
            if (entries_.size() < capacity_) {
                entries_.push_back(std::move(e));
            } else {
                // item t replaces a uniform slot with probability capacity/t
                const std::size_t j = rng_.below(static_cast<std::size_t>(stream_count_));
                if (j < capacity_) entries_[j] = std::move(e);
            }
            break;
        }
        case Policy::minred:
            entries_.push_back(std::move(e));
            if (entries_.size() > capacity_) evict_minred();
            break;
    }
}

void Buffer::evict_minred() {
    const std::size_t n = entries_.size();
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        const double d = std::sqrt(na) * std::sqrt(nb);
        return d > 0.0 ? dot / d : 0.0;
    };
    std::size_t victim = 0;
    double worst = -2.0;
    for (std::size_t i = 0; i < n; ++i) {
        double maxsim = -2.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            maxsim = std::max(maxsim, cosine(entries_[i].feature, entries_[j].feature));
        }
        // ties broken toward the oldest entry
        if (maxsim > worst || (maxsim == worst && entries_[i].insert_seq < entries_[victim].insert_seq)) {
            worst = maxsim;
            victim = i;
        }
    }
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(victim));
}

std::vector<Buffer::Handle> Buffer::sample(std::size_t b_r) {
    std::vector<Handle> out;
    if (entries_.empty() || b_r == 0) return out;
    out.reserve(b_r);
    if (entries_.size() >= b_r) {
        // uniform without replacement: partial Fisher-Yates
        std::vector<std::size_t> idx(entries_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < b_r; ++i) {
            const std::size_t j = i + rng_.below(idx.size() - i);
            std::swap(idx[i], idx[j]);
            out.push_back(Handle{entries_[idx[i]].insert_seq});
        }
    } else {
        for (std::size_t i = 0; i < b_r; ++i) {
            const std::size_t j = rng_.below(entries_.size());
            out.push_back(Handle{entries_[j].insert_seq});
        }
    }
    return out;
}

const BufferEntry* Buffer::find_seq(std::uint64_t seq) const {
    if (entries_.empty()) return nullptr;
    if (policy_ == Policy::fifo) {
        // FIFO keeps consecutive insertion counters
        const std::uint64_t front = entries_.front().insert_seq;
        if (seq < front || seq >= front + entries_.size()) return nullptr;
        return &entries_[static_cast<std::size_t>(seq - front)];
    }
    for (const BufferEntry& e : entries_)
        if (e.insert_seq == seq) return &e;
    return nullptr;
}

BufferEntry* Buffer::find_seq(std::uint64_t seq) {
    return const_cast<BufferEntry*>(static_cast<const Buffer*>(this)->find_seq(seq));
}

const BufferEntry& Buffer::entry(const Handle& h) const {
    const BufferEntry* e = find_seq(h.seq);
    if (e == nullptr) throw DimensionError("Buffer::entry: stale handle");
    return *e;
}

bool Buffer::handle_valid(const Handle& h) const { return find_seq(h.seq) != nullptr; }

void Buffer::update_features(const std::vector<Handle>& handles,
                             const std::vector<std::vector<double>>& z_r1,
                             const std::vector<std::vector<double>>& z_r2) {
    if (handles.size() != z_r1.size() || handles.size() != z_r2.size())
        throw DimensionError("Buffer::update_features: handle/feature count mismatch");
    for (std::size_t i = 0; i < handles.size(); ++i) {
        BufferEntry* ep = find_seq(handles[i].seq);
        if (ep == nullptr) {
            stale_updates_++;
            continue;
        }
        BufferEntry& e = *ep;
        if (!e.has_feature) throw DimensionError("Buffer::update_features: entry stores no feature");
        if (e.feature.size() != z_r1[i].size() || e.feature.size() != z_r2[i].size())
            throw DimensionError("Buffer::update_features: feature width mismatch");
        for (std::size_t k = 0; k < e.feature.size(); ++k)
            e.feature[k] = 0.5 * e.feature[k] + 0.25 * z_r1[i][k] + 0.25 * z_r2[i][k];
    }
}

void Buffer::save(binio::Writer& w) const {
    w.u8(static_cast<std::uint8_t>(policy_));
    w.u64(capacity_);
    w.u8(store_features_ ? 1 : 0);
    w.u64(next_seq_);
    w.u64(stream_count_);
    w.u64(stale_updates_);
    w.str(rng_.serialize());
    w.u64(entries_.size());
    for (const BufferEntry& e : entries_) {
        w.f64_vec(e.sample);
        w.u8(e.has_feature ? 1 : 0);
        if (e.has_feature) w.f64_vec(e.feature);
        w.u64(e.insert_seq);
    }
}

Buffer Buffer::load(binio::Reader& r) {
    Buffer b;
    b.policy_ = static_cast<Policy>(r.u8());
    b.capacity_ = r.u64();
    b.store_features_ = r.u8() != 0;
    b.next_seq_ = r.u64();
    b.stream_count_ = r.u64();
    b.stale_updates_ = r.u64();
    b.rng_ = Rng::deserialize(r.str());
    const std::uint64_t n = r.u64();
    b.entries_.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        BufferEntry& e = b.entries_[i];
        e.sample = r.f64_vec();
        e.has_feature = r.u8() != 0;
        if (e.has_feature) e.feature = r.f64_vec();
        e.insert_seq = r.u64();
    }
    return b;
}

}  // namespace cla::replay
