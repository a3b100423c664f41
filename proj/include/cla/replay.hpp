#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cla/binio.hpp"
#include "cla/rng.hpp"

namespace cla::replay {

enum class Policy { fifo, reservoir, minred };

const char* policy_name(Policy p);
Policy policy_from_name(const std::string& s);

struct BufferEntry {
    std::vector<double> sample;
    std::vector<double> feature;  // z*, present only on feature-storing buffers
    bool has_feature = false;
    std::uint64_t insert_seq = 0;
};

/// Replay memory. FIFO evicts strictly by lowest insert_seq; reservoir
/// keeps a uniform sample of the stream; minred evicts the entry whose
/// maximum cosine similarity to any other stored feature is largest
/// (features refreshed lazily at insertion time). Sampling for rehearsal
/// is uniform: without replacement when enough entries exist, with
/// replacement during warm-up.
class Buffer {
public:
    /// Durable reference to an entry via its unique insertion counter;
    /// survives slot shuffling and detects eviction.
    struct Handle {
        std::uint64_t seq = 0;
    };

    Buffer() = default;
    Buffer(Policy policy, std::size_t capacity, bool store_features, std::uint64_t seed);

    void insert(const std::vector<double>& sample, const std::vector<double>* feature = nullptr);

    std::vector<Handle> sample(std::size_t b_r);

    const BufferEntry& entry(const Handle& h) const;
    bool handle_valid(const Handle& h) const;

    /// z* <- 0.5*z* + 0.25*z_r1 + 0.25*z_r2 per referenced entry; stale
    /// handles (entry evicted mid-step) are skipped and counted.
    void update_features(const std::vector<Handle>& handles,
                         const std::vector<std::vector<double>>& z_r1,
                         const std::vector<std::vector<double>>& z_r2);

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    Policy policy() const { return policy_; }
    bool stores_features() const { return store_features_; }
    std::uint64_t stale_update_count() const { return stale_updates_; }
    const std::vector<BufferEntry>& entries() const { return entries_; }

    void save(binio::Writer& w) const;
    static Buffer load(binio::Reader& r);

private:
    void evict_minred();
    const BufferEntry* find_seq(std::uint64_t seq) const;
    BufferEntry* find_seq(std::uint64_t seq);

    Policy policy_ = Policy::fifo;
    std::size_t capacity_ = 0;
    bool store_features_ = false;
    std::vector<BufferEntry> entries_;
    std::uint64_t next_seq_ = 0;
    std::uint64_t stream_count_ = 0;  // reservoir insertion attempts
    std::uint64_t stale_updates_ = 0;
    Rng rng_;
};

}  // namespace cla::replay
