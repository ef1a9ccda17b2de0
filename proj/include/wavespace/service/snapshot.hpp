#pragma once

#include <array>
#include <atomic>
#include <cstdint>

namespace wavespace::service {

/// Triple buffer: one producer, one consumer, both sides wait-free.
/// The consumer always sees the most recently published complete value.
template <class T>
class SnapshotExchange {
public:
    SnapshotExchange() = default;
    explicit SnapshotExchange(const T& initial) : slots_{initial, initial, initial} {}

    SnapshotExchange(const SnapshotExchange&) = delete;
    SnapshotExchange& operator=(const SnapshotExchange&) = delete;

    /// Producer-owned slot to fill before publish().
    T& back() noexcept { return slots_[back_]; }

    void publish() noexcept
    {
        const std::uint8_t prev = middle_.exchange(static_cast<std::uint8_t>(back_ | fresh_bit),
                                                   std::memory_order_acq_rel);
        back_ = prev & index_mask;
    }

    /// Latest published value, or the previous one when nothing new arrived.
    const T& consume() noexcept
    {
        if (middle_.load(std::memory_order_relaxed) & fresh_bit) {
            const std::uint8_t prev = middle_.exchange(front_, std::memory_order_acq_rel);
            front_ = prev & index_mask;
        }
        return slots_[front_];
    }

    /// True when a publish happened since the last consume().
    bool has_fresh() const noexcept { return (middle_.load(std::memory_order_acquire) & fresh_bit) != 0; }

private:
    static constexpr std::uint8_t fresh_bit = 0x4;
    static constexpr std::uint8_t index_mask = 0x3;

    std::array<T, 3> slots_{};
    std::uint8_t back_ = 0;
    std::atomic<std::uint8_t> middle_{1};
    std::uint8_t front_ = 2;
};

} // namespace wavespace::service
