#pragma once

#include <cstddef>

#include "pnr/numerics.hpp"

namespace pnr {

// Default capacity at desk scale; the reference MoCo setting is 65536.
inline constexpr std::size_t kDefaultQueueCapacity = 1024;
inline constexpr std::size_t kPaperQueueCapacity = 65536;

// Fixed-capacity FIFO of unit-norm embedding rows, stored in a ring buffer.
class EmbeddingQueue {
public:
    EmbeddingQueue(std::size_t capacity, std::size_t dim);

    // Appends rows in batch order, evicting the oldest on overflow.
    // Throws DimMismatch on width mismatch, NormViolation on non-unit rows.
    void enqueue(const Matrix& batch);

    // len x dim copy, oldest row first.
    Matrix snapshot() const;

    void clear() noexcept;

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return len_; }
    bool empty() const noexcept { return len_ == 0; }

private:
    std::size_t capacity_;
    std::size_t dim_;
    Matrix buffer_;
    std::size_t head_ = 0;  // slot of the oldest row
    std::size_t len_ = 0;
};

}  // namespace pnr
