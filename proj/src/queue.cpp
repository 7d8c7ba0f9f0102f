#include "pnr/queue.hpp"

#include <algorithm>
#include <string>

#include "pnr/losses.hpp"

namespace pnr {

EmbeddingQueue::EmbeddingQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), buffer_(capacity, dim) {
    if (capacity == 0 || dim == 0)
        throw Error(ErrorCode::InvalidArgument, "queue capacity and dim must be >= 1");
}

void EmbeddingQueue::enqueue(const Matrix& batch) {
    if (batch.rows() == 0) return;
    if (batch.cols() != dim_) {
        throw Error(ErrorCode::DimMismatch, "queue dim " + std::to_string(dim_) + ", batch has " +
                                                std::to_string(batch.cols()) + " columns");
    }
    if (!rows_unit_norm(batch, kUnitNormTolerance))
        throw Error(ErrorCode::NormViolation, "queued rows must be unit norm");
    // Only the newest `capacity` rows can survive.
    const std::size_t skip = batch.rows() > capacity_ ? batch.rows() - capacity_ : 0;
    for (std::size_t r = skip; r < batch.rows(); ++r) {
        const std::size_t slot = (head_ + len_) % capacity_;
        const auto src = batch.row(r);
        std::copy(src.begin(), src.end(), buffer_.row(slot).begin());
        if (len_ < capacity_) {
            ++len_;
        } else {
            head_ = (head_ + 1) % capacity_;
        }
    }
}

Matrix EmbeddingQueue::snapshot() const {
    Matrix out(len_, dim_);
    for (std::size_t i = 0; i < len_; ++i) {
        const auto src = buffer_.row((head_ + i) % capacity_);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

void EmbeddingQueue::clear() noexcept {
    head_ = 0;
    len_ = 0;
}

}  // namespace pnr
