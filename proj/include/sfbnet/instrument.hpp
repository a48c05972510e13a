#pragma once

#include <cstddef>
#include <cstdint>

namespace sfbnet {

/// Accumulates analytic FLOP counts reported by the ops executed while the
/// counter is alive. Counters nest; only the innermost one receives counts.
/// One multiply-accumulate counts as 2 FLOPs.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  double total() const noexcept { return total_; }

  static void record(double flops) noexcept;

 private:
  double total_ = 0.0;
  FlopCounter* previous_ = nullptr;
};

/// Per-thread accounting of bytes held by tensor storage and op scratch
/// buffers. Used to size benchmark batches against a memory budget.
namespace memory {

void allocate(std::size_t bytes) noexcept;
void release(std::size_t bytes) noexcept;
std::size_t live_bytes() noexcept;
std::size_t peak_bytes() noexcept;
/// Resets the peak to the current live size.
void reset_peak() noexcept;

/// RAII registration of a temporary buffer that is not tensor storage.
class ScratchReservation {
 public:
  explicit ScratchReservation(std::size_t bytes) noexcept : bytes_(bytes) { allocate(bytes_); }
  ~ScratchReservation() { release(bytes_); }
  ScratchReservation(const ScratchReservation&) = delete;
  ScratchReservation& operator=(const ScratchReservation&) = delete;

 private:
  std::size_t bytes_;
};

}  // namespace memory
}  // namespace sfbnet
