#include "sfbnet/instrument.hpp"

#include <algorithm>

namespace sfbnet {
namespace {
thread_local FlopCounter* active_counter = nullptr;
thread_local std::size_t live = 0;
thread_local std::size_t peak = 0;
}  // namespace

FlopCounter::FlopCounter() : previous_(active_counter) { active_counter = this; }

FlopCounter::~FlopCounter() { active_counter = previous_; }

void FlopCounter::record(double flops) noexcept {
  if (active_counter != nullptr) active_counter->total_ += flops;
}

namespace memory {

void allocate(std::size_t bytes) noexcept {
  live += bytes;
  peak = std::max(peak, live);
}

void release(std::size_t bytes) noexcept { live -= std::min(live, bytes); }

std::size_t live_bytes() noexcept { return live; }
std::size_t peak_bytes() noexcept { return peak; }
void reset_peak() noexcept { peak = live; }

}  // namespace memory
}  // namespace sfbnet
